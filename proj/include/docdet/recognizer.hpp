#pragma once

#include <string>
#include <vector>

#include "docdet/evaluation.hpp"

namespace docdet {

/// Nearest-template recognizer for clean synthetic pages drawn with Hershey fonts.
/// A crop is split into glyphs at ink-free columns; each glyph's ink box, padded to a square,
/// is compared against rendered printable-ASCII templates.
class TemplateRecognizer : public Recognizer {
public:
    /// `fonts` are FontPool face names. Throws ConfigError on an unknown face.
    explicit TemplateRecognizer(const std::vector<std::string>& fonts = {"simplex", "duplex", "complex", "triplex",
                                                                          "plain", "simplex_italic"},
                                double ink_threshold = 0.5);

    std::string recognize(const Image& crop) const override;
    size_t template_count() const { return templates_.size(); }

    static constexpr int kCell = 12;

private:
    struct Template {
        char code = ' ';
        std::vector<float> shape;  // kCell * kCell
    };
    std::vector<Template> templates_;
    double ink_threshold_;
};

}  // namespace docdet
