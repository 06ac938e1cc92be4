#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "docdet/geometry.hpp"
#include "docdet/grid.hpp"

namespace docdet {

struct CharAnnotation {
    Box box;
    char32_t codepoint = U' ';
    int word_id = 0;
    bool is_special = false;

    friend bool operator==(const CharAnnotation&, const CharAnnotation&) = default;
};

/// Chars sharing a word_id, in the order they appear in the page's char list (reading order).
struct Word {
    int id = 0;
    std::vector<size_t> char_indices;
    Box box;
    /// True when at least one member char is not special. Only regular words are detection targets.
    bool regular = false;
};

/// A page image with character-level ground truth.
struct PageSample {
    Image image;
    std::vector<CharAnnotation> chars;

    int width() const { return image.width(); }
    int height() const { return image.height(); }

    /// Groups chars by word_id, ordered by first appearance.
    std::vector<Word> words() const;
    /// Boxes of regular words, the detection ground truth.
    std::vector<Box> regular_word_boxes() const;
    /// Checks the PageSample invariants (boxes in bounds, valid boxes, non-negative word ids).
    bool valid() const;
};

using CharSet = std::set<char32_t>;

/// - _ * | = ~ . : , ; • /
CharSet default_special_chars();

std::string to_utf8(char32_t cp);
std::string to_utf8(std::u32string_view s);
/// Throws IoError on malformed input.
std::u32string from_utf8(std::string_view s);

}  // namespace docdet
