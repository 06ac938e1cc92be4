#include <gtest/gtest.h>

#include "docdet/error.hpp"
#include "docdet/recognizer.hpp"
#include "docdet/synthgen.hpp"

using namespace docdet;

TEST(TemplateRecognizer, TemplateCount) {
    // 94 printable characters x 2 scales x 2 thicknesses per face.
    EXPECT_EQ(TemplateRecognizer().template_count(), 94u * 4 * 6);
    EXPECT_EQ(TemplateRecognizer({"simplex"}).template_count(), 94u * 4);
    EXPECT_THROW(TemplateRecognizer({"comic_sans"}), ConfigError);
}

TEST(TemplateRecognizer, BlankCropIsEmpty) {
    const TemplateRecognizer rec;
    EXPECT_EQ(rec.recognize(Image(30, 15, 1.0f)), "");
    EXPECT_EQ(rec.recognize(Image()), "");
}

TEST(TemplateRecognizer, ReadsCleanSyntheticWords) {
    const TemplateRecognizer rec;
    SynthSpec spec;
    spec.width = spec.height = 320;
    std::vector<std::string> got, want;
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const PageSample p = generate_page(spec, seed);
        for (const Word& w : p.words()) {
            if (!w.regular) continue;
            std::u32string text;
            for (size_t k : w.char_indices) text += p.chars[k].codepoint;
            if (text.find(U'•') != std::u32string::npos) continue;
            const Box b = w.box;
            got.push_back(rec.recognize(crop(p.image, {b.x0 - 1, b.y0 - 1, b.x1 + 1, b.y1 + 1})));
            want.push_back(to_utf8(text));
        }
    }
    ASSERT_GT(got.size(), 50u);
    EXPECT_GE(edit_score(got, want), 0.75);
}
