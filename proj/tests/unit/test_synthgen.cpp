#include <cmath>
#include <filesystem>
#include <numbers>

#include <gtest/gtest.h>
#include <opencv2/imgproc.hpp>

#include "docdet/error.hpp"
#include "docdet/page_io.hpp"
#include "docdet/synthgen.hpp"
#include "test_util.hpp"

using namespace docdet;

namespace {

SynthSpec clean_spec(int w = 256, int h = 256) {
    SynthSpec s;
    s.width = w;
    s.height = h;
    return s;
}

bool is_separator_word(const PageSample& p, const Word& w) {
    if (w.regular || w.char_indices.size() < 3) return false;
    const char32_t c = p.chars[w.char_indices.front()].codepoint;
    for (size_t k : w.char_indices)
        if (p.chars[k].codepoint != c) return false;
    return true;
}

// Ink bounds of a glyph drawn alone on a blank canvas, in page coordinates, plus its ink pixel list.
struct Isolated {
    Box box;
    std::vector<cv::Point> ink;
};

Isolated render_alone(const GlyphRender& g) {
    const std::string text(1, static_cast<char>(g.codepoint));
    int baseline = 0;
    const cv::Size sz = cv::getTextSize(text, g.font_face, g.font_scale, g.thickness, &baseline);
    const int pad = 4 * (sz.height + g.thickness);
    cv::Mat canvas(sz.height + baseline + 2 * pad, sz.width + 2 * pad, CV_8U, cv::Scalar(0));
    const cv::Point org(pad, pad + sz.height);
    cv::putText(canvas, text, org, g.font_face, g.font_scale, cv::Scalar(255), g.thickness, cv::LINE_AA);
    Isolated out;
    cv::findNonZero(canvas, out.ink);
    const cv::Rect r = cv::boundingRect(out.ink);
    const int dx = g.origin_x - org.x, dy = g.origin_y - org.y;
    for (auto& p : out.ink) p += cv::Point(dx, dy);
    out.box = {double(r.x + dx), double(r.y + dy), double(r.x + r.width + dx), double(r.y + r.height + dy)};
    return out;
}

}  // namespace

TEST(SynthSpec, Validation) {
    SynthSpec s;
    EXPECT_NO_THROW(s.validate());
    s.width = 32;
    EXPECT_THROW(s.validate(), ConfigError);
    s = SynthSpec{};
    s.separator_row_prob = 1.5;
    EXPECT_THROW(s.validate(), ConfigError);
    s = SynthSpec{};
    s.font_pool.fonts = {"no_such_font"};
    try {
        s.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("no_such_font"), std::string::npos);
    }
    s = SynthSpec{};
    s.font_pool.fonts.clear();
    EXPECT_THROW(s.validate(), ConfigError);
    s = SynthSpec{};
    s.noise.blur_sigma = {2.0, 1.0};
    EXPECT_THROW(s.validate(), ConfigError);
}

TEST(GeneratePage, Deterministic) {
    SynthSpec s = clean_spec();
    s.noise.dot_density = 300;
    s.distortion.max_rotation_deg = 2;
    const PageSample a = generate_page(s, 17), b = generate_page(s, 17);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.chars, b.chars);
    const PageSample c = generate_page(s, 18);
    EXPECT_NE(a.image, c.image);
}

TEST(GeneratePage, InvariantsOverSeeds) {
    SynthSpec s = clean_spec();
    s.noise.dot_density = 200;
    s.noise.blur_sigma = {0.0, 0.8};
    s.distortion.max_rotation_deg = 3;
    s.distortion.max_perspective_jitter = 0.02;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const PageSample p = generate_page(s, seed);
        EXPECT_TRUE(p.valid());
        EXPECT_EQ(p.width(), 256);
        EXPECT_GE(p.image.min_value(), 0.0f);
        EXPECT_LE(p.image.max_value(), 1.0f);
        for (const CharAnnotation& c : p.chars) EXPECT_EQ(c.is_special, s.special_chars.contains(c.codepoint));
        for (const Word& w : p.words()) EXPECT_FALSE(w.char_indices.empty());
    }
}

TEST(GeneratePage, ForcedSeparatorRow) {
    SynthSpec s = clean_spec();
    s.separator_row_prob = 1.0;
    s.max_lines = 1;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const PageSample p = generate_page(s, seed);
        int separators = 0, regular = 0;
        for (const Word& w : p.words()) {
            separators += is_separator_word(p, w);
            regular += w.regular;
        }
        EXPECT_GE(separators, 1);
        EXPECT_GE(regular, 1);
        // Separator chars share their word only among themselves.
        for (const Word& w : p.words())
            if (is_separator_word(p, w))
                for (size_t k : w.char_indices) EXPECT_TRUE(p.chars[k].is_special);
    }
}

TEST(GeneratePage, GlyphBoxesMatchIsolatedRender) {
    const SynthSpec s = clean_spec(320, 320);
    double total_err = 0.0;
    size_t n = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const TracedPage t = generate_page_traced(s, seed);
        ASSERT_EQ(t.glyphs.size(), t.page.chars.size());
        for (size_t i = 0; i < t.glyphs.size(); ++i) {
            const GlyphRender& g = t.glyphs[i];
            const Box& box = t.page.chars[i].box;
            EXPECT_EQ(g.codepoint, t.page.chars[i].codepoint);
            if (g.is_bullet) continue;
            const Isolated iso = render_alone(g);
            const Box expect = clip_box(iso.box, s.width, s.height);
            total_err += std::abs(expect.x0 - box.x0) + std::abs(expect.y0 - box.y0) + std::abs(expect.x1 - box.x1) +
                         std::abs(expect.y1 - box.y1);
            n += 4;
            size_t inside = 0;
            for (const cv::Point& p : iso.ink) inside += box.contains({p.x + 0.5, p.y + 0.5});
            EXPECT_GE(static_cast<double>(inside), 0.95 * static_cast<double>(iso.ink.size()));
        }
    }
    ASSERT_GT(n, 0u);
    EXPECT_LE(total_err / static_cast<double>(n), 1.0);
}

TEST(GeneratePage, ProbabilitiesHonoredInExpectation) {
    SynthSpec s = clean_spec(256, 512);
    s.max_lines = 3;
    s.separator_row_prob = 0.5;
    s.bullet_prob = 0.5;
    const int pages = 60;
    int separators = 0, bullets = 0, lines = 0;
    for (int seed = 0; seed < pages; ++seed) {
        const PageSample p = generate_page(s, static_cast<std::uint64_t>(seed));
        for (const Word& w : p.words()) separators += is_separator_word(p, w);
        for (const CharAnnotation& c : p.chars) bullets += c.codepoint == U'•';
        lines += 3;
    }
    const double p = 0.5, sd = std::sqrt(lines * p * (1 - p));
    EXPECT_NEAR(separators, lines * p, 3 * sd);
    EXPECT_NEAR(bullets, lines * p, 3 * sd);
}

TEST(ApplyNoise, ZeroSpecIsIdentity) {
    const PageSample p = generate_page(clean_spec(), 3);
    const PageSample q = apply_noise(p, NoiseSpec{}, 99);
    EXPECT_EQ(p.image, q.image);
    EXPECT_EQ(p.chars, q.chars);
}

TEST(ApplyNoise, ClampsAndKeepsAnnotations) {
    const PageSample p = generate_page(clean_spec(), 4);
    NoiseSpec n;
    n.dot_density = 5000;
    n.short_line_count = {3, 8};
    n.blur_sigma = {0.5, 1.5};
    n.salt_pepper_prob = 0.05;
    n.background_texture_strength = 1.0;
    n.jpeg_quality = {20, 60};
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const PageSample q = apply_noise(p, n, seed);
        EXPECT_EQ(q.chars, p.chars);
        EXPECT_GE(q.image.min_value(), 0.0f);
        EXPECT_LE(q.image.max_value(), 1.0f);
        EXPECT_NE(q.image, p.image);
    }
}

TEST(ApplyNoise, DotCountIsPoisson) {
    // Sparse dots on a blank page: each dot is one small connected blob.
    PageSample blank;
    blank.image = Image(512, 512, 1.0f);
    NoiseSpec n;
    n.dot_density = 200.0;
    const double lambda = n.dot_density * 512 * 512 / 1e6;
    const int seeds = 50;
    double blobs = 0;
    for (int seed = 0; seed < seeds; ++seed) {
        const PageSample q = apply_noise(blank, n, static_cast<std::uint64_t>(seed));
        blobs += static_cast<double>(test::count_blobs(q.image, 1.0f));
    }
    EXPECT_NEAR(blobs, seeds * lambda, 3 * std::sqrt(seeds * lambda));
}

TEST(ApplyDistortion, ZeroSpecIsIdentity) {
    const PageSample p = generate_page(clean_spec(), 5);
    const PageSample q = apply_distortion(p, DistortionSpec{}, 1);
    EXPECT_EQ(p.image, q.image);
    EXPECT_EQ(p.chars, q.chars);
}

TEST(ApplyDistortion, BoxesStayInBounds) {
    const PageSample p = generate_page(clean_spec(), 6);
    DistortionSpec d;
    d.max_rotation_deg = 15;
    d.max_perspective_jitter = 0.08;
    d.elastic_strength = 0.5;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const PageSample q = apply_distortion(p, d, seed);
        EXPECT_TRUE(q.valid());
        for (const CharAnnotation& c : q.chars) {
            EXPECT_GE(c.box.x0, 0.0);
            EXPECT_GE(c.box.y0, 0.0);
            EXPECT_LE(c.box.x1, 256.0);
            EXPECT_LE(c.box.y1, 256.0);
        }
    }
}

TEST(WarpPage, QuarterTurnMovesBoxesByTheSameRotation) {
    const PageSample p = generate_page(clean_spec(), 7);
    const Homography h = Homography::rotation(std::numbers::pi / 2, {128, 128});
    const PageSample q = warp_page(p, h);
    ASSERT_EQ(q.chars.size(), p.chars.size());
    for (size_t i = 0; i < p.chars.size(); ++i) {
        const Box want = clip_box(transform_box(p.chars[i].box, h), 256, 256);
        EXPECT_NEAR(q.chars[i].box.x0, want.x0, 1e-9);
        EXPECT_NEAR(q.chars[i].box.y0, want.y0, 1e-9);
        EXPECT_NEAR(q.chars[i].box.x1, want.x1, 1e-9);
        EXPECT_NEAR(q.chars[i].box.y1, want.y1, 1e-9);
    }
    // The image rotates too: ink inside a rotated char box.
    size_t dark = 0;
    for (const CharAnnotation& c : q.chars) {
        float mn = 1.0f;
        for (int y = int(c.box.y0); y < int(std::ceil(c.box.y1)); ++y)
            for (int x = int(c.box.x0); x < int(std::ceil(c.box.x1)); ++x) mn = std::min(mn, q.image(x, y));
        dark += mn < 0.6f;
    }
    EXPECT_GE(static_cast<double>(dark), 0.95 * static_cast<double>(q.chars.size()));
}

TEST(Corpus, WriteAndReload) {
    test::TempDir dir;
    SynthSpec s = clean_spec();
    s.noise.dot_density = 100;
    const CorpusManifest m = write_corpus(s, 3, dir.path(), 2);
    ASSERT_EQ(m.pages.size(), 3u);
    for (const auto& e : m.pages) {
        EXPECT_TRUE(std::filesystem::exists(dir.path() / e.image));
        EXPECT_TRUE(std::filesystem::exists(dir.path() / e.annotation));
    }
    const CorpusManifest back = read_manifest(dir.path());
    ASSERT_EQ(back.pages.size(), 3u);
    EXPECT_EQ(back.pages[1].seed, page_seed(s, 1));
    const std::vector<PageSample> pages = load_corpus(dir.path());
    ASSERT_EQ(pages.size(), 3u);
    for (size_t i = 0; i < 3; ++i) {
        const PageSample mem = generate_page(s, page_seed(s, i));
        ASSERT_EQ(pages[i].chars.size(), mem.chars.size());
        for (size_t k = 0; k < mem.chars.size(); ++k) {
            EXPECT_NEAR(pages[i].chars[k].box.x0, mem.chars[k].box.x0, 0.5);
            EXPECT_NEAR(pages[i].chars[k].box.y1, mem.chars[k].box.y1, 0.5);
            EXPECT_EQ(pages[i].chars[k].codepoint, mem.chars[k].codepoint);
            EXPECT_EQ(pages[i].chars[k].word_id, mem.chars[k].word_id);
        }
        for (int y = 0; y < 256; y += 7)
            for (int x = 0; x < 256; x += 7) EXPECT_NEAR(pages[i].image(x, y), mem.image(x, y), 0.5 / 255 + 1e-6);
    }
}

TEST(Corpus, EmptyAndSingleWorkerMatchParallel) {
    test::TempDir a, b, empty;
    const SynthSpec s = clean_spec();
    EXPECT_TRUE(write_corpus(s, 0, empty.path()).pages.empty());
    EXPECT_TRUE(read_manifest(empty.path()).pages.empty());
    write_corpus(s, 3, a.path(), 1);
    write_corpus(s, 3, b.path(), 3);
    const auto pa = load_corpus(a.path()), pb = load_corpus(b.path());
    for (size_t i = 0; i < 3; ++i) {
        EXPECT_EQ(pa[i].image, pb[i].image);
        EXPECT_EQ(pa[i].chars, pb[i].chars);
    }
}

TEST(Corpus, SpecJsonRoundTrip) {
    SynthSpec s;
    s.width = 300;
    s.noise.dot_density = 12.5;
    s.noise.jpeg_quality = {30, 70};
    s.distortion.max_rotation_deg = 4;
    s.font_pool.fonts = {"plain", "triplex_italic"};
    const nlohmann::json j = s;
    const SynthSpec back = j.get<SynthSpec>();
    EXPECT_EQ(nlohmann::json(back), j);
    nlohmann::json bad = j;
    bad["unknown_field"] = 1;
    EXPECT_THROW((void)bad.get<SynthSpec>(), ConfigError);
}
