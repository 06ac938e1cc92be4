#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docdet/geometry.hpp"
#include "docdet/page.hpp"

namespace docdet {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct IntRange {
    int lo = 0;
    int hi = 0;
};

/// Scan-noise parameters. A default-constructed NoiseSpec adds no noise.
struct NoiseSpec {
    double dot_density = 0.0;  // dots per megapixel
    IntRange short_line_count;
    Range blur_sigma;  // pixels
    double salt_pepper_prob = 0.0;
    double background_texture_strength = 0.0;
    IntRange jpeg_quality;  // hi == 0 disables re-encoding
};

/// Spatial distortion bounds. A default-constructed DistortionSpec is the identity.
struct DistortionSpec {
    double max_rotation_deg = 0.0;
    double max_perspective_jitter = 0.0;  // fraction of page size
    double elastic_strength = 0.0;        // [0,1]
};

struct FontPool {
    /// Hershey face names: simplex, plain, duplex, complex, triplex, complex_small,
    /// script_simplex, script_complex; append "_italic" for the slanted variant.
    std::vector<std::string> fonts{"simplex", "duplex", "complex", "triplex", "plain", "simplex_italic"};
    Range height_px{8.0, 13.0};  // cap height
};

struct SynthSpec {
    int width = 256;
    int height = 256;
    FontPool font_pool;
    CharSet special_chars = default_special_chars();
    /// Probability of a separator row ("-----") after each text line.
    double separator_row_prob = 0.15;
    /// Probability of a graphical rule line in the gap after each line.
    double rule_line_prob = 0.15;
    double bold_prob = 0.2;
    /// Probability that a text line starts with a bullet glyph.
    double bullet_prob = 0.1;
    /// Probability of a standalone special character ("|", "*", "/") between two words.
    double isolated_special_prob = 0.05;
    Range word_gap{0.7, 1.3};      // multiples of cap height
    Range line_pitch{2.2, 2.8};    // baseline-to-baseline, multiples of cap height
    Range ink{0.0, 0.3};           // ink intensity
    int max_lines = 0;             // 0 fills the page
    NoiseSpec noise;
    DistortionSpec distortion;
    std::uint64_t seed = 0;

    /// Throws ConfigError naming the first invalid field.
    void validate() const;
};

/// How one glyph was drawn before distortion; lets tests re-rasterize glyphs in isolation.
struct GlyphRender {
    char32_t codepoint = U' ';
    int font_face = 0;  // OpenCV Hershey face flags
    double font_scale = 1.0;
    int thickness = 1;
    int origin_x = 0;  // baseline origin in page pixels
    int origin_y = 0;
    bool is_bullet = false;  // drawn as a filled disc, not text
    int bullet_radius = 0;
};

struct TracedPage {
    PageSample page;
    std::vector<GlyphRender> glyphs;  // parallel to page.chars when no distortion dropped chars
};

/// Maps a face name from FontPool to OpenCV flags; throws ConfigError naming the font.
int resolve_font(const std::string& name);

/// Deterministic in (spec, seed): layout, rendering, distortion, then noise.
PageSample generate_page(const SynthSpec& spec, std::uint64_t seed);
TracedPage generate_page_traced(const SynthSpec& spec, std::uint64_t seed);

/// Warps the image by a sampled homography plus optional elastic field and moves boxes accordingly.
PageSample apply_distortion(const PageSample& page, const DistortionSpec& d, std::uint64_t seed);
/// Warps image and boxes by a fixed homography. Boxes become the clipped bounds of their moved corners;
/// chars pushed entirely off the page are dropped.
PageSample warp_page(const PageSample& page, const Homography& h);

PageSample apply_noise(const PageSample& page, const NoiseSpec& n, std::uint64_t seed);

struct CorpusEntry {
    std::string image;       // file name relative to the corpus directory
    std::string annotation;  // file name relative to the corpus directory
    std::uint64_t seed = 0;
};

struct CorpusManifest {
    std::string generator_version;
    SynthSpec spec;
    std::vector<CorpusEntry> pages;
};

/// Seed of page `index` in a corpus generated from `spec`.
std::uint64_t page_seed(const SynthSpec& spec, size_t index);

/// Writes page_{i}.png, page_{i}.json and manifest.json. `workers` > 1 renders pages in parallel.
CorpusManifest write_corpus(const SynthSpec& spec, size_t count, const std::filesystem::path& out_dir,
                            int workers = 1);
CorpusManifest read_manifest(const std::filesystem::path& dir);
/// Loads every page listed in the directory's manifest.
std::vector<PageSample> load_corpus(const std::filesystem::path& dir);

void to_json(nlohmann::json& j, const SynthSpec& s);
void from_json(const nlohmann::json& j, SynthSpec& s);
void to_json(nlohmann::json& j, const NoiseSpec& s);
void from_json(const nlohmann::json& j, NoiseSpec& s);
void to_json(nlohmann::json& j, const DistortionSpec& s);
void from_json(const nlohmann::json& j, DistortionSpec& s);

inline constexpr const char* kGeneratorVersion = "docdet-synth/1";

}  // namespace docdet
