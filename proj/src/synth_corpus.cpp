#include <algorithm>

#include "docdet/error.hpp"
#include "docdet/page_io.hpp"
#include "docdet/parallel.hpp"
#include "docdet/random.hpp"
#include "docdet/synthgen.hpp"

namespace docdet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json range_json(const Range& r) { return json::array({r.lo, r.hi}); }
json range_json(const IntRange& r) { return json::array({r.lo, r.hi}); }

template <typename R>
void read_range(const json& j, const char* key, R& r) {
    if (!j.contains(key)) return;
    const json& v = j.at(key);
    if (!v.is_array() || v.size() != 2) throw ConfigError(std::string("field '") + key + "' must be [lo, hi]");
    v.at(0).get_to(r.lo);
    v.at(1).get_to(r.hi);
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        try {
            j.at(key).get_to(out);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("field '") + key + "': " + e.what());
        }
    }
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
    for (const auto& [k, v] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
            throw ConfigError(std::string("unknown field '") + k + "' in " + where);
    }
}

std::string page_stem(size_t i) { return "page_" + std::to_string(i); }

}  // namespace

void to_json(json& j, const NoiseSpec& s) {
    j = {{"dot_density", s.dot_density},
         {"short_line_count_range", range_json(s.short_line_count)},
         {"blur_sigma_range", range_json(s.blur_sigma)},
         {"salt_pepper_prob", s.salt_pepper_prob},
         {"background_texture_strength", s.background_texture_strength},
         {"jpeg_artifact_quality_range", range_json(s.jpeg_quality)}};
}

void from_json(const json& j, NoiseSpec& s) {
    check_keys(j,
               {"dot_density", "short_line_count_range", "blur_sigma_range", "salt_pepper_prob",
                "background_texture_strength", "jpeg_artifact_quality_range"},
               "noise");
    read_opt(j, "dot_density", s.dot_density);
    read_range(j, "short_line_count_range", s.short_line_count);
    read_range(j, "blur_sigma_range", s.blur_sigma);
    read_opt(j, "salt_pepper_prob", s.salt_pepper_prob);
    read_opt(j, "background_texture_strength", s.background_texture_strength);
    read_range(j, "jpeg_artifact_quality_range", s.jpeg_quality);
}

void to_json(json& j, const DistortionSpec& s) {
    j = {{"max_rotation_deg", s.max_rotation_deg},
         {"max_perspective_jitter", s.max_perspective_jitter},
         {"elastic_strength", s.elastic_strength}};
}

void from_json(const json& j, DistortionSpec& s) {
    check_keys(j, {"max_rotation_deg", "max_perspective_jitter", "elastic_strength"}, "distortion");
    read_opt(j, "max_rotation_deg", s.max_rotation_deg);
    read_opt(j, "max_perspective_jitter", s.max_perspective_jitter);
    read_opt(j, "elastic_strength", s.elastic_strength);
}

void to_json(json& j, const SynthSpec& s) {
    json specials = json::array();
    for (char32_t c : s.special_chars) specials.push_back(to_utf8(c));
    j = {{"page_size", {s.width, s.height}},
         {"font_pool", {{"fonts", s.font_pool.fonts}, {"height_px_range", range_json(s.font_pool.height_px)}}},
         {"special_char_set", specials},
         {"separator_row_prob", s.separator_row_prob},
         {"rule_line_prob", s.rule_line_prob},
         {"bold_prob", s.bold_prob},
         {"bullet_prob", s.bullet_prob},
         {"isolated_special_prob", s.isolated_special_prob},
         {"word_gap_range", range_json(s.word_gap)},
         {"line_pitch_range", range_json(s.line_pitch)},
         {"ink_range", range_json(s.ink)},
         {"max_lines", s.max_lines},
         {"noise", s.noise},
         {"distortion", s.distortion},
         {"seed", s.seed}};
}

void from_json(const json& j, SynthSpec& s) {
    check_keys(j,
               {"page_size", "font_pool", "special_char_set", "separator_row_prob", "rule_line_prob", "bold_prob",
                "bullet_prob", "isolated_special_prob", "word_gap_range", "line_pitch_range", "ink_range",
                "max_lines", "noise", "distortion", "seed"},
               "synth spec");
    if (j.contains("page_size")) {
        const json& p = j.at("page_size");
        if (!p.is_array() || p.size() != 2) throw ConfigError("field 'page_size' must be [width, height]");
        p.at(0).get_to(s.width);
        p.at(1).get_to(s.height);
    }
    if (j.contains("font_pool")) {
        const json& f = j.at("font_pool");
        check_keys(f, {"fonts", "height_px_range"}, "font_pool");
        read_opt(f, "fonts", s.font_pool.fonts);
        read_range(f, "height_px_range", s.font_pool.height_px);
    }
    if (j.contains("special_char_set")) {
        s.special_chars.clear();
        for (const json& c : j.at("special_char_set")) {
            const std::u32string cp = from_utf8(c.get<std::string>());
            if (cp.size() != 1) throw ConfigError("special_char_set entries must be single characters");
            s.special_chars.insert(cp[0]);
        }
    }
    read_opt(j, "separator_row_prob", s.separator_row_prob);
    read_opt(j, "rule_line_prob", s.rule_line_prob);
    read_opt(j, "bold_prob", s.bold_prob);
    read_opt(j, "bullet_prob", s.bullet_prob);
    read_opt(j, "isolated_special_prob", s.isolated_special_prob);
    read_range(j, "word_gap_range", s.word_gap);
    read_range(j, "line_pitch_range", s.line_pitch);
    read_range(j, "ink_range", s.ink);
    read_opt(j, "max_lines", s.max_lines);
    if (j.contains("noise")) s.noise = j.at("noise").get<NoiseSpec>();
    if (j.contains("distortion")) s.distortion = j.at("distortion").get<DistortionSpec>();
    read_opt(j, "seed", s.seed);
}

std::uint64_t page_seed(const SynthSpec& spec, size_t index) {
    return Rng::mix(spec.seed ^ Rng::mix(static_cast<std::uint64_t>(index) + 0x5151u));
}

CorpusManifest write_corpus(const SynthSpec& spec, size_t count, const fs::path& out_dir, int workers) {
    spec.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    CorpusManifest manifest;
    manifest.generator_version = kGeneratorVersion;
    manifest.spec = spec;
    for (size_t i = 0; i < count; ++i)
        manifest.pages.push_back({page_stem(i) + ".png", page_stem(i) + ".json", page_seed(spec, i)});

    parallel_for(count, workers, [&](size_t i) {
        const PageSample page = generate_page(spec, manifest.pages[i].seed);
        write_image(out_dir / manifest.pages[i].image, page.image);
        write_annotations(out_dir / manifest.pages[i].annotation, page);
    });

    json pages = json::array();
    json seeds = json::array();
    for (const CorpusEntry& e : manifest.pages) {
        pages.push_back({{"image", e.image}, {"annotation", e.annotation}, {"seed", e.seed}});
        seeds.push_back(e.seed);
    }
    write_json_file(out_dir / "manifest.json", {{"generator_version", manifest.generator_version},
                                                {"spec", spec},
                                                {"count", count},
                                                {"seeds", seeds},
                                                {"pages", pages}});
    return manifest;
}

CorpusManifest read_manifest(const fs::path& dir) {
    const fs::path path = dir / "manifest.json";
    const json j = read_json_file(path);
    CorpusManifest m;
    try {
        m.generator_version = j.at("generator_version").get<std::string>();
        m.spec = j.at("spec").get<SynthSpec>();
        for (const json& p : j.at("pages"))
            m.pages.push_back({p.at("image").get<std::string>(), p.at("annotation").get<std::string>(),
                               p.at("seed").get<std::uint64_t>()});
    } catch (const json::exception& e) {
        throw IoError("bad manifest " + path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw IoError("bad manifest " + path.string() + ": " + e.what());
    }
    return m;
}

std::vector<PageSample> load_corpus(const fs::path& dir) {
    const CorpusManifest m = read_manifest(dir);
    std::vector<PageSample> pages;
    pages.reserve(m.pages.size());
    for (const CorpusEntry& e : m.pages) pages.push_back(read_page(dir / e.image, dir / e.annotation));
    return pages;
}

}  // namespace docdet
