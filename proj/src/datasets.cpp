#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "docdet/error.hpp"
#include "docdet/evaluation.hpp"
#include "docdet/page.hpp"
#include "docdet/page_io.hpp"
#include "docdet/synthgen.hpp"

namespace docdet {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<fs::path> files_with_extension(const fs::path& dir, const std::string& ext) {
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

fs::path first_existing(const std::vector<fs::path>& candidates) {
    for (const auto& p : candidates)
        if (fs::exists(p)) return p;
    return candidates.front();
}

Box box_from_json(const json& b, const fs::path& file) {
    if (!b.is_array() || b.size() != 4) throw IoError(file.string() + ": word box must have 4 numbers");
    return {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
}

std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

}  // namespace

std::vector<GroundTruthPage> load_funsd(const fs::path& dir) {
    const fs::path ann_dir = fs::is_directory(dir / "annotations") ? dir / "annotations" : dir;
    std::vector<GroundTruthPage> pages;
    for (const fs::path& file : files_with_extension(ann_dir, ".json")) {
        GroundTruthPage page;
        const std::string stem = file.stem().string();
        page.image = first_existing({dir / "images" / (stem + ".png"), ann_dir / (stem + ".png"),
                                     dir / "images" / (stem + ".jpg"), ann_dir / (stem + ".jpg")});
        std::ifstream in(file);
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (!trim(text).empty()) {
            json j;
            try {
                j = json::parse(text);
                for (const json& entity : j.at("form"))
                    for (const json& w : entity.value("words", json::array())) {
                        page.boxes.push_back(box_from_json(w.at("box"), file));
                        page.transcriptions.push_back(w.value("text", std::string()));
                    }
            } catch (const json::exception& e) {
                throw IoError("malformed FUNSD annotation " + file.string() + ": " + e.what());
            }
        }
        pages.push_back(std::move(page));
    }
    return pages;
}

GroundTruthPage parse_sroie_file(const fs::path& txt, SroieGranularity granularity) {
    std::ifstream in(txt, std::ios::binary);
    if (!in) throw IoError("cannot open " + txt.string());
    GroundTruthPage page;
    const fs::path dir = txt.parent_path();
    const std::string stem = txt.stem().string();
    page.image = first_existing({dir / (stem + ".jpg"), dir / (stem + ".png")});
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1 && line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        double coords[8];
        size_t pos = 0;
        for (int k = 0; k < 8; ++k) {
            const size_t comma = line.find(',', pos);
            if (comma == std::string::npos)
                throw IoError(txt.string() + ":" + std::to_string(line_no) + ": expected 8 coordinates");
            const std::string field = trim(line.substr(pos, comma - pos));
            const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), coords[k]);
            if (ec != std::errc() || ptr != field.data() + field.size() || field.empty())
                throw IoError(txt.string() + ":" + std::to_string(line_no) + ": coordinate '" + field +
                              "' is not a number");
            pos = comma + 1;
        }
        const std::string text = line.substr(pos);
        Quad q;
        for (int k = 0; k < 4; ++k) q.corners[static_cast<size_t>(k)] = {coords[2 * k], coords[2 * k + 1]};
        const Box box = quad_to_box(q);
        if (granularity == SroieGranularity::Line) {
            page.boxes.push_back(box);
            page.transcriptions.push_back(text);
            continue;
        }
        // Words get horizontal shares proportional to their character offsets in the line.
        const std::u32string chars = from_utf8(text);
        const double per_char = chars.empty() ? 0.0 : box.width() / static_cast<double>(chars.size());
        size_t i = 0;
        while (i < chars.size()) {
            while (i < chars.size() && (chars[i] == U' ' || chars[i] == U'\t')) ++i;
            const size_t start = i;
            while (i < chars.size() && chars[i] != U' ' && chars[i] != U'\t') ++i;
            if (i == start) break;
            page.boxes.push_back({box.x0 + per_char * static_cast<double>(start), box.y0,
                                  box.x0 + per_char * static_cast<double>(i), box.y1});
            page.transcriptions.push_back(to_utf8(chars.substr(start, i - start)));
        }
    }
    return page;
}

std::vector<GroundTruthPage> load_sroie(const fs::path& dir, SroieGranularity granularity) {
    std::vector<GroundTruthPage> pages;
    for (const fs::path& txt : files_with_extension(dir, ".txt")) pages.push_back(parse_sroie_file(txt, granularity));
    return pages;
}

std::vector<GroundTruthPage> load_synth(const fs::path& dir) {
    const CorpusManifest manifest = read_manifest(dir);
    std::vector<GroundTruthPage> pages;
    for (const CorpusEntry& e : manifest.pages) {
        const json ann = read_json_file(dir / e.annotation);
        PageSample sample;
        annotations_from_json(ann, sample);
        GroundTruthPage page;
        page.image = dir / e.image;
        for (const Word& w : sample.words()) {
            if (!w.regular) continue;
            std::u32string text;
            for (size_t k : w.char_indices) text += sample.chars[k].codepoint;
            page.boxes.push_back(w.box);
            page.transcriptions.push_back(to_utf8(text));
        }
        pages.push_back(std::move(page));
    }
    return pages;
}

json ground_truth_to_json(const std::vector<GroundTruthPage>& pages) {
    json out = json::array();
    for (const GroundTruthPage& p : pages) {
        json words = json::array();
        for (size_t i = 0; i < p.boxes.size(); ++i) {
            json w = {{"box", {p.boxes[i].x0, p.boxes[i].y0, p.boxes[i].x1, p.boxes[i].y1}}};
            if (!p.transcriptions.empty()) w["text"] = p.transcriptions[i];
            words.push_back(std::move(w));
        }
        out.push_back({{"image", p.image.string()}, {"words", std::move(words)}});
    }
    return {{"pages", std::move(out)}};
}

std::vector<GroundTruthPage> ground_truth_from_json(const json& j) {
    std::vector<GroundTruthPage> pages;
    try {
        for (const json& p : j.at("pages")) {
            GroundTruthPage page;
            page.image = p.at("image").get<std::string>();
            bool any_text = false;
            for (const json& w : p.at("words")) {
                const json& b = w.at("box");
                page.boxes.push_back({b.at(0), b.at(1), b.at(2), b.at(3)});
                page.transcriptions.push_back(w.value("text", std::string()));
                any_text = any_text || w.contains("text");
            }
            if (!any_text) page.transcriptions.clear();
            pages.push_back(std::move(page));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("malformed ground-truth JSON: ") + e.what());
    }
    return pages;
}

}  // namespace docdet
