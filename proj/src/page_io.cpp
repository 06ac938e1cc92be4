#include "docdet/page_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "docdet/error.hpp"

namespace docdet {

namespace fs = std::filesystem;
using nlohmann::json;

Image read_image(const fs::path& path) {
    const cv::Mat m = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw IoError("cannot read image: " + path.string());
    Image img(m.cols, m.rows);
    for (int y = 0; y < m.rows; ++y) {
        const auto* src = m.ptr<std::uint8_t>(y);
        auto dst = img.row(y);
        for (int x = 0; x < m.cols; ++x) dst[x] = static_cast<float>(src[x]) / 255.0f;
    }
    return img;
}

void write_image(const fs::path& path, const Image& image) {
    cv::Mat m(image.height(), image.width(), CV_8U);
    for (int y = 0; y < image.height(); ++y) {
        auto* dst = m.ptr<std::uint8_t>(y);
        const auto src = image.row(y);
        for (int x = 0; x < image.width(); ++x)
            dst[x] = static_cast<std::uint8_t>(std::lround(std::clamp(src[x], 0.0f, 1.0f) * 255.0f));
    }
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), m);
    } catch (const cv::Exception&) {
        ok = false;
    }
    if (!ok) throw IoError("cannot write image: " + path.string());
}

json annotations_to_json(const PageSample& page) {
    json chars = json::array();
    for (const CharAnnotation& c : page.chars) {
        chars.push_back({{"box", {c.box.x0, c.box.y0, c.box.x1, c.box.y1}},
                         {"cp", to_utf8(c.codepoint)},
                         {"word", c.word_id},
                         {"special", c.is_special}});
    }
    return {{"chars", chars}, {"width", page.width()}, {"height", page.height()}};
}

void annotations_from_json(const json& j, PageSample& page) {
    page.chars.clear();
    for (const json& c : j.at("chars")) {
        const auto& b = c.at("box");
        if (!b.is_array() || b.size() != 4) throw IoError("annotation box must have 4 numbers");
        const std::u32string cp = from_utf8(c.at("cp").get<std::string>());
        if (cp.size() != 1) throw IoError("annotation cp must hold exactly one character");
        CharAnnotation a;
        a.box = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()};
        a.codepoint = cp[0];
        a.word_id = c.at("word").get<int>();
        a.is_special = c.at("special").get<bool>();
        page.chars.push_back(a);
    }
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_json_file(const fs::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1) << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

void write_annotations(const fs::path& path, const PageSample& page) { write_json_file(path, annotations_to_json(page)); }

PageSample read_page(const fs::path& image_path, const fs::path& annotation_path) {
    PageSample page;
    page.image = read_image(image_path);
    const json j = read_json_file(annotation_path);
    try {
        annotations_from_json(j, page);
        if (j.at("width").get<int>() != page.width() || j.at("height").get<int>() != page.height())
            throw IoError("annotation size does not match image");
    } catch (const json::exception& e) {
        throw IoError("bad annotation file " + annotation_path.string() + ": " + e.what());
    } catch (const IoError& e) {
        throw IoError(annotation_path.string() + ": " + e.what());
    }
    return page;
}

}  // namespace docdet
