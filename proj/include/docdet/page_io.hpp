#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "docdet/page.hpp"

namespace docdet {

/// 8-bit grayscale PNG (or any format OpenCV reads); values scaled to [0,1].
Image read_image(const std::filesystem::path& path);
/// Quantizes [0,1] to 8 bits.
void write_image(const std::filesystem::path& path, const Image& image);

/// {chars: [{box:[x0,y0,x1,y1], cp: str, word: int, special: bool}], width, height}
nlohmann::json annotations_to_json(const PageSample& page);
/// Fills page.chars from the document; the image is left untouched.
void annotations_from_json(const nlohmann::json& j, PageSample& page);

void write_annotations(const std::filesystem::path& path, const PageSample& page);
PageSample read_page(const std::filesystem::path& image_path, const std::filesystem::path& annotation_path);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace docdet
