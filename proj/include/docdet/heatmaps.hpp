#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "docdet/grid.hpp"
#include "docdet/page.hpp"

namespace docdet {

/// Ground-truth score maps: character region, inter-character affinity and special characters.
struct HeatmapTarget {
    Image region;
    Image affinity;
    Image special;
    double scale = 1.0;  // output pixels per input pixel
};

struct HeatmapConfig {
    int template_size = 33;
    double scale = 1.0;
    /// Boxes narrower or shorter than this (in output pixels) are widened about their center
    /// so that a pixel center always falls near the Gaussian peak.
    double min_box_px = 3.0;
    /// Character boxes narrower than min_width_ratio * height are rendered widened about their
    /// center to that width (region and special channels); 0 disables.
    double min_width_ratio = 0.5;
};

/// size x size isotropic Gaussian, sigma = size/4, exactly 1 at the center. Size must be odd and >= 3.
Image gaussian_template(int size);

/// Warps `tmpl` into `box` (output-pixel coordinates) and max-composites it into `grid`.
void splat_gaussian(Image& grid, const Box& box, const Image& tmpl, double min_box_px = 3.0);

/// Gaussians over the boxes of non-special chars.
Image render_region(std::span<const CharAnnotation> chars, int width, int height, const HeatmapConfig& cfg = {});
/// Gaussians over the boxes of special chars.
Image render_special(std::span<const CharAnnotation> chars, int width, int height, const HeatmapConfig& cfg = {});
/// One Gaussian per pair of consecutive non-special chars of a word (special chars in between are skipped).
/// The box is centered on the midpoint of the two char centers, as wide as the center distance and as tall
/// as the mean char height.
Image render_affinity(const PageSample& page, const HeatmapConfig& cfg = {});

/// Affinity boxes used by render_affinity, in input-pixel coordinates.
std::vector<Box> affinity_boxes(const PageSample& page);

HeatmapTarget make_target(const PageSample& page, const HeatmapConfig& cfg = {});

/// Writes value * 255 as an 8-bit PNG.
void write_heatmap_png(const std::filesystem::path& path, const Image& map);

}  // namespace docdet
