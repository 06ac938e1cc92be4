#pragma once

#include <vector>

#include <nlohmann/json.hpp>

#include "docdet/geometry.hpp"
#include "docdet/grid.hpp"

namespace docdet {

/// How region and affinity evidence is merged before labeling.
enum class CombineMode {
    /// Threshold region and affinity separately, then OR.
    SeparateThresholds,
    /// Threshold clamp(region + affinity) against region_threshold.
    SumThenThreshold,
};

struct PostprocessConfig {
    double region_threshold = 0.4;
    double affinity_threshold = 0.4;
    double special_threshold = 0.4;
    /// A special-character blob joins the text mask when it lies within
    /// proximity_alpha * (median region-component height) of a region component.
    double proximity_alpha = 1.0;
    double min_box_area = 10.0;
    CombineMode combine_mode = CombineMode::SeparateThresholds;
    /// Grow extracted boxes to undo the shrinkage caused by thresholding Gaussian scores.
    bool restore_extent = true;

    /// Throws ConfigError.
    void validate() const;
};

struct DetectionResult {
    std::vector<Box> boxes;
    std::vector<double> scores;
    int width = 0;
    int height = 0;
};

/// Three score maps predicted (or rendered) for a page, all the same shape.
struct ScoreMaps {
    Image region;
    Image affinity;
    Image special;
};

struct Component {
    int label = 0;
    std::vector<int> pixels;  // y * width + x
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive-exclusive pixel bounds

    int width() const { return x1 - x0; }
    int height() const { return y1 - y0; }
};

struct Components {
    Grid<int> labels;  // 0 is background, component i has label i + 1
    std::vector<Component> items;
};

/// True where value >= threshold.
Mask binarize(const Image& map, double threshold);

/// 8-connected labeling.
Components connected_components(const Mask& mask);

/// Median height of the region components (image_height / 50 when there are none).
double median_component_height(const Components& region, int image_height);

/// region OR affinity, plus every special component whose minimum pixel distance to the region
/// mask is at most proximity_alpha * median region height. Each admitted special component is
/// bridged to every region component within that distance; the rest are discarded.
Mask combine_channels(const Mask& region_bin, const Mask& affinity_bin, const Mask& special_bin,
                      const PostprocessConfig& cfg);

/// One box per mask component, exact pixel bounds, scaled by 1/map_scale into input coordinates.
/// Components below min_box_area, or with no region evidence, are dropped.
DetectionResult extract_boxes(const Mask& word_mask, const Image& region_map, const PostprocessConfig& cfg,
                              double map_scale = 1.0);

/// Fraction of a Gaussian blob's half-extent that stays above `threshold` (sigma = extent/4).
double gaussian_core_fraction(double threshold);

/// Pads each box by min(width, height) * (1/k - 1) / 2 with k = gaussian_core_fraction(region_threshold),
/// clipped to the page.
DetectionResult restore_box_extent(const DetectionResult& result, const PostprocessConfig& cfg);

/// binarize x3 -> combine_channels -> extract_boxes -> restore_box_extent.
DetectionResult detect_from_maps(const ScoreMaps& maps, const PostprocessConfig& cfg, double map_scale = 1.0);

/// {boxes: [[x0,y0,x1,y1]...], scores: [...]}
nlohmann::json detection_to_json(const DetectionResult& r);
DetectionResult detection_from_json(const nlohmann::json& j);

void to_json(nlohmann::json& j, const PostprocessConfig& c);
void from_json(const nlohmann::json& j, PostprocessConfig& c);

}  // namespace docdet
