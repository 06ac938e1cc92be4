#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "docdet/evaluation.hpp"
#include "docdet/network.hpp"
#include "docdet/postprocess.hpp"

namespace docdet {

/// Full pipeline on one grayscale page: pad, forward, binarize x3, combine, extract, restore extent.
DetectionResult detect(const UNet<float>& model, const Image& image, const PostprocessConfig& cfg);

/// Wall-clock seconds of detect per page on the calling thread, after `warmup` untimed runs.
LatencyStats bench_latency(const UNet<float>& model, std::span<const Image> pages, const PostprocessConfig& cfg,
                           int warmup = 1);

/// Color PNG of the page with each detected box outlined.
void write_overlay(const std::filesystem::path& path, const Image& image, const DetectionResult& result);

struct EvalOptions {
    PostprocessConfig post;
    double iou_threshold = 0.5;
    /// Adds per-page detect latency to the report (pages run serially, one warmup).
    bool bench = false;
    /// Scores recognized text when set and the ground truth has transcriptions.
    const Recognizer* recognizer = nullptr;
    /// Pages detected concurrently when not benchmarking.
    int workers = 1;
};

/// Detects on every page and scores against its ground truth.
EvalReport evaluate(const UNet<float>& model, const std::vector<Image>& images,
                    const std::vector<GroundTruthPage>& gts, const EvalOptions& opts,
                    std::vector<DetectionResult>* detections = nullptr);
/// Reads each page's image from its path first.
EvalReport evaluate(const UNet<float>& model, const std::vector<GroundTruthPage>& gts, const EvalOptions& opts,
                    std::vector<DetectionResult>* detections = nullptr);

}  // namespace docdet
