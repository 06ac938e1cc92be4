#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "docdet/geometry.hpp"
#include "docdet/postprocess.hpp"

namespace docdet {

struct GroundTruthPage {
    std::filesystem::path image;
    std::vector<Box> boxes;
    /// Empty, or aligned with boxes.
    std::vector<std::string> transcriptions;
};

struct LatencyStats {
    std::vector<double> seconds;
    double mean = 0.0;
    double median = 0.0;
    double p95 = 0.0;
    double stddev = 0.0;
    double total = 0.0;

    static LatencyStats from_samples(std::vector<double> seconds);
    /// stddev / mean, 0 when empty.
    double coefficient_of_variation() const { return mean > 0 ? stddev / mean : 0.0; }
};

struct EvalReport {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    size_t true_positives = 0;
    size_t predictions = 0;
    size_t ground_truths = 0;
    std::optional<double> edit_score;
    LatencyStats latency;

    size_t unmatched_predictions() const { return predictions - true_positives; }
    size_t unmatched_ground_truths() const { return ground_truths - true_positives; }
};

/// One-to-one match of prediction `pred` to ground truth `gt`.
struct MatchPair {
    size_t pred = 0;
    size_t gt = 0;
    double iou = 0.0;
};

/// Greedy matching in descending IoU (ties: lower prediction index, then lower ground-truth index);
/// only pairs with IoU >= threshold are matched.
std::vector<MatchPair> greedy_match(const std::vector<Box>& preds, const std::vector<Box>& gts,
                                    double iou_threshold = 0.5);

/// Micro-averaged precision / recall / F1 over all pages. Throws Error when the page lists differ in length.
EvalReport detection_f1(const std::vector<DetectionResult>& preds, const std::vector<GroundTruthPage>& gts,
                        double iou_threshold = 0.5);
EvalReport detection_f1(const std::vector<std::vector<Box>>& preds, const std::vector<std::vector<Box>>& gts,
                        double iou_threshold = 0.5);

/// Case-insensitive Levenshtein distance over code points.
size_t levenshtein(std::u32string_view a, std::u32string_view b);
/// 1 - dist / max(len) for one pair (1 when both are empty).
double edit_similarity(const std::string& pred, const std::string& gt);
/// Mean edit_similarity over aligned pairs; 1 for no pairs. Throws Error when the lists differ in length.
double edit_score(const std::vector<std::string>& pred_texts, const std::vector<std::string>& gt_texts);

/// Maps a word crop to its text.
class Recognizer {
public:
    virtual ~Recognizer() = default;
    virtual std::string recognize(const Image& crop) const = 0;
};

/// Pairs recognized texts with ground-truth transcriptions through the detection match of each page.
/// Unmatched ground truths pair with the empty string.
double recognition_edit_score(const std::vector<Image>& images, const std::vector<DetectionResult>& preds,
                              const std::vector<GroundTruthPage>& gts, const Recognizer& recognizer,
                              double iou_threshold = 0.5);

Image crop(const Image& image, const Box& box);

// Dataset loaders.

/// Published FUNSD layout: <dir>/annotations/*.json (+ <dir>/images/*.png), or JSON files directly in <dir>.
std::vector<GroundTruthPage> load_funsd(const std::filesystem::path& dir);

enum class SroieGranularity { Line, Word };

/// One <name>.txt per image: "x1,y1,...,x4,y4,transcription" per line.
std::vector<GroundTruthPage> load_sroie(const std::filesystem::path& dir,
                                        SroieGranularity granularity = SroieGranularity::Line);
/// Parses a single SROIE annotation file.
GroundTruthPage parse_sroie_file(const std::filesystem::path& txt,
                                 SroieGranularity granularity = SroieGranularity::Line);

/// A corpus written by write_corpus; ground truth is the regular words.
std::vector<GroundTruthPage> load_synth(const std::filesystem::path& dir);

/// Internal interchange format: {pages: [{image, words: [{box, text}]}]}.
nlohmann::json ground_truth_to_json(const std::vector<GroundTruthPage>& pages);
std::vector<GroundTruthPage> ground_truth_from_json(const nlohmann::json& j);

nlohmann::json report_to_json(const EvalReport& r);
std::string report_table(const EvalReport& r);

/// Times `run` once per page after `warmup` untimed calls on the first page.
LatencyStats time_pages(size_t pages, const std::function<void(size_t)>& run, int warmup = 1);

}  // namespace docdet
