#include <algorithm>
#include <chrono>
#include <cmath>
#include <cwctype>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "docdet/error.hpp"
#include "docdet/evaluation.hpp"
#include "docdet/page.hpp"

namespace docdet {

using nlohmann::json;

std::vector<MatchPair> greedy_match(const std::vector<Box>& preds, const std::vector<Box>& gts, double iou_threshold) {
    std::vector<MatchPair> candidates;
    for (size_t p = 0; p < preds.size(); ++p)
        for (size_t g = 0; g < gts.size(); ++g) {
            const double v = iou(preds[p], gts[g]);
            if (v >= iou_threshold && v > 0.0) candidates.push_back({p, g, v});
        }
    std::sort(candidates.begin(), candidates.end(), [](const MatchPair& a, const MatchPair& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.pred != b.pred) return a.pred < b.pred;
        return a.gt < b.gt;
    });
    std::vector<bool> pred_used(preds.size()), gt_used(gts.size());
    std::vector<MatchPair> out;
    for (const MatchPair& c : candidates) {
        if (pred_used[c.pred] || gt_used[c.gt]) continue;
        pred_used[c.pred] = gt_used[c.gt] = true;
        out.push_back(c);
    }
    return out;
}

namespace {

void finish(EvalReport& r) {
    r.precision = r.predictions ? double(r.true_positives) / r.predictions : 0.0;
    r.recall = r.ground_truths ? double(r.true_positives) / r.ground_truths : 0.0;
    r.f1 = (r.precision + r.recall) > 0 ? 2 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
}

}  // namespace

EvalReport detection_f1(const std::vector<std::vector<Box>>& preds, const std::vector<std::vector<Box>>& gts,
                        double iou_threshold) {
    if (preds.size() != gts.size())
        throw Error("detection_f1: " + std::to_string(preds.size()) + " prediction pages vs " +
                    std::to_string(gts.size()) + " ground-truth pages");
    EvalReport r;
    for (size_t i = 0; i < preds.size(); ++i) {
        r.true_positives += greedy_match(preds[i], gts[i], iou_threshold).size();
        r.predictions += preds[i].size();
        r.ground_truths += gts[i].size();
    }
    finish(r);
    return r;
}

EvalReport detection_f1(const std::vector<DetectionResult>& preds, const std::vector<GroundTruthPage>& gts,
                        double iou_threshold) {
    std::vector<std::vector<Box>> p, g;
    for (const auto& d : preds) p.push_back(d.boxes);
    for (const auto& t : gts) g.push_back(t.boxes);
    return detection_f1(p, g, iou_threshold);
}

size_t levenshtein(std::u32string_view a, std::u32string_view b) {
    auto lower = [](char32_t c) { return static_cast<char32_t>(std::towlower(static_cast<wint_t>(c))); };
    std::vector<size_t> prev(b.size() + 1), cur(b.size() + 1);
    std::iota(prev.begin(), prev.end(), size_t{0});
    for (size_t i = 1; i <= a.size(); ++i) {
        cur[0] = i;
        for (size_t j = 1; j <= b.size(); ++j) {
            const size_t sub = prev[j - 1] + (lower(a[i - 1]) == lower(b[j - 1]) ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double edit_similarity(const std::string& pred, const std::string& gt) {
    const std::u32string a = from_utf8(pred), b = from_utf8(gt);
    const size_t longest = std::max(a.size(), b.size());
    if (longest == 0) return 1.0;
    return 1.0 - static_cast<double>(levenshtein(a, b)) / static_cast<double>(longest);
}

double edit_score(const std::vector<std::string>& pred_texts, const std::vector<std::string>& gt_texts) {
    if (pred_texts.size() != gt_texts.size()) throw Error("edit_score: text lists differ in length");
    if (pred_texts.empty()) return 1.0;
    double sum = 0.0;
    for (size_t i = 0; i < pred_texts.size(); ++i) sum += edit_similarity(pred_texts[i], gt_texts[i]);
    return sum / static_cast<double>(pred_texts.size());
}

Image crop(const Image& image, const Box& box) {
    const int x0 = std::clamp(static_cast<int>(std::floor(box.x0)), 0, image.width());
    const int y0 = std::clamp(static_cast<int>(std::floor(box.y0)), 0, image.height());
    const int x1 = std::clamp(static_cast<int>(std::ceil(box.x1)), x0, image.width());
    const int y1 = std::clamp(static_cast<int>(std::ceil(box.y1)), y0, image.height());
    Image out(x1 - x0, y1 - y0);
    for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) out(x - x0, y - y0) = image(x, y);
    return out;
}

double recognition_edit_score(const std::vector<Image>& images, const std::vector<DetectionResult>& preds,
                              const std::vector<GroundTruthPage>& gts, const Recognizer& recognizer,
                              double iou_threshold) {
    if (images.size() != preds.size() || preds.size() != gts.size())
        throw Error("recognition_edit_score: page lists differ in length");
    std::vector<std::string> pred_texts, gt_texts;
    for (size_t i = 0; i < gts.size(); ++i) {
        const GroundTruthPage& g = gts[i];
        if (g.transcriptions.size() != g.boxes.size())
            throw Error("recognition_edit_score: page " + std::to_string(i) + " lacks transcriptions");
        std::vector<std::string> matched(g.boxes.size());
        for (const MatchPair& m : greedy_match(preds[i].boxes, g.boxes, iou_threshold))
            matched[m.gt] = recognizer.recognize(crop(images[i], preds[i].boxes[m.pred]));
        for (size_t k = 0; k < g.boxes.size(); ++k) {
            pred_texts.push_back(matched[k]);
            gt_texts.push_back(g.transcriptions[k]);
        }
    }
    return edit_score(pred_texts, gt_texts);
}

LatencyStats LatencyStats::from_samples(std::vector<double> seconds) {
    LatencyStats s;
    s.seconds = seconds;
    if (seconds.empty()) return s;
    const double n = static_cast<double>(seconds.size());
    s.total = std::accumulate(seconds.begin(), seconds.end(), 0.0);
    s.mean = s.total / n;
    double var = 0.0;
    for (double v : seconds) var += (v - s.mean) * (v - s.mean);
    s.stddev = seconds.size() > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    std::sort(seconds.begin(), seconds.end());
    const size_t m = seconds.size();
    s.median = m % 2 ? seconds[m / 2] : 0.5 * (seconds[m / 2 - 1] + seconds[m / 2]);
    const size_t idx = static_cast<size_t>(std::ceil(0.95 * n)) - 1;
    s.p95 = seconds[std::min(idx, m - 1)];
    return s;
}

LatencyStats time_pages(size_t pages, const std::function<void(size_t)>& run, int warmup) {
    if (pages == 0) return {};
    for (int i = 0; i < warmup; ++i) run(0);
    std::vector<double> secs;
    secs.reserve(pages);
    for (size_t i = 0; i < pages; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        run(i);
        secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return LatencyStats::from_samples(std::move(secs));
}

json report_to_json(const EvalReport& r) {
    json j = {{"precision", r.precision},
              {"recall", r.recall},
              {"f1", r.f1},
              {"true_positives", r.true_positives},
              {"predictions", r.predictions},
              {"ground_truths", r.ground_truths},
              {"unmatched_predictions", r.unmatched_predictions()},
              {"unmatched_ground_truths", r.unmatched_ground_truths()}};
    if (r.edit_score) j["edit_score"] = *r.edit_score;
    if (!r.latency.seconds.empty())
        j["latency"] = {{"seconds", r.latency.seconds}, {"mean", r.latency.mean},     {"median", r.latency.median},
                        {"p95", r.latency.p95},         {"stddev", r.latency.stddev}, {"total", r.latency.total}};
    return j;
}

std::string report_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "precision   " << r.precision << '\n'
       << "recall      " << r.recall << '\n'
       << "f1          " << r.f1 << '\n'
       << "matched     " << r.true_positives << " / " << r.ground_truths << " ground truths, " << r.predictions
       << " predictions\n";
    if (r.edit_score) os << "edit score  " << *r.edit_score << '\n';
    if (!r.latency.seconds.empty())
        os << "latency     mean " << r.latency.mean << " s, median " << r.latency.median << " s, p95 "
           << r.latency.p95 << " s over " << r.latency.seconds.size() << " pages\n";
    return os.str();
}

}  // namespace docdet
