#include "docdet/detector.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "docdet/error.hpp"
#include "docdet/page_io.hpp"
#include "docdet/parallel.hpp"

namespace docdet {

DetectionResult detect(const UNet<float>& model, const Image& image, const PostprocessConfig& cfg) {
    return detect_from_maps(predict_maps(model, image), cfg);
}

LatencyStats bench_latency(const UNet<float>& model, std::span<const Image> pages, const PostprocessConfig& cfg,
                           int warmup) {
    return time_pages(pages.size(), [&](size_t i) { (void)detect(model, pages[i], cfg); }, warmup);
}

void write_overlay(const std::filesystem::path& path, const Image& image, const DetectionResult& result) {
    cv::Mat gray, color;
    detail::to_mat(image).convertTo(gray, CV_8U, 255.0);
    cv::cvtColor(gray, color, cv::COLOR_GRAY2BGR);
    for (const Box& b : result.boxes)
        cv::rectangle(color, cv::Point(static_cast<int>(std::floor(b.x0)), static_cast<int>(std::floor(b.y0))),
                      cv::Point(static_cast<int>(std::ceil(b.x1)) - 1, static_cast<int>(std::ceil(b.y1)) - 1),
                      cv::Scalar(0, 0, 255), 1);
    bool ok = false;
    try {
        ok = cv::imwrite(path.string(), color);
    } catch (const cv::Exception&) {
        ok = false;
    }
    if (!ok) throw IoError("cannot write overlay: " + path.string());
}

EvalReport evaluate(const UNet<float>& model, const std::vector<Image>& images,
                    const std::vector<GroundTruthPage>& gts, const EvalOptions& opts,
                    std::vector<DetectionResult>* detections) {
    opts.post.validate();
    if (images.size() != gts.size()) throw Error("evaluate: image and ground-truth lists differ in length");
    std::vector<DetectionResult> preds(images.size());
    LatencyStats latency;
    if (opts.bench) {
        latency = time_pages(images.size(), [&](size_t i) { preds[i] = detect(model, images[i], opts.post); });
    } else {
        parallel_for(images.size(), opts.workers, [&](size_t i) { preds[i] = detect(model, images[i], opts.post); });
    }
    EvalReport report = detection_f1(preds, gts, opts.iou_threshold);
    report.latency = std::move(latency);
    const bool transcribed = !gts.empty() && std::all_of(gts.begin(), gts.end(), [](const GroundTruthPage& g) {
        return g.transcriptions.size() == g.boxes.size();
    });
    if (opts.recognizer && transcribed)
        report.edit_score = recognition_edit_score(images, preds, gts, *opts.recognizer, opts.iou_threshold);
    if (detections) *detections = std::move(preds);
    return report;
}

EvalReport evaluate(const UNet<float>& model, const std::vector<GroundTruthPage>& gts, const EvalOptions& opts,
                    std::vector<DetectionResult>* detections) {
    std::vector<Image> images(gts.size());
    parallel_for(gts.size(), opts.workers, [&](size_t i) { images[i] = read_image(gts[i].image); });
    return evaluate(model, images, gts, opts, detections);
}

}  // namespace docdet
