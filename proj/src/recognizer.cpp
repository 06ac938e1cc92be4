#include "docdet/recognizer.hpp"

#include <limits>

#include <opencv2/imgproc.hpp>

#include "cv_bridge.hpp"
#include "docdet/synthgen.hpp"

namespace docdet {

namespace {

// Ink coverage (1 - intensity) of `ink` inside its bounding box, centered in a square and resized.
std::vector<float> shape_of(const cv::Mat& ink, const cv::Rect& box) {
    const int side = std::max(box.width, box.height);
    cv::Mat square(side, side, CV_32F, cv::Scalar(0));
    ink(box).copyTo(square(cv::Rect((side - box.width) / 2, (side - box.height) / 2, box.width, box.height)));
    cv::Mat cell;
    cv::resize(square, cell, {TemplateRecognizer::kCell, TemplateRecognizer::kCell}, 0, 0, cv::INTER_AREA);
    cv::Scalar mean, stddev;
    cv::meanStdDev(cell, mean, stddev);
    cell = (cell - mean[0]) / std::max(stddev[0], 1e-6);
    return std::vector<float>(cell.begin<float>(), cell.end<float>());
}

// Tight bounds of the pixels >= threshold within columns [x0, x1).
cv::Rect ink_box(const cv::Mat& ink, int x0, int x1, float threshold) {
    int bx0 = x1, by0 = ink.rows, bx1 = -1, by1 = -1;
    for (int y = 0; y < ink.rows; ++y)
        for (int x = x0; x < x1; ++x)
            if (ink.at<float>(y, x) >= threshold) {
                bx0 = std::min(bx0, x);
                by0 = std::min(by0, y);
                bx1 = std::max(bx1, x);
                by1 = std::max(by1, y);
            }
    return by1 < 0 ? cv::Rect() : cv::Rect(bx0, by0, bx1 - bx0 + 1, by1 - by0 + 1);
}

}  // namespace

TemplateRecognizer::TemplateRecognizer(const std::vector<std::string>& fonts, double ink_threshold)
    : ink_threshold_(ink_threshold) {
    for (const std::string& name : fonts) {
        const int face = resolve_font(name);
        for (double scale : {0.35, 0.5})
            for (int thickness : {1, 2})
                for (char c = '!'; c <= '~'; ++c) {
                    const std::string text(1, c);
                    int baseline = 0;
                    const cv::Size sz = cv::getTextSize(text, face, scale, thickness, &baseline);
                    const int pad = 4 + thickness;
                    cv::Mat canvas(sz.height + baseline + 2 * pad, sz.width + 2 * pad, CV_8U, cv::Scalar(0));
                    cv::putText(canvas, text, {pad, pad + sz.height}, face, scale, cv::Scalar(255), thickness,
                                cv::LINE_AA);
                    cv::Mat ink;
                    canvas.convertTo(ink, CV_32F, 1.0 / 255.0);
                    const cv::Rect box = ink_box(ink, 0, ink.cols, static_cast<float>(1.0 - ink_threshold));
                    if (box.empty()) continue;
                    templates_.push_back({c, shape_of(ink, box)});
                }
    }
}

std::string TemplateRecognizer::recognize(const Image& crop) const {
    if (crop.empty() || templates_.empty()) return {};
    cv::Mat ink = 1.0 - detail::to_mat(crop);
    const float threshold = static_cast<float>(1.0 - ink_threshold_);
    std::vector<bool> column(static_cast<size_t>(ink.cols), false);
    for (int y = 0; y < ink.rows; ++y)
        for (int x = 0; x < ink.cols; ++x)
            if (ink.at<float>(y, x) >= threshold) column[static_cast<size_t>(x)] = true;
    std::string out;
    int x = 0;
    while (x < ink.cols) {
        while (x < ink.cols && !column[static_cast<size_t>(x)]) ++x;
        const int start = x;
        while (x < ink.cols && column[static_cast<size_t>(x)]) ++x;
        if (x == start) break;
        const cv::Rect box = ink_box(ink, start, x, threshold);
        const std::vector<float> shape = shape_of(ink, box);
        char best = '?';
        double best_d = std::numeric_limits<double>::infinity();
        for (const Template& t : templates_) {
            double d = 0.0;
            for (size_t k = 0; k < shape.size(); ++k) d += (shape[k] - t.shape[k]) * (shape[k] - t.shape[k]);
            if (d < best_d) {
                best_d = d;
                best = t.code;
            }
        }
        out += best;
    }
    return out;
}

}  // namespace docdet
