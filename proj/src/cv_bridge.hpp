#pragma once

// OpenCV interop for the library's value types. Internal to src/.

#include <opencv2/core.hpp>

#include "docdet/geometry.hpp"
#include "docdet/grid.hpp"

namespace docdet::detail {

inline cv::Mat to_mat(const Image& img) {
    cv::Mat m(img.height(), img.width(), CV_32F);
    for (int y = 0; y < img.height(); ++y) {
        const auto src = img.row(y);
        std::copy(src.begin(), src.end(), m.ptr<float>(y));
    }
    return m;
}

inline Image from_mat(const cv::Mat& m) {
    cv::Mat f;
    if (m.type() == CV_32F)
        f = m;
    else
        m.convertTo(f, CV_32F);
    Image img(f.cols, f.rows);
    for (int y = 0; y < f.rows; ++y) {
        const float* src = f.ptr<float>(y);
        std::copy(src, src + f.cols, img.row(y).begin());
    }
    return img;
}

/// Converts a homography in pixel-edge coordinates (pixel i spans [i, i+1)) to OpenCV's
/// pixel-center convention.
inline cv::Mat to_cv_homography(const Homography& h) {
    const Homography conv = Homography::translation(-0.5, -0.5) * h * Homography::translation(0.5, 0.5);
    cv::Mat m(3, 3, CV_64F);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m.at<double>(r, c) = conv(r, c);
    return m;
}

}  // namespace docdet::detail
