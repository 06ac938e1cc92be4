#include "docdet/geometry.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "docdet/error.hpp"

namespace docdet {

bool Box::valid() const {
    return std::isfinite(x0) && std::isfinite(y0) && std::isfinite(x1) && std::isfinite(y1) && x0 < x1 && y0 < y1;
}

Box box_union(const Box& a, const Box& b) {
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

Box clip_box(const Box& b, double width, double height) {
    return {std::clamp(b.x0, 0.0, width), std::clamp(b.y0, 0.0, height), std::clamp(b.x1, 0.0, width),
            std::clamp(b.y1, 0.0, height)};
}

double Quad::signed_area() const {
    double s = 0.0;
    for (size_t i = 0; i < 4; ++i) {
        const Point& p = corners[i];
        const Point& q = corners[(i + 1) % 4];
        s += p.x * q.y - q.x * p.y;
    }
    return 0.5 * s;
}

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool segments_cross(Point a, Point b, Point c, Point d) {
    const double d1 = cross(c, d, a);
    const double d2 = cross(c, d, b);
    const double d3 = cross(a, b, c);
    const double d4 = cross(a, b, d);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

}  // namespace

bool Quad::valid() const {
    for (const Point& p : corners)
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    // Opposite edges must not cross.
    if (segments_cross(corners[0], corners[1], corners[2], corners[3])) return false;
    if (segments_cross(corners[1], corners[2], corners[3], corners[0])) return false;
    return signed_area() > 0.0;
}

double iou(const Box& a, const Box& b) {
    const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    // Summing the areas in a fixed order keeps iou(a, b) == iou(b, a) bit-exactly.
    const double sa = a.area(), sb = b.area();
    const double uni = std::min(sa, sb) + std::max(sa, sb) - inter;
    if (a == b) return 1.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

Box quad_to_box(const Quad& q) {
    Box b{q.corners[0].x, q.corners[0].y, q.corners[0].x, q.corners[0].y};
    for (const Point& p : q.corners) {
        b.x0 = std::min(b.x0, p.x);
        b.y0 = std::min(b.y0, p.y);
        b.x1 = std::max(b.x1, p.x);
        b.y1 = std::max(b.y1, p.y);
    }
    return b;
}

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography Homography::translation(double dx, double dy) { return Homography({1, 0, dx, 0, 1, dy, 0, 0, 1}); }

Homography Homography::rotation(double radians, Point center) {
    const double c = std::cos(radians);
    const double s = std::sin(radians);
    // Snap exact quarter turns so rotations by multiples of 90 degrees stay exact.
    auto snap = [](double v) { return std::abs(v) < 1e-15 ? 0.0 : v; };
    const Homography r({snap(c), -snap(s), 0, snap(s), snap(c), 0, 0, 0, 1});
    return translation(center.x, center.y) * r * translation(-center.x, -center.y);
}

Homography Homography::scaling(double sx, double sy) { return Homography({sx, 0, 0, 0, sy, 0, 0, 0, 1}); }

Homography Homography::from_correspondences(const std::array<Point, 4>& src, const std::array<Point, 4>& dst) {
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const double x = src[i].x, y = src[i].y, u = dst[i].x, v = dst[i].y;
        a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
        a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
        b(2 * i) = u;
        b(2 * i + 1) = v;
    }
    Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
    if (!lu.isInvertible()) throw Error("homography: degenerate point correspondences");
    const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
    return Homography({h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0});
}

double Homography::determinant() const {
    const auto& m = m_;
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
    const double det = determinant();
    double scale = 0.0;
    for (double v : m_) scale = std::max(scale, std::abs(v));
    if (!std::isfinite(det) || scale == 0.0 || std::abs(det) <= 1e-12 * scale * scale * scale)
        throw Error("homography: matrix is singular");
    const auto& m = m_;
    std::array<double, 9> inv{
        m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3],
    };
    for (double& v : inv) v /= det;
    return Homography(inv);
}

Homography Homography::operator*(const Homography& rhs) const {
    std::array<double, 9> out{};
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 3; ++k) out[r * 3 + c] += m_[r * 3 + k] * rhs.m_[k * 3 + c];
    return Homography(out);
}

Point Homography::apply(Point p) const {
    const auto& m = m_;
    const double w = m[6] * p.x + m[7] * p.y + m[8];
    if (w == 0.0 || !std::isfinite(w)) throw Error("homography: point mapped to infinity");
    return {(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

std::vector<Point> transform_points(std::span<const Point> pts, const Homography& h) {
    h.inverse();  // rejects singular matrices
    std::vector<Point> out;
    out.reserve(pts.size());
    for (const Point& p : pts) out.push_back(h.apply(p));
    return out;
}

Box transform_box(const Box& b, const Homography& h) {
    const std::array<Point, 4> corners{Point{b.x0, b.y0}, Point{b.x1, b.y0}, Point{b.x1, b.y1}, Point{b.x0, b.y1}};
    const auto moved = transform_points(corners, h);
    return quad_to_box(Quad{{moved[0], moved[1], moved[2], moved[3]}});
}

}  // namespace docdet
