#pragma once

#include <array>
#include <span>
#include <vector>

namespace docdet {

struct Point {
    double x = 0.0;
    double y = 0.0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned box in pixel coordinates, origin top-left.
/// Valid boxes satisfy x0 < x1 and y0 < y1 with finite coordinates.
struct Box {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    Point center() const { return {(x0 + x1) * 0.5, (y0 + y1) * 0.5}; }
    bool valid() const;
    bool contains(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }

    friend bool operator==(const Box&, const Box&) = default;
};

/// Smallest box containing both.
Box box_union(const Box& a, const Box& b);

/// Intersection with [0,width]x[0,height]; the result may be invalid when the box lies outside.
Box clip_box(const Box& b, double width, double height);

/// Four corners in clockwise order (in image coordinates, y down).
struct Quad {
    std::array<Point, 4> corners;

    /// Shoelace area; positive for clockwise order with y pointing down.
    double signed_area() const;
    bool valid() const;
};

/// Intersection over union of two valid boxes, in [0,1].
double iou(const Box& a, const Box& b);

/// Tight axis-aligned bounds of the quad's corners.
Box quad_to_box(const Quad& q);

/// Row-major 3x3 projective transform.
class Homography {
public:
    Homography();  // identity
    explicit Homography(const std::array<double, 9>& m) : m_(m) {}

    static Homography identity() { return Homography(); }
    static Homography translation(double dx, double dy);
    /// Counter-clockwise rotation in the mathematical sense (x right, y up) about `center`.
    /// With the image convention (y down) a positive angle appears clockwise on screen.
    static Homography rotation(double radians, Point center = {});
    static Homography scaling(double sx, double sy);
    /// Maps four source points onto four destination points.
    static Homography from_correspondences(const std::array<Point, 4>& src, const std::array<Point, 4>& dst);

    double operator()(int r, int c) const { return m_[r * 3 + c]; }
    const std::array<double, 9>& matrix() const { return m_; }

    double determinant() const;
    /// Throws Error when the matrix is singular.
    Homography inverse() const;
    /// (*this) applied after `rhs`.
    Homography operator*(const Homography& rhs) const;

    Point apply(Point p) const;

private:
    std::array<double, 9> m_;
};

/// Projective image of each point. Throws Error for singular H or points mapped to infinity.
std::vector<Point> transform_points(std::span<const Point> pts, const Homography& h);

/// Axis-aligned bounds of the transformed box corners.
Box transform_box(const Box& b, const Homography& h);

}  // namespace docdet
