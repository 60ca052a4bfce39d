#ifndef HEATSRC_SHAPES_HPP
#define HEATSRC_SHAPES_HPP

// Heater regions bounded by a truncated real Fourier series
//
//   z(theta) = (x0 + i y0) + sum_k c_k exp(i k theta),   k = 1..J
//
// and the polygon geometry (area, centroid, second moments) derived from
// sampled boundary points.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace heatsrc {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
  friend constexpr bool operator==(Point, Point) = default;
};

inline double norm(Point p) { return std::hypot(p.x, p.y); }

/// Thrown for geometry that cannot be evaluated (degenerate shapes, heaters
/// crossing a wall, evaluation at a singular point).
class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Boundary discretization defaults.
inline constexpr std::size_t kGeometryPoints = 128;
inline constexpr std::size_t kQuadraturePoints = 256;
inline constexpr std::size_t kMinBoundaryPoints = 8;
inline constexpr std::size_t kMinMomentPoints = 32;

class HeaterShape {
 public:
  HeaterShape(Point center, std::vector<double> coefficients)
      : center_(center), coeffs_(std::move(coefficients)) {
    if (coeffs_.empty()) throw std::invalid_argument("HeaterShape: no Fourier coefficients");
    for (double c : coeffs_) {
      if (!std::isfinite(c)) throw std::invalid_argument("HeaterShape: non-finite coefficient");
    }
    if (!(coeffs_.front() > 0.0)) {
      throw std::invalid_argument("HeaterShape: c1 must be positive, got " +
                                  std::to_string(coeffs_.front()));
    }
  }

  HeaterShape(Point center, double c1, double c2) : HeaterShape(center, std::vector<double>{c1, c2}) {}

  Point center() const { return center_; }
  std::span<const double> coefficients() const { return coeffs_; }

  HeaterShape recentered(Point c) const { return HeaterShape(c, coeffs_); }

  /// Offset of z(theta) from the center.
  Point offset(double theta) const {
    Point p;
    for (std::size_t k = 0; k < coeffs_.size(); ++k) {
      const double a = static_cast<double>(k + 1) * theta;
      p.x += coeffs_[k] * std::cos(a);
      p.y += coeffs_[k] * std::sin(a);
    }
    return p;
  }

  /// dz/dtheta.
  Point tangent(double theta) const {
    Point p;
    for (std::size_t k = 0; k < coeffs_.size(); ++k) {
      const double m = static_cast<double>(k + 1);
      p.x -= m * coeffs_[k] * std::sin(m * theta);
      p.y += m * coeffs_[k] * std::cos(m * theta);
    }
    return p;
  }

  Point at(double theta) const { return center_ + offset(theta); }

  /// Exact area enclosed by the smooth curve, pi * sum_k k c_k^2 (counted
  /// with winding multiplicity for self-intersecting curves).
  double exact_area() const {
    double s = 0.0;
    for (std::size_t k = 0; k < coeffs_.size(); ++k) s += static_cast<double>(k + 1) * coeffs_[k] * coeffs_[k];
    return std::numbers::pi * s;
  }

  /// Largest distance from the center to any boundary point (upper bound).
  double radius_bound() const {
    double s = 0.0;
    for (double c : coeffs_) s += std::abs(c);
    return s;
  }

 private:
  Point center_;
  std::vector<double> coeffs_;
};

struct BoundaryPolygon {
  std::vector<Point> vertices;  // counterclockwise, closing edge implicit
};

/// Area, centroid offset from the heater center, and the second moment
/// tensor. `second_moment` is taken about the area centroid, so the first
/// moment of the region about the expansion point vanishes.
struct MomentData {
  double area = 0.0;
  Point centroid_offset;
  std::array<double, 3> second_moment{};  // (Mxx, Mxy, Myy)

  double mxx() const { return second_moment[0]; }
  double mxy() const { return second_moment[1]; }
  double myy() const { return second_moment[2]; }
};

inline BoundaryPolygon boundary_points(const HeaterShape& shape, std::size_t n = kGeometryPoints,
                                       std::size_t min_n = kMinBoundaryPoints) {
  if (n < min_n) {
    throw std::invalid_argument("boundary_points: need at least " + std::to_string(min_n) +
                                " vertices, got " + std::to_string(n));
  }
  BoundaryPolygon poly;
  poly.vertices.reserve(n);
  const double step = 2.0 * std::numbers::pi / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) poly.vertices.push_back(shape.at(step * static_cast<double>(j)));
  return poly;
}

/// Polygon moments via the standard shoelace-type formulas; exact for the
/// polygon, converging to the smooth curve as O(1/n^2).
inline MomentData polygon_moments(std::span<const Point> verts, Point origin) {
  double a2 = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0, syy = 0.0;
  const std::size_t n = verts.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Point p = verts[i] - origin;
    const Point q = verts[(i + 1) % n] - origin;
    const double cr = p.x * q.y - q.x * p.y;
    a2 += cr;
    sx += (p.x + q.x) * cr;
    sy += (p.y + q.y) * cr;
    sxx += (p.x * p.x + p.x * q.x + q.x * q.x) * cr;
    syy += (p.y * p.y + p.y * q.y + q.y * q.y) * cr;
    sxy += (p.x * q.y + 2.0 * p.x * p.y + 2.0 * q.x * q.y + q.x * p.y) * cr;
  }
  MomentData m;
  m.area = 0.5 * a2;
  if (!(m.area > 0.0)) throw GeometryError("moments: degenerate shape (non-positive shoelace area)");
  const double mx = sx / 6.0, my = sy / 6.0;
  m.centroid_offset = {mx / m.area, my / m.area};
  // Moments about the origin, then shifted to the centroid.
  const double ixx = sxx / 12.0, iyy = syy / 12.0, ixy = sxy / 24.0;
  const Point c = m.centroid_offset;
  m.second_moment = {ixx - m.area * c.x * c.x, ixy - m.area * c.x * c.y, iyy - m.area * c.y * c.y};
  return m;
}

inline MomentData moments(const HeaterShape& shape, std::size_t n = kQuadraturePoints) {
  if (n < kMinMomentPoints) {
    throw std::invalid_argument("moments: need at least " + std::to_string(kMinMomentPoints) + " points");
  }
  const auto poly = boundary_points(shape, n);
  return polygon_moments(poly.vertices, shape.center());
}

/// Even-odd test; points on an edge count as inside.
inline bool contains(std::span<const Point> verts, Point p) {
  bool inside = false;
  const std::size_t n = verts.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = verts[j], b = verts[i];
    const double cr = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
    const double scale = std::max(1.0, std::abs(b.x - a.x) + std::abs(b.y - a.y));
    if (std::abs(cr) <= 1e-14 * scale && p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
        p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y)) {
      return true;
    }
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xi = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < xi) inside = !inside;
    }
  }
  return inside;
}

inline bool contains(const HeaterShape& shape, Point p, std::size_t n = kGeometryPoints) {
  const auto poly = boundary_points(shape, n);
  return contains(poly.vertices, p);
}

}  // namespace heatsrc

#endif  // HEATSRC_SHAPES_HPP
