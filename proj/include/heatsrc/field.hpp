#ifndef HEATSRC_FIELD_HPP
#define HEATSRC_FIELD_HPP

// Steady temperature of uniform heaters: -q/(2 pi) times the area integral of
// log|r - eta| over each heater, superposed. Adiabatic wall on y = 0 is
// handled with image heaters.
//
// The area integral is reduced to a boundary integral through
//   div F = log|rho|,   F(rho) = rho (2 log|rho| - 1) / 4,
// evaluated by the midpoint rule in the Fourier parameter on the smooth
// boundary curve. The integrand is a periodic analytic function of theta
// away from the evaluation point, so the rule converges geometrically.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "heatsrc/shapes.hpp"

namespace heatsrc {

struct Heater {
  HeaterShape shape;
  double strength = 0.0;  // q_h, source density scaled by conductivity
};

enum class Wall { Unbounded, AdiabaticY0 };

inline const char* to_string(Wall w) { return w == Wall::Unbounded ? "none" : "adiabatic"; }

struct SensorArray {
  std::vector<Point> points;
  Wall wall = Wall::Unbounded;

  void validate() const {
    if (points.empty()) throw std::invalid_argument("SensorArray: need at least one sensor");
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Point p = points[i];
      if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
        throw std::invalid_argument("SensorArray: sensor " + std::to_string(i) + " is not finite");
      }
      if (wall == Wall::AdiabaticY0 && p.y != 0.0) {
        throw std::invalid_argument("SensorArray: sensor " + std::to_string(i) +
                                    " must lie on the wall y = 0");
      }
    }
  }

  std::size_t size() const { return points.size(); }
};

/// Noiseless sensor temperatures relative to the reference temperature.
using FieldSample = std::vector<double>;

namespace detail {

/// cos/sin of the midpoint angles 2 pi (j + 1/2) / n, cached per thread.
inline const std::vector<std::complex<double>>& midpoint_phases(std::size_t n) {
  thread_local std::unordered_map<std::size_t, std::vector<std::complex<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> ph(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double t = 2.0 * std::numbers::pi * (static_cast<double>(j) + 0.5) / static_cast<double>(n);
    ph[j] = {std::cos(t), std::sin(t)};
  }
  return cache.emplace(n, std::move(ph)).first->second;
}

}  // namespace detail

/// Quadrature nodes of one heater boundary: node positions and the
/// outward normal weights (y', -x') * dtheta.
class DiscretizedHeater {
 public:
  DiscretizedHeater(const Heater& h, std::size_t n) : strength_(h.strength), n_(n) {
    if (n < kMinMomentPoints) throw std::invalid_argument("quadrature needs at least 32 nodes");
    const auto& phases = detail::midpoint_phases(n);
    const auto coeffs = h.shape.coefficients();
    const Point c = h.shape.center();
    const double dtheta = 2.0 * std::numbers::pi / static_cast<double>(n);
    nodes_.resize(n);
    normals_.resize(n);
    double max_speed = 0.0;
    min_y_ = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      std::complex<double> z{c.x, c.y}, dz{0.0, 0.0}, e{1.0, 0.0};
      for (std::size_t k = 0; k < coeffs.size(); ++k) {
        e *= phases[j];
        z += coeffs[k] * e;
        dz += std::complex<double>(0.0, static_cast<double>(k + 1) * coeffs[k]) * e;
      }
      nodes_[j] = {z.real(), z.imag()};
      normals_[j] = {dz.imag() * dtheta, -dz.real() * dtheta};
      max_speed = std::max(max_speed, std::abs(dz));
      min_y_ = std::min(min_y_, z.imag());
    }
    edge_length_ = max_speed * dtheta;
  }

  /// Area integral of log|r - eta| over the heater.
  double log_integral(Point r) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < n_; ++j) {
      double rx = nodes_[j].x - r.x, ry = nodes_[j].y - r.y;
      double rr = rx * rx + ry * ry;
      if (rr < 1e-24) {
        // Evaluation point on a node: nudge the node outward.
        const double nn = std::hypot(normals_[j].x, normals_[j].y);
        if (nn == 0.0) continue;  // cusp, zero contribution
        rx += 1e-9 * normals_[j].x / nn;
        ry += 1e-9 * normals_[j].y / nn;
        rr = rx * rx + ry * ry;
      }
      acc += (rx * normals_[j].x + ry * normals_[j].y) * (std::log(rr) - 1.0);
    }
    return 0.25 * acc;
  }

  double temperature(Point r) const { return -strength_ / (2.0 * std::numbers::pi) * log_integral(r); }

  double min_distance(Point r) const {
    double best = std::numeric_limits<double>::infinity();
    for (const Point& p : nodes_) best = std::min(best, (p.x - r.x) * (p.x - r.x) + (p.y - r.y) * (p.y - r.y));
    return std::sqrt(best);
  }

  double edge_length() const { return edge_length_; }
  double min_y() const { return min_y_; }
  std::size_t size() const { return n_; }

 private:
  double strength_;
  std::size_t n_;
  std::vector<Point> nodes_;
  std::vector<Point> normals_;
  double edge_length_ = 0.0;
  double min_y_ = 0.0;
};

/// Evaluates the temperature of a fixed heater set at many points; nodes are
/// built once. The node count doubles for points within two edge lengths of
/// a boundary.
class FieldEvaluator {
 public:
  FieldEvaluator(std::span<const Heater> heaters, Wall wall, std::size_t quad_n = kQuadraturePoints)
      : wall_(wall), quad_n_(quad_n) {
    if (quad_n < kMinMomentPoints) throw std::invalid_argument("quad_n must be at least 32");
    heaters_.assign(heaters.begin(), heaters.end());
    for (const auto& h : heaters_) {
      if (!std::isfinite(h.strength)) throw GeometryError("heater strength is not finite");
      coarse_.emplace_back(h, quad_n_);
      if (wall_ == Wall::AdiabaticY0 && !(coarse_.back().min_y() > 0.0)) {
        throw GeometryError("heater boundary crosses the adiabatic wall y = 0");
      }
    }
    if (wall_ == Wall::AdiabaticY0) {
      // Real coefficients make every shape symmetric about its horizontal
      // axis, so the reflection across y = 0 is the same shape re-centered
      // at (x0, -y0).
      for (const auto& h : heaters_) {
        const Point c = h.shape.center();
        images_.push_back({h.shape.recentered({c.x, -c.y}), h.strength});
        coarse_.emplace_back(images_.back(), quad_n_);
      }
    }
    fine_.resize(coarse_.size());
  }

  double operator()(Point r) {
    double t = 0.0;
    for (std::size_t i = 0; i < coarse_.size(); ++i) {
      const auto& d = coarse_[i];
      if (d.min_distance(r) < 2.0 * d.edge_length()) {
        if (fine_[i].empty()) fine_[i].emplace_back(source(i), 2 * quad_n_);
        t += fine_[i].front().temperature(r);
      } else {
        t += d.temperature(r);
      }
    }
    if (!std::isfinite(t)) throw GeometryError("temperature evaluation is not finite");
    return t;
  }

  Wall wall() const { return wall_; }

 private:
  const Heater& source(std::size_t i) const {
    return i < heaters_.size() ? heaters_[i] : images_[i - heaters_.size()];
  }

  Wall wall_;
  std::size_t quad_n_;
  std::vector<Heater> heaters_;
  std::vector<Heater> images_;
  std::vector<DiscretizedHeater> coarse_;
  std::vector<std::vector<DiscretizedHeater>> fine_;  // empty or one entry
};

/// Free-space temperature at `point`.
inline double temp_free(std::span<const Heater> heaters, Point point, std::size_t quad_n = kQuadraturePoints) {
  FieldEvaluator eval(heaters, Wall::Unbounded, quad_n);
  return eval(point);
}

/// Temperature above an adiabatic wall on y = 0.
inline double temp_wall(std::span<const Heater> heaters, Point point, std::size_t quad_n = kQuadraturePoints) {
  FieldEvaluator eval(heaters, Wall::AdiabaticY0, quad_n);
  return eval(point);
}

inline FieldSample observe(std::span<const Heater> heaters, const SensorArray& sensors,
                           std::size_t quad_n = kQuadraturePoints) {
  FieldSample out(sensors.size(), 0.0);
  if (heaters.empty()) return out;
  FieldEvaluator eval(heaters, sensors.wall, quad_n);
  for (std::size_t a = 0; a < sensors.size(); ++a) out[a] = eval(sensors.points[a]);
  return out;
}

// ---------------------------------------------------------------------------
// Multipole approximation about the heater's area centroid:
//   T = -(Q / 2 pi) log r - (q / 4 pi) M_ij (delta_ij / r^2 - 2 r_i r_j / r^4)

inline constexpr std::size_t kMultipoleMomentPoints = 8192;

namespace detail {

struct MultipoleTerms {
  double log_r;
  double s;           // M_ij (delta_ij / r^2 - 2 r_i r_j / r^4)
  double ds_dx, ds_dy;
  double rx, ry, r2;
};

inline MultipoleTerms multipole_terms(const MomentData& m, Point r) {
  const double r2 = r.x * r.x + r.y * r.y;
  if (!(r2 > 1e-24 * m.area)) throw GeometryError("multipole: evaluation at the expansion point");
  const double r4 = r2 * r2, r6 = r4 * r2;
  const double tr = m.mxx() + m.myy();
  const double mrx = m.mxx() * r.x + m.mxy() * r.y;
  const double mry = m.mxy() * r.x + m.myy() * r.y;
  const double rmr = r.x * mrx + r.y * mry;
  MultipoleTerms t{};
  t.log_r = 0.5 * std::log(r2);
  t.s = tr / r2 - 2.0 * rmr / r4;
  t.ds_dx = -2.0 * tr * r.x / r4 - 4.0 * mrx / r4 + 8.0 * rmr * r.x / r6;
  t.ds_dy = -2.0 * tr * r.y / r4 - 4.0 * mry / r4 + 8.0 * rmr * r.y / r6;
  t.rx = r.x;
  t.ry = r.y;
  t.r2 = r2;
  return t;
}

}  // namespace detail

inline double temp_multipole(const Heater& h, const MomentData& m, Point point) {
  const Point c = h.shape.center() + m.centroid_offset;
  const auto t = detail::multipole_terms(m, point - c);
  const double q = h.strength;
  return -q * m.area / (2.0 * std::numbers::pi) * t.log_r - q / (4.0 * std::numbers::pi) * t.s;
}

inline double temp_multipole(const Heater& h, Point point) {
  return temp_multipole(h, moments(h.shape, kMultipoleMomentPoints), point);
}

/// Rows [dT/dx0, dT/dy0, dT/dq] of the two-term multipole temperature at
/// each sensor, shape held fixed.
inline Eigen::MatrixXd jacobian_multipole(const Heater& h, std::span<const Point> sensors, const MomentData& m) {
  Eigen::MatrixXd jac(static_cast<Eigen::Index>(sensors.size()), 3);
  const Point c = h.shape.center() + m.centroid_offset;
  const double q = h.strength;
  const double two_pi = 2.0 * std::numbers::pi, four_pi = 4.0 * std::numbers::pi;
  for (std::size_t a = 0; a < sensors.size(); ++a) {
    const auto t = detail::multipole_terms(m, sensors[a] - c);
    const double dT_drx = -q * m.area / two_pi * t.rx / t.r2 - q / four_pi * t.ds_dx;
    const double dT_dry = -q * m.area / two_pi * t.ry / t.r2 - q / four_pi * t.ds_dy;
    const auto row = static_cast<Eigen::Index>(a);
    jac(row, 0) = -dT_drx;
    jac(row, 1) = -dT_dry;
    jac(row, 2) = -m.area / two_pi * t.log_r - t.s / four_pi;
  }
  return jac;
}

inline Eigen::MatrixXd jacobian_multipole(const Heater& h, std::span<const Point> sensors) {
  return jacobian_multipole(h, sensors, moments(h.shape, kMultipoleMomentPoints));
}

// ---------------------------------------------------------------------------

struct GridRegion {
  double xmin = -2.0, xmax = 2.0, ymin = -2.0, ymax = 2.0;
};

struct FieldGrid {
  GridRegion region;
  std::size_t nx = 0, ny = 0;
  Wall wall = Wall::Unbounded;
  std::vector<double> values;  // row-major, row = y index

  double at(std::size_t ix, std::size_t iy) const { return values[iy * nx + ix]; }
  Point cell_center(std::size_t ix, std::size_t iy) const {
    return {region.xmin + (static_cast<double>(ix) + 0.5) * (region.xmax - region.xmin) / static_cast<double>(nx),
            region.ymin + (static_cast<double>(iy) + 0.5) * (region.ymax - region.ymin) / static_cast<double>(ny)};
  }
};

/// Temperatures at the cell centers of a regular grid. Wall mode clips the
/// region to y >= 0.
inline FieldGrid field_grid(std::span<const Heater> heaters, GridRegion region, std::size_t nx, std::size_t ny,
                            Wall wall, std::size_t quad_n = kQuadraturePoints) {
  if (nx < 2 || ny < 2) throw std::invalid_argument("field_grid: resolution must be at least 2x2");
  if (!(region.xmax > region.xmin) || !(region.ymax > region.ymin)) {
    throw std::invalid_argument("field_grid: empty region");
  }
  if (wall == Wall::AdiabaticY0) {
    region.ymin = std::max(region.ymin, 0.0);
    if (!(region.ymax > region.ymin)) throw std::invalid_argument("field_grid: region lies below the wall");
  }
  FieldGrid g{region, nx, ny, wall, std::vector<double>(nx * ny, 0.0)};
  if (heaters.empty()) return g;
  FieldEvaluator eval(heaters, wall, quad_n);
  for (std::size_t iy = 0; iy < ny; ++iy) {
    for (std::size_t ix = 0; ix < nx; ++ix) g.values[iy * nx + ix] = eval(g.cell_center(ix, iy));
  }
  return g;
}

}  // namespace heatsrc

#endif  // HEATSRC_FIELD_HPP
