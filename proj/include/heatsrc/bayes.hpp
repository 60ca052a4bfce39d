#ifndef HEATSRC_BAYES_HPP
#define HEATSRC_BAYES_HPP

// State layout, priors, likelihood and the unnormalized log-posterior.
//
// A state vector stacks one 5-block (x0, y0, q, c1, c2) per heater. The prior
// is uniform on a box B, optionally restricted to y0 > 0, times sharp
// Gaussians on components that are known a priori. The likelihood is
// Gaussian with i.i.d. noise of standard deviation sigma.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "heatsrc/field.hpp"
#include "heatsrc/random.hpp"

namespace heatsrc {

inline constexpr std::size_t kBlockSize = 5;
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

enum class Component : std::size_t { X0 = 0, Y0 = 1, Q = 2, C1 = 3, C2 = 4 };

inline constexpr std::array<std::string_view, kBlockSize> kComponentNames{"x0", "y0", "q", "c1", "c2"};

inline std::optional<Component> parse_component(std::string_view name) {
  for (std::size_t i = 0; i < kBlockSize; ++i) {
    if (kComponentNames[i] == name) return static_cast<Component>(i);
  }
  return std::nullopt;
}

/// Column label such as "h2_q".
inline std::string component_label(std::size_t index) {
  return "h" + std::to_string(index / kBlockSize + 1) + "_" + std::string(kComponentNames[index % kBlockSize]);
}

struct HeaterState {
  double x0 = 0.0, y0 = 0.0, q = 0.0, c1 = 0.0, c2 = 0.0;

  friend bool operator==(const HeaterState&, const HeaterState&) = default;

  std::array<double, kBlockSize> as_array() const { return {x0, y0, q, c1, c2}; }
  static HeaterState from(std::span<const double> b) { return {b[0], b[1], b[2], b[3], b[4]}; }

  Heater heater() const { return {HeaterShape({x0, y0}, c1, c2), q}; }
};

inline std::vector<double> pack(std::span<const HeaterState> states) {
  std::vector<double> x;
  x.reserve(states.size() * kBlockSize);
  for (const auto& s : states) {
    const auto a = s.as_array();
    x.insert(x.end(), a.begin(), a.end());
  }
  return x;
}

inline std::vector<HeaterState> unpack(std::span<const double> x, std::size_t n_heaters) {
  if (x.size() != n_heaters * kBlockSize) {
    throw std::invalid_argument("unpack: state length " + std::to_string(x.size()) + " does not match " +
                                std::to_string(n_heaters) + " heaters");
  }
  std::vector<HeaterState> out;
  out.reserve(n_heaters);
  for (std::size_t h = 0; h < n_heaters; ++h) out.push_back(HeaterState::from(x.subspan(h * kBlockSize, kBlockSize)));
  return out;
}

struct Bounds {
  double lower = 0.0;
  double upper = 0.0;

  bool contains(double v) const { return v >= lower && v <= upper; }
};

struct KnownPrior {
  double mean = 0.0;
  double variance = 1e-6;
};

inline constexpr double kSharpVariance = 1e-6;

inline constexpr std::array<Bounds, kBlockSize> kDefaultBounds{
    Bounds{-2.0, 2.0}, Bounds{0.0, 2.0}, Bounds{0.0, 10.0}, Bounds{0.0, 1.0}, Bounds{-0.5, 0.5}};

struct StateSpec {
  std::size_t n_heaters = 1;
  std::vector<Bounds> bounds;                   // one per state component
  std::vector<std::optional<KnownPrior>> known;  // one per state component
  bool half_plane = true;

  StateSpec() : StateSpec(1) {}

  explicit StateSpec(std::size_t heaters, bool restrict_half_plane = true)
      : n_heaters(heaters), half_plane(restrict_half_plane) {
    for (std::size_t h = 0; h < heaters; ++h) bounds.insert(bounds.end(), kDefaultBounds.begin(), kDefaultBounds.end());
    known.resize(dim());
  }

  std::size_t dim() const { return n_heaters * kBlockSize; }

  static std::size_t index(std::size_t heater, Component c) {
    return heater * kBlockSize + static_cast<std::size_t>(c);
  }

  Bounds& bound(std::size_t heater, Component c) { return bounds.at(index(heater, c)); }
  const Bounds& bound(std::size_t heater, Component c) const { return bounds.at(index(heater, c)); }

  StateSpec& pin(std::size_t heater, Component c, double mean, double variance = kSharpVariance) {
    known.at(index(heater, c)) = KnownPrior{mean, variance};
    return *this;
  }

  /// Indices of components without a known prior.
  std::vector<std::size_t> free_components() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!known[i]) out.push_back(i);
    }
    return out;
  }

  void validate() const {
    if (n_heaters == 0) throw std::invalid_argument("StateSpec: n_heaters must be positive");
    if (bounds.size() != dim() || known.size() != dim()) {
      throw std::invalid_argument("StateSpec: bounds/known length must be 5 * n_heaters");
    }
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!(bounds[i].lower < bounds[i].upper)) {
        throw std::invalid_argument("StateSpec: empty bounds for " + component_label(i));
      }
      if (known[i] && !(known[i]->variance > 0.0)) {
        throw std::invalid_argument("StateSpec: known variance must be positive for " + component_label(i));
      }
    }
    if (half_plane) {
      for (std::size_t h = 0; h < n_heaters; ++h) {
        if (bound(h, Component::Y0).lower < 0.0) {
          throw std::invalid_argument("StateSpec: half_plane requires y0 lower bound >= 0");
        }
      }
    }
  }

  bool in_box(std::span<const double> x) const {
    for (std::size_t i = 0; i < dim(); ++i) {
      if (!bounds[i].contains(x[i])) return false;
    }
    if (half_plane) {
      for (std::size_t h = 0; h < n_heaters; ++h) {
        if (!(x[index(h, Component::Y0)] > 0.0)) return false;
      }
    }
    return true;
  }
};

struct Observation {
  std::vector<double> values;  // y*
  double noise_sigma = 5e-4;
};

/// Heater blocks sorted by ascending q, ties by x0, y0, c1, c2.
inline std::vector<double> canonicalize(std::span<const double> x, const StateSpec& spec) {
  if (x.size() != spec.dim()) throw std::invalid_argument("canonicalize: wrong state length");
  std::vector<double> out(x.begin(), x.end());
  if (spec.n_heaters < 2) return out;
  std::vector<std::size_t> order(spec.n_heaters);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  constexpr std::array<std::size_t, kBlockSize> keys{2, 0, 1, 3, 4};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    for (std::size_t k : keys) {
      const double va = x[a * kBlockSize + k], vb = x[b * kBlockSize + k];
      if (va != vb) return va < vb;
    }
    return false;
  });
  for (std::size_t h = 0; h < order.size(); ++h) {
    std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(order[h] * kBlockSize), kBlockSize,
                out.begin() + static_cast<std::ptrdiff_t>(h * kBlockSize));
  }
  return out;
}

inline double log_prior(std::span<const double> x, const StateSpec& spec) {
  if (x.size() != spec.dim()) throw std::invalid_argument("log_prior: wrong state length");
  if (!spec.in_box(x)) return kNegInf;
  double lp = 0.0;
  for (std::size_t i = 0; i < spec.dim(); ++i) {
    if (const auto& k = spec.known[i]) {
      const double d = x[i] - k->mean;
      lp -= d * d / (2.0 * k->variance);
    }
  }
  return lp;
}

inline std::vector<Heater> heaters_of(std::span<const double> x, std::size_t n_heaters) {
  std::vector<Heater> hs;
  for (const auto& s : unpack(x, n_heaters)) hs.push_back(s.heater());
  return hs;
}

/// -sum_a (y*_a - h_a(x))^2 / (2 sigma^2); geometry failures map to -inf.
inline double log_likelihood(std::span<const double> x, const Observation& obs, const SensorArray& sensors,
                             const StateSpec& spec, std::size_t quad_n = kQuadraturePoints) {
  if (obs.values.size() != sensors.size()) {
    throw std::invalid_argument("log_likelihood: observation length does not match sensor count");
  }
  FieldSample h;
  try {
    h = observe(heaters_of(x, spec.n_heaters), sensors, quad_n);
  } catch (const GeometryError&) {
    return kNegInf;
  } catch (const std::invalid_argument&) {
    return kNegInf;  // c1 <= 0
  }
  const double inv = 1.0 / (2.0 * obs.noise_sigma * obs.noise_sigma);
  double ss = 0.0;
  for (std::size_t a = 0; a < h.size(); ++a) {
    const double r = obs.values[a] - h[a];
    ss += r * r;
  }
  return -ss * inv;
}

/// Unnormalized log-posterior as a reusable, thread-safe target.
class LogPosterior {
 public:
  LogPosterior(StateSpec spec, Observation obs, SensorArray sensors, std::size_t quad_n = kQuadraturePoints)
      : spec_(std::move(spec)), obs_(std::move(obs)), sensors_(std::move(sensors)), quad_n_(quad_n) {
    spec_.validate();
    sensors_.validate();
    if (!(obs_.noise_sigma > 0.0)) throw std::invalid_argument("LogPosterior: noise_sigma must be positive");
    if (obs_.values.size() != sensors_.size()) {
      throw std::invalid_argument("LogPosterior: observation length does not match sensor count");
    }
  }

  LogPosterior(const LogPosterior& o)
      : spec_(o.spec_), obs_(o.obs_), sensors_(o.sensors_), quad_n_(o.quad_n_) {}

  double operator()(std::span<const double> x) const {
    const double lp = log_prior(x, spec_);
    if (lp == kNegInf) return kNegInf;
    forward_evals_.fetch_add(1, std::memory_order_relaxed);
    return lp + log_likelihood(x, obs_, sensors_, spec_, quad_n_);
  }

  const StateSpec& spec() const { return spec_; }
  const Observation& observation() const { return obs_; }
  const SensorArray& sensors() const { return sensors_; }
  std::size_t dim() const { return spec_.dim(); }
  std::vector<double> canonical(std::span<const double> x) const { return canonicalize(x, spec_); }
  bool in_support(std::span<const double> x) const { return spec_.in_box(x); }

  /// Uniform draw from the box; known components start at their prior mean.
  std::vector<double> draw_initial(Rng& rng) const {
    std::vector<double> x(dim());
    for (std::size_t i = 0; i < dim(); ++i) {
      std::uniform_real_distribution<double> u(spec_.bounds[i].lower, spec_.bounds[i].upper);
      const double v = u(rng);
      x[i] = spec_.known[i] ? spec_.known[i]->mean : v;
    }
    return x;
  }

  std::size_t forward_evaluations() const { return forward_evals_.load(); }

 private:
  StateSpec spec_;
  Observation obs_;
  SensorArray sensors_;
  std::size_t quad_n_;
  mutable std::atomic<std::size_t> forward_evals_{0};
};

inline double log_posterior(std::span<const double> x, const Observation& obs, const SensorArray& sensors,
                            const StateSpec& spec, std::size_t quad_n = kQuadraturePoints) {
  const double lp = log_prior(x, spec);
  if (lp == kNegInf) return kNegInf;
  return lp + log_likelihood(x, obs, sensors, spec, quad_n);
}

}  // namespace heatsrc

#endif  // HEATSRC_BAYES_HPP
