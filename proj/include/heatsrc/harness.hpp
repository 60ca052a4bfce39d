#ifndef HEATSRC_HARNESS_HPP
#define HEATSRC_HARNESS_HPP

// Twin-experiment orchestration: configuration, synthetic observations,
// inference and the on-disk artifacts (samples.csv, report.json, grids).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "heatsrc/bayes.hpp"
#include "heatsrc/field.hpp"
#include "heatsrc/io.hpp"
#include "heatsrc/posterior.hpp"
#include "heatsrc/random.hpp"
#include "heatsrc/sampler.hpp"
#include "json.hpp"

namespace heatsrc {

using nlohmann::json;

/// Validation failure; `path` names the offending config field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Experiment-level failure (e.g. an observation that carries no signal).
class ExperimentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SensorLayout {
  enum class Kind { Line, Points } kind = Kind::Line;
  std::size_t count = 3;
  double range_min = -1.0, range_max = 1.0;
  std::vector<Point> points;
  Wall wall = Wall::Unbounded;

  /// Equally spaced on [range_min, range_max] at y = 0, endpoints included;
  /// a single sensor sits at the midpoint.
  SensorArray expand() const {
    SensorArray s;
    s.wall = wall;
    if (kind == Kind::Points) {
      s.points = points;
      return s;
    }
    for (std::size_t i = 0; i < count; ++i) {
      const double x = count == 1 ? 0.5 * (range_min + range_max)
                                  : range_min + static_cast<double>(i) * (range_max - range_min) /
                                                    static_cast<double>(count - 1);
      s.points.push_back({x, 0.0});
    }
    return s;
  }
};

struct GridSpec {
  GridRegion region;
  std::size_t nx = 101, ny = 101;
};

struct ExperimentConfig {
  std::vector<HeaterState> truth;
  StateSpec estimator;
  SensorLayout sensors;
  double noise_sigma = 5e-4;
  McmcSchedule schedule = McmcSchedule::desk_scale();
  std::vector<int> ladder_exponents{-4, -3, -2, -1, 0};
  double ladder_base = 5.0;
  std::size_t gmm_k = 5;
  std::optional<GridSpec> grid;
  std::size_t quad_n = kQuadraturePoints;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> initial;  // cold-chain start

  SensorArray sensor_array() const { return sensors.expand(); }
};

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

inline const json& require(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) throw ConfigError(path + "." + key, "missing required field");
  return j.at(key);
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(path, "must be finite");
  return v;
}

inline std::size_t as_count(const json& j, const std::string& path) {
  if (!j.is_number_integer() && !(j.is_number() && std::floor(j.get<double>()) == j.get<double>())) {
    throw ConfigError(path, "expected a non-negative integer");
  }
  const double v = j.get<double>();
  if (v < 0) throw ConfigError(path, "expected a non-negative integer");
  return static_cast<std::size_t>(v);
}

inline bool as_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path, "expected true or false");
  return j.get<bool>();
}

inline std::uint64_t as_seed(const json& j, const std::string& path) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw ConfigError(path, "expected a non-negative integer seed");
}

inline Point as_point(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) throw ConfigError(path, "expected [x, y]");
  return {as_number(j[0], path + "[0]"), as_number(j[1], path + "[1]")};
}

inline HeaterState as_heater(const json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object with x0, y0, q, c1, c2");
  HeaterState h;
  h.x0 = as_number(require(j, "x0", path), path + ".x0");
  h.y0 = as_number(require(j, "y0", path), path + ".y0");
  h.q = as_number(require(j, "q", path), path + ".q");
  h.c1 = as_number(require(j, "c1", path), path + ".c1");
  h.c2 = j.contains("c2") ? as_number(j.at("c2"), path + ".c2") : 0.0;
  if (!(h.c1 > 0.0)) throw ConfigError(path + ".c1", "must be positive");
  return h;
}

inline Component as_component(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path, "expected a component name (x0, y0, q, c1, c2)");
  const auto c = parse_component(j.get<std::string>());
  if (!c) throw ConfigError(path, "unknown component '" + j.get<std::string>() + "'");
  return *c;
}

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(path.empty() ? it.key() : path + "." + it.key(), "unknown field");
  }
}

}  // namespace detail

/// Builds a validated config from JSON, applying defaults.
inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  ExperimentConfig cfg;
  check_keys(j, {"truth", "estimator", "sensors", "noise_sigma", "schedule", "ladder", "gmm_k", "grid", "quad_n", "seed",
                 "initial", "description"},
             "");

  const json& truth = require(j, "truth", "config");
  if (!truth.is_array()) throw ConfigError("truth", "expected an array of heaters");
  for (std::size_t i = 0; i < truth.size(); ++i) cfg.truth.push_back(as_heater(truth[i], "truth[" + std::to_string(i) + "]"));

  if (j.contains("seed")) cfg.seed = as_seed(j.at("seed"), "seed");
  if (j.contains("noise_sigma")) {
    cfg.noise_sigma = as_number(j.at("noise_sigma"), "noise_sigma");
    if (cfg.noise_sigma < 0.0) throw ConfigError("noise_sigma", "must be non-negative");
  }
  if (j.contains("gmm_k")) {
    cfg.gmm_k = as_count(j.at("gmm_k"), "gmm_k");
    if (cfg.gmm_k == 0) throw ConfigError("gmm_k", "must be at least 1");
  }
  if (j.contains("quad_n")) {
    cfg.quad_n = as_count(j.at("quad_n"), "quad_n");
    if (cfg.quad_n < kMinMomentPoints) throw ConfigError("quad_n", "must be at least 32");
  }

  // Sensors
  const json sj = j.contains("sensors") ? j.at("sensors") : json::object();
  check_keys(sj, {"count", "range", "points", "wall"}, "sensors");
  if (sj.contains("wall")) {
    const auto& w = sj.at("wall");
    if (w == "none" || w == "unbounded") {
      cfg.sensors.wall = Wall::Unbounded;
    } else if (w == "adiabatic") {
      cfg.sensors.wall = Wall::AdiabaticY0;
    } else {
      throw ConfigError("sensors.wall", "expected \"none\" or \"adiabatic\"");
    }
  }
  if (sj.contains("points")) {
    if (sj.contains("count") || sj.contains("range")) {
      throw ConfigError("sensors", "give either points or count/range, not both");
    }
    const auto& pts = sj.at("points");
    if (!pts.is_array() || pts.empty()) throw ConfigError("sensors.points", "expected a non-empty array of [x, y]");
    cfg.sensors.kind = SensorLayout::Kind::Points;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::string p = "sensors.points[" + std::to_string(i) + "]";
      const Point pt = as_point(pts[i], p);
      if (cfg.sensors.wall == Wall::AdiabaticY0 && pt.y != 0.0) {
        throw ConfigError(p, "sensors must lie on the wall (y = 0) in adiabatic mode");
      }
      cfg.sensors.points.push_back(pt);
    }
    cfg.sensors.count = cfg.sensors.points.size();
  } else {
    if (sj.contains("count")) cfg.sensors.count = as_count(sj.at("count"), "sensors.count");
    if (cfg.sensors.count == 0) throw ConfigError("sensors.count", "must be at least 1");
    if (sj.contains("range")) {
      const auto& r = sj.at("range");
      if (!r.is_array() || r.size() != 2) throw ConfigError("sensors.range", "expected [min, max]");
      cfg.sensors.range_min = as_number(r[0], "sensors.range[0]");
      cfg.sensors.range_max = as_number(r[1], "sensors.range[1]");
      if (!(cfg.sensors.range_min <= cfg.sensors.range_max)) throw ConfigError("sensors.range", "min exceeds max");
    }
  }

  // Estimator
  const json ej = j.contains("estimator") ? j.at("estimator") : json::object();
  check_keys(ej, {"n_heaters", "half_plane", "bounds", "known", "known_from_truth"}, "estimator");
  std::size_t nh = cfg.truth.size();
  if (ej.contains("n_heaters")) nh = as_count(ej.at("n_heaters"), "estimator.n_heaters");
  if (nh == 0) nh = 1;  // zero-heater truth still needs an estimator; rejected later as no-signal
  const bool half_plane = ej.contains("half_plane") ? as_bool(ej.at("half_plane"), "estimator.half_plane") : true;
  cfg.estimator = StateSpec(nh, half_plane);
  if (ej.contains("bounds")) {
    const auto& b = ej.at("bounds");
    check_keys(b, {"x0", "y0", "q", "c1", "c2"}, "estimator.bounds");
    for (auto it = b.begin(); it != b.end(); ++it) {
      const std::string p = "estimator.bounds." + it.key();
      const Component c = *parse_component(it.key());
      if (!it.value().is_array() || it.value().size() != 2) throw ConfigError(p, "expected [lower, upper]");
      const Bounds bd{as_number(it.value()[0], p + "[0]"), as_number(it.value()[1], p + "[1]")};
      if (!(bd.lower < bd.upper)) throw ConfigError(p, "lower must be below upper");
      for (std::size_t h = 0; h < nh; ++h) cfg.estimator.bound(h, c) = bd;
    }
  }
  if (half_plane) {
    for (std::size_t h = 0; h < nh; ++h) {
      if (cfg.estimator.bound(h, Component::Y0).lower < 0.0) {
        throw ConfigError("estimator.bounds.y0", "lower bound must be >= 0 when half_plane is set");
      }
    }
  }
  if (ej.contains("known_from_truth")) {
    const auto& k = ej.at("known_from_truth");
    if (!k.is_array()) throw ConfigError("estimator.known_from_truth", "expected an array of component names");
    if (cfg.truth.size() != nh) {
      throw ConfigError("estimator.known_from_truth", "needs one truth heater per estimated heater");
    }
    for (std::size_t i = 0; i < k.size(); ++i) {
      const Component c = as_component(k[i], "estimator.known_from_truth[" + std::to_string(i) + "]");
      for (std::size_t h = 0; h < nh; ++h) {
        cfg.estimator.pin(h, c, cfg.truth[h].as_array()[static_cast<std::size_t>(c)]);
      }
    }
  }
  if (ej.contains("known")) {
    const auto& k = ej.at("known");
    if (!k.is_array()) throw ConfigError("estimator.known", "expected an array");
    for (std::size_t i = 0; i < k.size(); ++i) {
      const std::string p = "estimator.known[" + std::to_string(i) + "]";
      check_keys(k[i], {"heater", "component", "mean", "variance"}, p);
      const std::size_t h = k[i].contains("heater") ? as_count(k[i].at("heater"), p + ".heater") : 1;
      if (h < 1 || h > nh) throw ConfigError(p + ".heater", "heater index out of range (1-based)");
      const Component c = as_component(require(k[i], "component", p), p + ".component");
      const double mean = as_number(require(k[i], "mean", p), p + ".mean");
      const double var = k[i].contains("variance") ? as_number(k[i].at("variance"), p + ".variance") : kSharpVariance;
      if (!(var > 0.0)) throw ConfigError(p + ".variance", "must be positive");
      cfg.estimator.pin(h - 1, c, mean, var);
    }
  }
  if (half_plane) {
    for (std::size_t i = 0; i < cfg.truth.size(); ++i) {
      const auto a = cfg.truth[i].as_array();
      const std::size_t h = std::min(i, nh - 1);
      for (std::size_t c = 0; c < kBlockSize; ++c) {
        if (!cfg.estimator.bounds[h * kBlockSize + c].contains(a[c])) {
          throw ConfigError("truth[" + std::to_string(i) + "]." + std::string(kComponentNames[c]),
                            "lies outside the estimator bounds");
        }
      }
      if (!(cfg.truth[i].y0 > 0.0)) throw ConfigError("truth[" + std::to_string(i) + "].y0", "must be positive");
    }
  }

  // Schedule
  const json sc = j.contains("schedule") ? j.at("schedule") : json::object();
  check_keys(sc, {"profile", "phase1_steps", "phase1_var", "phase2_steps", "phase2_var", "burn_in_fraction", "thin",
                  "swap_interval", "threads", "progress_interval", "component_scales"},
             "schedule");
  if (sc.contains("profile")) {
    const auto& p = sc.at("profile");
    if (p == "paper") {
      cfg.schedule = McmcSchedule{};
    } else if (p != "desk") {
      throw ConfigError("schedule.profile", "expected \"desk\" or \"paper\"");
    }
  }
  auto count_field = [&](const char* key, std::size_t& dst) {
    if (sc.contains(key)) dst = as_count(sc.at(key), std::string("schedule.") + key);
  };
  count_field("phase1_steps", cfg.schedule.phase1_steps);
  count_field("phase2_steps", cfg.schedule.phase2_steps);
  count_field("thin", cfg.schedule.thin);
  count_field("swap_interval", cfg.schedule.swap_interval);
  count_field("threads", cfg.schedule.threads);
  count_field("progress_interval", cfg.schedule.progress_interval);
  if (sc.contains("phase1_var")) cfg.schedule.phase1_var = as_number(sc.at("phase1_var"), "schedule.phase1_var");
  if (sc.contains("phase2_var")) cfg.schedule.phase2_var = as_number(sc.at("phase2_var"), "schedule.phase2_var");
  if (sc.contains("burn_in_fraction")) {
    cfg.schedule.burn_in_fraction = as_number(sc.at("burn_in_fraction"), "schedule.burn_in_fraction");
  }
  if (sc.contains("component_scales")) {
    const auto& cs = sc.at("component_scales");
    if (!cs.is_array()) throw ConfigError("schedule.component_scales", "expected an array");
    cfg.schedule.component_scales.clear();
    for (std::size_t i = 0; i < cs.size(); ++i) {
      cfg.schedule.component_scales.push_back(as_number(cs[i], "schedule.component_scales[" + std::to_string(i) + "]"));
    }
    if (cfg.schedule.component_scales.size() != cfg.estimator.dim()) {
      throw ConfigError("schedule.component_scales", "needs one entry per state component");
    }
  }
  try {
    cfg.schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("schedule", e.what());
  }

  if (j.contains("ladder")) {
    const auto& l = j.at("ladder");
    check_keys(l, {"exponents", "base"}, "ladder");
    if (l.contains("exponents")) {
      cfg.ladder_exponents.clear();
      for (const auto& e : l.at("exponents")) {
        if (!e.is_number_integer()) throw ConfigError("ladder.exponents", "expected integers");
        cfg.ladder_exponents.push_back(e.get<int>());
      }
    }
    if (l.contains("base")) cfg.ladder_base = as_number(l.at("base"), "ladder.base");
    try {
      ChainLadder(cfg.ladder_exponents, cfg.ladder_base).validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("ladder", e.what());
    }
  }

  if (j.contains("grid") && !j.at("grid").is_null()) {
    const auto& g = j.at("grid");
    check_keys(g, {"region", "resolution"}, "grid");
    GridSpec gs;
    if (g.contains("region")) {
      const auto& r = g.at("region");
      if (!r.is_array() || r.size() != 4) throw ConfigError("grid.region", "expected [xmin, xmax, ymin, ymax]");
      gs.region = {as_number(r[0], "grid.region[0]"), as_number(r[1], "grid.region[1]"), as_number(r[2], "grid.region[2]"),
                   as_number(r[3], "grid.region[3]")};
      if (!(gs.region.xmin < gs.region.xmax) || !(gs.region.ymin < gs.region.ymax)) {
        throw ConfigError("grid.region", "empty region");
      }
    }
    if (g.contains("resolution")) {
      const auto& r = g.at("resolution");
      if (!r.is_array() || r.size() != 2) throw ConfigError("grid.resolution", "expected [nx, ny]");
      gs.nx = as_count(r[0], "grid.resolution[0]");
      gs.ny = as_count(r[1], "grid.resolution[1]");
      if (gs.nx < 2 || gs.ny < 2) throw ConfigError("grid.resolution", "must be at least [2, 2]");
    }
    cfg.grid = gs;
  }

  if (j.contains("initial") && !j.at("initial").is_null()) {
    const auto& in = j.at("initial");
    if (!in.is_array() || in.size() != cfg.estimator.dim()) {
      throw ConfigError("initial", "expected " + std::to_string(cfg.estimator.dim()) + " numbers");
    }
    std::vector<double> x;
    for (std::size_t i = 0; i < in.size(); ++i) x.push_back(as_number(in[i], "initial[" + std::to_string(i) + "]"));
    cfg.initial = x;
  }

  cfg.schedule.seed = cfg.seed;
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError(path, "cannot open config");
  json j;
  try {
    j = json::parse(f, nullptr, true, true);
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("parse error: ") + e.what());
  }
  return parse_config(j);
}

inline json heater_json(const HeaterState& h) {
  return {{"x0", h.x0}, {"y0", h.y0}, {"q", h.q}, {"c1", h.c1}, {"c2", h.c2}};
}

/// Normalized config; parse_config(config_json(c)) reproduces c.
inline json config_json(const ExperimentConfig& c) {
  json j;
  j["truth"] = json::array();
  for (const auto& h : c.truth) j["truth"].push_back(heater_json(h));
  json est;
  est["n_heaters"] = c.estimator.n_heaters;
  est["half_plane"] = c.estimator.half_plane;
  // Bounds are stored per component; all heaters share them when parsed.
  json b;
  for (std::size_t k = 0; k < kBlockSize; ++k) {
    const auto& bd = c.estimator.bounds[k];
    b[std::string(kComponentNames[k])] = {bd.lower, bd.upper};
  }
  est["bounds"] = b;
  est["known"] = json::array();
  for (std::size_t i = 0; i < c.estimator.dim(); ++i) {
    if (const auto& k = c.estimator.known[i]) {
      est["known"].push_back({{"heater", i / kBlockSize + 1},
                              {"component", std::string(kComponentNames[i % kBlockSize])},
                              {"mean", k->mean},
                              {"variance", k->variance}});
    }
  }
  j["estimator"] = est;
  json s;
  s["wall"] = to_string(c.sensors.wall);
  if (c.sensors.kind == SensorLayout::Kind::Points) {
    s["points"] = json::array();
    for (const auto& p : c.sensors.points) s["points"].push_back({p.x, p.y});
  } else {
    s["count"] = c.sensors.count;
    s["range"] = {c.sensors.range_min, c.sensors.range_max};
  }
  j["sensors"] = s;
  j["noise_sigma"] = c.noise_sigma;
  const auto& sc = c.schedule;
  j["schedule"] = {{"phase1_steps", sc.phase1_steps}, {"phase1_var", sc.phase1_var},
                   {"phase2_steps", sc.phase2_steps}, {"phase2_var", sc.phase2_var},
                   {"burn_in_fraction", sc.burn_in_fraction}, {"thin", sc.thin},
                   {"swap_interval", sc.swap_interval}, {"threads", sc.threads},
                   {"progress_interval", sc.progress_interval}};
  if (!sc.component_scales.empty()) j["schedule"]["component_scales"] = sc.component_scales;
  j["ladder"] = {{"exponents", c.ladder_exponents}, {"base", c.ladder_base}};
  j["gmm_k"] = c.gmm_k;
  j["quad_n"] = c.quad_n;
  j["seed"] = c.seed;
  if (c.grid) {
    j["grid"] = {{"region", {c.grid->region.xmin, c.grid->region.xmax, c.grid->region.ymin, c.grid->region.ymax}},
                 {"resolution", {c.grid->nx, c.grid->ny}}};
  }
  if (c.initial) j["initial"] = *c.initial;
  return j;
}

// ---------------------------------------------------------------------------
// Experiment

inline std::vector<Heater> heaters_of(std::span<const HeaterState> states) {
  std::vector<Heater> hs;
  for (const auto& s : states) hs.push_back(s.heater());
  return hs;
}

/// y* = h(truth) + N(0, sigma^2 I) from the synthesis stream of `seed`.
inline Observation synthesize(const ExperimentConfig& cfg) {
  const SensorArray sensors = cfg.sensor_array();
  sensors.validate();
  Observation obs;
  obs.noise_sigma = cfg.noise_sigma;
  obs.values = observe(heaters_of(cfg.truth), sensors, cfg.quad_n);
  if (cfg.noise_sigma > 0.0) {
    Rng rng = make_stream(cfg.seed, stream::kSynthesis);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& v : obs.values) v += noise(rng);
  }
  return obs;
}

struct RunReport {
  ExperimentConfig config;
  Observation observation;
  SensorArray sensors;
  SampleSet samples;
  std::vector<std::string> labels;
  GaussianMixture gmm;
  std::vector<double> component_log_posteriors;
  std::size_t best_index = 0;
  std::vector<std::size_t> pca_components;  // state indices analysed by PCA
  PcaReport pca_of_best;
  std::vector<double> best_temperatures;
  std::vector<double> residuals;  // y* - h(best mean)
  std::size_t forward_evaluations = 0;

  std::vector<double> best_mean() const {
    const auto& m = gmm.means.at(best_index);
    return {m.data(), m.data() + m.size()};
  }
};

inline std::vector<std::string> state_labels(std::size_t dim) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < dim; ++i) labels.push_back(component_label(i));
  return labels;
}

struct MixtureSummary {
  GaussianMixture gmm;
  std::vector<double> component_log_posteriors;
  std::size_t best_index = 0;
  std::vector<std::size_t> pca_components;
  PcaReport pca_of_best;
};

/// GMM fit, best component and PCA over the free components.
inline MixtureSummary summarize(const Eigen::MatrixXd& samples, const LogPosterior& target, std::size_t k,
                                std::uint64_t seed) {
  MixtureSummary s;
  Rng rng = make_stream(seed, stream::kMixture);
  s.gmm = fit_gmm(samples, k, rng);
  for (const auto& m : s.gmm.means) {
    s.component_log_posteriors.push_back(target(std::span<const double>(m.data(), static_cast<std::size_t>(m.size()))));
  }
  s.best_index = best_component(s.gmm, [&](std::span<const double> x) { return target(x); });
  s.pca_components = target.spec().free_components();
  if (s.pca_components.empty()) {
    for (std::size_t i = 0; i < target.dim(); ++i) s.pca_components.push_back(i);
  }
  s.pca_of_best = pca(sub_covariance(s.gmm.covariances[s.best_index], s.pca_components));
  return s;
}

inline json mixture_json(const MixtureSummary& m, const std::vector<std::string>& labels) {
  json comps = json::array();
  for (std::size_t k = 0; k < m.gmm.size(); ++k) {
    json cov = json::array();
    const auto& c = m.gmm.covariances[k];
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
      std::vector<double> row(c.cols());
      for (Eigen::Index q = 0; q < c.cols(); ++q) row[static_cast<std::size_t>(q)] = c(r, q);
      cov.push_back(row);
    }
    const auto& mu = m.gmm.means[k];
    const double lp = m.component_log_posteriors[k];
    comps.push_back({{"weight", m.gmm.weights[k]},
                     {"mean", std::vector<double>(mu.data(), mu.data() + mu.size())},
                     {"covariance", cov},
                     {"log_posterior", std::isfinite(lp) ? json(lp) : json(nullptr)}});
  }
  json pca_j;
  std::vector<std::string> pl;
  for (auto i : m.pca_components) pl.push_back(labels[i]);
  const auto& p = m.pca_of_best;
  json vecs = json::array();
  for (Eigen::Index c = 0; c < p.eigenvectors.cols(); ++c) {
    vecs.push_back(std::vector<double>(p.eigenvectors.col(c).data(), p.eigenvectors.col(c).data() + p.eigenvectors.rows()));
  }
  pca_j = {{"components", pl},
           {"eigenvalues", std::vector<double>(p.eigenvalues.data(), p.eigenvalues.data() + p.eigenvalues.size())},
           {"eigenvectors", vecs},
           {"max_uncertainty_length", p.max_uncertainty_length},
           {"max_direction", std::vector<double>(p.max_direction.data(), p.max_direction.data() + p.max_direction.size())}};
  return {{"gmm", {{"k", m.gmm.size()}, {"iterations", m.gmm.log_likelihood_trace.size()}, {"components", comps}}},
          {"best_index", m.best_index},
          {"pca_of_best", pca_j}};
}

inline constexpr const char* kReportFormat = "heatsrc-report";
inline constexpr int kReportVersion = 1;

inline json report_json(const RunReport& r) {
  json j;
  j["format"] = kReportFormat;
  j["version"] = kReportVersion;
  j["config"] = config_json(r.config);
  j["labels"] = r.labels;
  j["truth"] = json::array();
  for (const auto& h : r.config.truth) j["truth"].push_back(heater_json(h));
  json sensors = json::array();
  for (const auto& p : r.sensors.points) sensors.push_back({p.x, p.y});
  j["observation"] = {{"sensors", sensors},
                      {"wall", to_string(r.sensors.wall)},
                      {"values", r.observation.values},
                      {"noise_sigma", r.observation.noise_sigma}};
  MixtureSummary m{r.gmm, r.component_log_posteriors, r.best_index, r.pca_components, r.pca_of_best};
  const json mj = mixture_json(m, r.labels);
  j["gmm"] = mj["gmm"];
  j["best_index"] = r.best_index;
  j["pca_of_best"] = mj["pca_of_best"];
  const auto best = r.best_mean();
  j["best_mean"] = best;
  j["best_heaters"] = json::array();
  for (const auto& h : unpack(best, r.config.estimator.n_heaters)) j["best_heaters"].push_back(heater_json(h));
  j["best_temperatures"] = r.best_temperatures;
  j["residuals"] = r.residuals;
  const auto& ss = r.samples;
  Eigen::VectorXd mean = ss.samples.colwise().mean();
  Eigen::VectorXd sd = ((ss.samples.rowwise() - mean.transpose()).array().square().colwise().sum() /
                        std::max<double>(1.0, static_cast<double>(ss.samples.rows() - 1)))
                           .sqrt();
  j["sample_summary"] = {{"count", ss.samples.rows()},
                         {"mean", std::vector<double>(mean.data(), mean.data() + mean.size())},
                         {"std", std::vector<double>(sd.data(), sd.data() + sd.size())}};
  j["diagnostics"] = {{"betas", ss.betas},
                      {"acceptance_phase1", ss.acceptance_phase1},
                      {"acceptance_phase2", ss.acceptance_phase2},
                      {"swap_rates", ss.swap_rates},
                      {"forward_evaluations", r.forward_evaluations}};
  return j;
}

/// Structural check of report.json; returns a list of problems (empty when valid).
inline std::vector<std::string> validate_report(const json& j) {
  std::vector<std::string> errs;
  auto need = [&](const char* key, auto pred, const char* what) {
    if (!j.contains(key)) {
      errs.push_back(std::string(key) + ": missing");
    } else if (!pred(j.at(key))) {
      errs.push_back(std::string(key) + ": expected " + what);
    }
  };
  auto is_num_array = [](const json& a) {
    if (!a.is_array()) return false;
    for (const auto& v : a) {
      if (!v.is_number()) return false;
    }
    return true;
  };
  need("format", [](const json& v) { return v == kReportFormat; }, "\"heatsrc-report\"");
  need("version", [](const json& v) { return v == kReportVersion; }, "1");
  need("config", [](const json& v) { return v.is_object(); }, "object");
  need("labels", [](const json& v) { return v.is_array(); }, "array");
  need("truth", [](const json& v) { return v.is_array(); }, "array");
  need("observation", [](const json& v) { return v.is_object() && v.contains("values") && v.contains("sensors"); },
       "object with sensors and values");
  need("gmm", [](const json& v) { return v.is_object() && v.contains("components") && v.at("components").is_array(); },
       "object with components");
  need("best_index", [](const json& v) { return v.is_number_unsigned(); }, "unsigned integer");
  need("best_mean", is_num_array, "number array");
  need("best_heaters", [](const json& v) { return v.is_array(); }, "array");
  need("residuals", is_num_array, "number array");
  need("pca_of_best", [](const json& v) { return v.is_object() && v.contains("max_uncertainty_length"); },
       "object with max_uncertainty_length");
  need("diagnostics", [](const json& v) { return v.is_object(); }, "object");
  if (!errs.empty()) return errs;

  const std::size_t dim = j.at("labels").size();
  if (j.at("best_mean").size() != dim) errs.push_back("best_mean: length does not match labels");
  const auto& comps = j.at("gmm").at("components");
  double wsum = 0.0;
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const auto& c = comps[k];
    const std::string p = "gmm.components[" + std::to_string(k) + "]";
    if (!c.contains("weight") || !c.at("weight").is_number()) {
      errs.push_back(p + ".weight: expected number");
      continue;
    }
    wsum += c.at("weight").get<double>();
    if (!c.contains("mean") || !is_num_array(c.at("mean")) || c.at("mean").size() != dim) {
      errs.push_back(p + ".mean: expected " + std::to_string(dim) + " numbers");
    }
    if (!c.contains("covariance") || !c.at("covariance").is_array() || c.at("covariance").size() != dim) {
      errs.push_back(p + ".covariance: expected " + std::to_string(dim) + " rows");
    }
  }
  if (std::abs(wsum - 1.0) > 1e-9) errs.push_back("gmm.components: weights do not sum to 1");
  if (j.at("best_index").get<std::size_t>() >= comps.size()) errs.push_back("best_index: out of range");
  if (j.at("residuals").size() != j.at("observation").at("values").size()) {
    errs.push_back("residuals: length does not match observation");
  }
  return errs;
}

/// Region used for grids when the config does not specify one.
inline GridSpec effective_grid(const ExperimentConfig& c) {
  if (c.grid) return *c.grid;
  return GridSpec{};
}

/// Runs inference on an existing observation.
inline RunReport infer(const ExperimentConfig& cfg, const Observation& obs) {
  const SensorArray sensors = cfg.sensor_array();
  if (!(obs.noise_sigma > 0.0)) {
    throw ExperimentError("noise_sigma must be positive for inference (a zero-noise likelihood is degenerate)");
  }
  LogPosterior target(cfg.estimator, obs, sensors, cfg.quad_n);
  ChainLadder ladder(cfg.ladder_exponents, cfg.ladder_base);
  McmcSchedule sched = cfg.schedule;
  sched.seed = cfg.seed;
  RunReport r;
  r.config = cfg;
  r.observation = obs;
  r.sensors = sensors;
  r.labels = state_labels(target.dim());
  r.samples = run(ladder, target, sched, cfg.initial ? std::span<const double>(*cfg.initial) : std::span<const double>{});
  auto m = summarize(r.samples.samples, target, cfg.gmm_k, cfg.seed);
  r.gmm = std::move(m.gmm);
  r.component_log_posteriors = std::move(m.component_log_posteriors);
  r.best_index = m.best_index;
  r.pca_components = std::move(m.pca_components);
  r.pca_of_best = std::move(m.pca_of_best);
  const auto best = r.best_mean();
  try {
    r.best_temperatures = observe(heaters_of(best, cfg.estimator.n_heaters), sensors, cfg.quad_n);
  } catch (const std::exception&) {
    r.best_temperatures.assign(sensors.size(), std::nan(""));
  }
  for (std::size_t a = 0; a < sensors.size(); ++a) r.residuals.push_back(obs.values[a] - r.best_temperatures[a]);
  r.forward_evaluations = target.forward_evaluations();
  return r;
}

/// Rejects observations that carry no information about any heater.
inline void require_signal(const ExperimentConfig& cfg, const Observation& obs) {
  double peak = 0.0;
  for (double v : obs.values) peak = std::max(peak, std::abs(v));
  if (cfg.truth.empty() || peak == 0.0) {
    throw ExperimentError("no signal: the observation is identically zero, so the posterior is flat over the prior box");
  }
}

namespace detail {

/// Stages files in a sibling directory and moves them into place only when
/// every write succeeded.
class StagedOutput {
 public:
  explicit StagedOutput(fs::path out) : out_(std::move(out)), stage_(out_ / ".staging") {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError(out_, "cannot create output directory: " + ec.message());
    fs::remove_all(stage_, ec);
    fs::create_directories(stage_, ec);
    if (ec) throw IoError(stage_, "cannot create staging directory: " + ec.message());
  }
  StagedOutput(const StagedOutput&) = delete;
  StagedOutput& operator=(const StagedOutput&) = delete;
  ~StagedOutput() {
    std::error_code ec;
    fs::remove_all(stage_, ec);
  }

  fs::path path(const std::string& name) {
    names_.push_back(name);
    return stage_ / name;
  }

  void commit() {
    for (const auto& n : names_) {
      std::error_code ec;
      fs::rename(stage_ / n, out_ / n, ec);
      if (ec) throw IoError(out_ / n, "cannot move into place: " + ec.message());
    }
  }

 private:
  fs::path out_;
  fs::path stage_;
  std::vector<std::string> names_;
};

inline void write_grids(StagedOutput& st, const ExperimentConfig& cfg, std::span<const double> best) {
  const GridSpec g = effective_grid(cfg);
  const auto truth = field_grid(heaters_of(cfg.truth), g.region, g.nx, g.ny, cfg.sensors.wall, cfg.quad_n);
  write_grid(truth, st.path("truth_grid.csv"), {{"source", "truth"}});
  st.path("truth_grid.meta.json");
  if (!best.empty()) {
    const auto est = field_grid(heaters_of(best, cfg.estimator.n_heaters), g.region, g.nx, g.ny, cfg.sensors.wall,
                                cfg.quad_n);
    write_grid(est, st.path("best_grid.csv"), {{"source", "best_component_mean"}});
    st.path("best_grid.meta.json");
  }
}

}  // namespace detail

inline void write_observation(const Observation& obs, const SensorArray& sensors, const fs::path& path) {
  auto f = open_for_write(path);
  f << "x,y,temperature\n";
  for (std::size_t a = 0; a < sensors.size(); ++a) {
    f << format_double(sensors.points[a].x) << ',' << format_double(sensors.points[a].y) << ','
      << format_double(obs.values[a]) << '\n';
  }
  check_written(f, path);
}

inline void write_report(const RunReport& r, const fs::path& path) { write_json(report_json(r), path); }

/// synthesize -> sample -> fit -> PCA; writes samples.csv, report.json,
/// observation.csv and (if configured) truth/best grids into `out`.
inline RunReport run_experiment(const ExperimentConfig& cfg, const std::optional<fs::path>& out = std::nullopt) {
  const Observation obs = synthesize(cfg);
  require_signal(cfg, obs);
  RunReport r = infer(cfg, obs);
  if (out) {
    detail::StagedOutput st(*out);
    write_samples(r.samples.samples, r.labels, st.path("samples.csv"));
    write_observation(obs, r.sensors, st.path("observation.csv"));
    write_report(r, st.path("report.json"));
    if (cfg.grid) detail::write_grids(st, cfg, r.best_mean());
    st.commit();
  }
  return r;
}

/// Regenerates truth and best-estimate grids from a saved report.
inline void replot(const json& report, const fs::path& out) {
  const auto errs = validate_report(report);
  if (!errs.empty()) throw ExperimentError("invalid report: " + errs.front());
  const ExperimentConfig cfg = parse_config(report.at("config"));
  const auto best = report.at("best_mean").get<std::vector<double>>();
  detail::StagedOutput st(out);
  detail::write_grids(st, cfg, best);
  st.commit();
}

}  // namespace heatsrc

#endif  // HEATSRC_HARNESS_HPP
