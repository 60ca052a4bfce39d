// heatsrc: twin experiments for Bayesian heat-source localization.
//
//   heatsrc synth  --config c.json --out dir      observation only
//   heatsrc run    --config c.json --out dir      full experiment
//   heatsrc grid   --config c.json --out dir [--state x0,y0,q,c1,c2,...]
//   heatsrc fit    --config c.json --samples samples.csv --out dir
//   heatsrc replot --report report.json --out dir
//
// Failures print one JSON object on stderr ({"error": kind, ...}) and exit
// nonzero.

#include <CLI11.hpp>

#include <cstdint>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "heatsrc/harness.hpp"

namespace {

using namespace heatsrc;

struct Options {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> threads;
  bool quiet = false;
  std::string state;
  std::string samples;
  std::string report;
  std::optional<std::size_t> k;
};

ExperimentConfig configured(const Options& o) {
  ExperimentConfig cfg = load_config(o.config);
  if (o.seed) cfg.seed = cfg.schedule.seed = *o.seed;
  if (o.steps) cfg.schedule.phase2_steps = *o.steps;
  if (o.threads) cfg.schedule.threads = *o.threads;
  if (o.quiet) cfg.schedule.progress_interval = 0;
  if (o.k) cfg.gmm_k = *o.k;
  try {
    cfg.schedule.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("schedule", e.what());
  }
  return cfg;
}

std::vector<double> parse_state(const std::string& s) {
  std::vector<double> x;
  for (auto tok : split_csv_line(s)) x.push_back(parse_double(tok, "--state"));
  return x;
}

int cmd_synth(const Options& o) {
  const ExperimentConfig cfg = configured(o);
  const Observation obs = synthesize(cfg);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_observation(obs, cfg.sensor_array(), out / "observation.csv");
  write_json({{"config", config_json(cfg)}, {"values", obs.values}, {"noise_sigma", obs.noise_sigma}},
             out / "observation.json");
  return 0;
}

int cmd_run(const Options& o) {
  const ExperimentConfig cfg = configured(o);
  const RunReport r = run_experiment(cfg, fs::path(o.out));
  if (!o.quiet) {
    std::cerr << "best component " << r.best_index << ":";
    for (double v : r.best_mean()) std::cerr << ' ' << format_double(v);
    std::cerr << "\nmax uncertainty length " << format_double(r.pca_of_best.max_uncertainty_length) << '\n';
  }
  return 0;
}

int cmd_grid(const Options& o) {
  const ExperimentConfig cfg = configured(o);
  std::vector<Heater> heaters;
  if (o.state.empty()) {
    heaters = heaters_of(cfg.truth);
  } else {
    const auto x = parse_state(o.state);
    if (x.size() % kBlockSize != 0 || x.empty()) {
      throw ConfigError("--state", "expected a multiple of 5 values (x0,y0,q,c1,c2 per heater)");
    }
    heaters = heaters_of(x, x.size() / kBlockSize);
  }
  const GridSpec g = effective_grid(cfg);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_grid(field_grid(heaters, g.region, g.nx, g.ny, cfg.sensors.wall, cfg.quad_n), out / "grid.csv");
  return 0;
}

int cmd_fit(const Options& o) {
  const ExperimentConfig cfg = configured(o);
  const SamplesFile sf = read_samples(o.samples);
  const auto expected = state_labels(cfg.estimator.dim());
  if (sf.labels != expected) {
    throw ConfigError("--samples", "column labels do not match the estimator in the config");
  }
  const Observation obs = synthesize(cfg);
  LogPosterior target(cfg.estimator, obs, cfg.sensor_array(), cfg.quad_n);
  const MixtureSummary m = summarize(sf.samples, target, cfg.gmm_k, cfg.seed);
  json j = mixture_json(m, expected);
  const auto& mu = m.gmm.means[m.best_index];
  j["best_mean"] = std::vector<double>(mu.data(), mu.data() + mu.size());
  j["samples"] = sf.samples.rows();
  const fs::path out(o.out);
  fs::create_directories(out);
  write_json(j, out / "fit.json");
  return 0;
}

int cmd_replot(const Options& o) {
  replot(read_json(o.report), fs::path(o.out));
  return 0;
}

void fail(const char* kind, const std::string& message, const std::string& path = {}) {
  json e{{"error", kind}, {"message", message}};
  if (!path.empty()) e["path"] = path;
  std::cerr << e.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian localization of uniform heat sources from sensor temperatures"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", o.config, "experiment config (JSON)")->check(CLI::ExistingFile);
    if (needs_config) c->required();
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "master seed (overrides config)");
    sub->add_option("--steps", o.steps, "phase-2 steps (overrides config)");
    sub->add_option("--threads", o.threads, "worker threads for the chain ladder");
    sub->add_option("--k", o.k, "mixture components (overrides config)");
    sub->add_flag("--quiet", o.quiet, "suppress progress lines");
  };

  auto* synth = app.add_subcommand("synth", "write the synthetic observation");
  common(synth, true);
  auto* run = app.add_subcommand("run", "synthesize, sample, fit and report");
  common(run, true);
  auto* grid = app.add_subcommand("grid", "export the temperature field on the configured grid");
  common(grid, true);
  grid->add_option("--state", o.state, "comma-separated state x0,y0,q,c1,c2[,...] (default: truth)");
  auto* fit = app.add_subcommand("fit", "fit the mixture and PCA to an existing samples.csv");
  common(fit, true);
  fit->add_option("--samples", o.samples, "samples.csv")->required()->check(CLI::ExistingFile);
  auto* rp = app.add_subcommand("replot", "regenerate grids from report.json");
  rp->add_option("--report", o.report, "report.json")->required()->check(CLI::ExistingFile);
  rp->add_option("--out", o.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    fail("usage", e.what());
    return 2;
  }

  try {
    if (*synth) return cmd_synth(o);
    if (*run) return cmd_run(o);
    if (*grid) return cmd_grid(o);
    if (*fit) return cmd_fit(o);
    if (*rp) return cmd_replot(o);
  } catch (const ConfigError& e) {
    fail("config", e.what(), e.path());
    return 3;
  } catch (const IoError& e) {
    fail("io", e.what());
    return 4;
  } catch (const ExperimentError& e) {
    fail("experiment", e.what());
    return 5;
  } catch (const GeometryError& e) {
    fail("geometry", e.what());
    return 6;
  } catch (const std::exception& e) {
    fail("internal", e.what());
    return 1;
  }
  return 1;
}
