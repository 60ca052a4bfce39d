#ifndef HEATSRC_SAMPLER_HPP
#define HEATSRC_SAMPLER_HPP

// Random-walk Metropolis-Hastings with parallel tempering.
//
// Chain i targets pi(x)^beta_i with beta_i = base^p_i; the last chain has
// p = 0 and samples the posterior itself. Each chain owns an independent
// seeded stream and swaps use a separate stream, so results do not depend
// on how chains are scheduled across threads.

#include <Eigen/Dense>

#include <algorithm>
#include <barrier>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <iostream>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "heatsrc/random.hpp"

namespace heatsrc {

/// Target requirements: log density (may be -inf), dimension, canonical
/// relabeling, support test and a draw of a starting point.
template <class T>
concept SamplingTarget = requires(const T& t, std::span<const double> x, Rng& rng) {
  { t(x) } -> std::convertible_to<double>;
  { t.dim() } -> std::convertible_to<std::size_t>;
  { t.canonical(x) } -> std::convertible_to<std::vector<double>>;
  { t.in_support(x) } -> std::convertible_to<bool>;
  { t.draw_initial(rng) } -> std::convertible_to<std::vector<double>>;
};

struct McmcSchedule {
  std::size_t phase1_steps = 10'000;
  double phase1_var = 1e-4;
  std::size_t phase2_steps = 500'000;
  double phase2_var = 2.5e-5;
  double burn_in_fraction = 0.5;
  std::size_t thin = 100;
  std::size_t swap_interval = 10;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::size_t progress_interval = 10'000;  // 0 disables progress lines
  std::vector<double> component_scales;    // optional per-component proposal std multipliers

  /// Paper-length run shortened tenfold with the same retained count.
  static McmcSchedule desk_scale() {
    McmcSchedule s;
    s.phase2_steps = 50'000;
    s.thin = 10;
    return s;
  }

  std::size_t burn_in() const {
    return static_cast<std::size_t>(std::floor(burn_in_fraction * static_cast<double>(phase2_steps)));
  }

  std::size_t retained_count() const {
    const std::size_t b = burn_in();
    return b >= phase2_steps ? 0 : (phase2_steps - b + thin - 1) / thin;
  }

  void validate() const {
    if (phase1_steps == 0 || phase2_steps == 0) throw std::invalid_argument("schedule: step counts must be positive");
    if (!(phase1_var > 0.0) || !(phase2_var > 0.0)) throw std::invalid_argument("schedule: variances must be positive");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) {
      throw std::invalid_argument("schedule: burn_in_fraction must be in [0, 1)");
    }
    if (thin == 0) throw std::invalid_argument("schedule: thin must be at least 1");
    if (swap_interval == 0) throw std::invalid_argument("schedule: swap_interval must be at least 1");
    for (double s : component_scales) {
      if (!(s > 0.0)) throw std::invalid_argument("schedule: component scales must be positive");
    }
  }
};

struct ChainLadder {
  std::vector<int> exponents{-4, -3, -2, -1, 0};
  double base = 5.0;
  std::vector<std::vector<double>> states;
  std::vector<double> log_posts;  // untempered
  std::vector<Rng> rngs;
  Rng swap_rng;

  ChainLadder() = default;
  ChainLadder(std::vector<int> p, double b) : exponents(std::move(p)), base(b) {}

  std::size_t size() const { return exponents.size(); }
  std::size_t cold() const { return exponents.size() - 1; }
  double beta(std::size_t i) const { return std::pow(base, exponents.at(i)); }

  void validate() const {
    if (exponents.empty()) throw std::invalid_argument("ladder: need at least one chain");
    if (!(base > 1.0)) throw std::invalid_argument("ladder: base must exceed 1");
    for (std::size_t i = 1; i < exponents.size(); ++i) {
      if (exponents[i] <= exponents[i - 1]) throw std::invalid_argument("ladder: exponents must increase");
    }
    if (exponents.back() != 0) throw std::invalid_argument("ladder: last exponent must be 0");
  }

  void seed_streams(std::uint64_t seed) {
    rngs.clear();
    for (std::size_t i = 0; i < size(); ++i) rngs.push_back(make_stream(seed, stream::kChain, i));
    swap_rng = make_stream(seed, stream::kSwap);
  }

  /// Seeds streams and draws starting states. The cold chain uses `initial`
  /// when given and inside the support.
  template <SamplingTarget Target>
  void initialize(const Target& target, std::uint64_t seed, std::span<const double> initial = {}) {
    validate();
    seed_streams(seed);
    states.assign(size(), {});
    log_posts.assign(size(), 0.0);
    for (std::size_t i = 0; i < size(); ++i) {
      std::vector<double> x;
      if (i == cold() && initial.size() == target.dim() && target.in_support(initial)) {
        x.assign(initial.begin(), initial.end());
      }
      // Retry until the state has finite density (e.g. valid geometry).
      for (int attempt = 0; attempt < 10'000; ++attempt) {
        if (x.empty()) x = target.draw_initial(rngs[i]);
        x = target.canonical(x);
        const double lp = target(x);
        if (std::isfinite(lp)) {
          states[i] = std::move(x);
          log_posts[i] = lp;
          break;
        }
        x.clear();
      }
      if (states[i].empty()) throw std::runtime_error("ladder: could not find a starting state with finite density");
    }
  }
};

struct SampleSet {
  Eigen::MatrixXd samples;  // rows = retained cold-chain draws
  std::vector<double> acceptance_phase1;  // per chain
  std::vector<double> acceptance_phase2;  // per chain
  std::vector<double> swap_rates;         // per adjacent pair (i, i+1)
  std::vector<double> betas;
};

/// x + N(0, var * diag(scale^2)).
inline std::vector<double> propose(std::span<const double> x, double var, Rng& rng,
                                   std::span<const double> scales = {}) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = std::sqrt(var);
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = scales.empty() ? sd : sd * scales[i];
    out[i] += s * normal(rng);
  }
  return out;
}

/// Metropolis acceptance for the log-ratio `log_ratio`; always consumes one
/// uniform draw so streams stay aligned.
inline bool metropolis_accept(double log_ratio, Rng& rng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng);
  if (log_ratio >= 0.0) return true;
  return u < std::exp(log_ratio);
}

template <SamplingTarget Target>
bool mh_step(std::size_t chain, ChainLadder& ladder, const Target& target, double var,
             std::span<const double> scales = {}) {
  Rng& rng = ladder.rngs[chain];
  auto cand = target.canonical(propose(ladder.states[chain], var, rng, scales));
  const double lp = target(cand);
  const double delta = lp == -std::numeric_limits<double>::infinity()
                           ? lp
                           : ladder.beta(chain) * (lp - ladder.log_posts[chain]);
  if (!metropolis_accept(delta, rng)) return false;
  ladder.states[chain] = std::move(cand);
  ladder.log_posts[chain] = lp;
  return true;
}

/// One replica-exchange sweep over adjacent pairs, cold end first.
inline std::vector<bool> swap_step(ChainLadder& ladder) {
  if (ladder.size() < 2) throw std::invalid_argument("swap_step: need at least two chains");
  std::vector<bool> swapped(ladder.size() - 1, false);
  for (std::size_t k = ladder.size() - 1; k-- > 0;) {
    const std::size_t i = k, j = k + 1;
    const double log_ratio = (ladder.beta(i) - ladder.beta(j)) * (ladder.log_posts[j] - ladder.log_posts[i]);
    if (metropolis_accept(std::isnan(log_ratio) ? 0.0 : log_ratio, ladder.swap_rng)) {
      std::swap(ladder.states[i], ladder.states[j]);
      std::swap(ladder.log_posts[i], ladder.log_posts[j]);
      swapped[k] = true;
    }
  }
  return swapped;
}

/// Runs both phases and returns the retained cold-chain draws.
template <SamplingTarget Target>
SampleSet run(ChainLadder& ladder, const Target& target, const McmcSchedule& schedule,
              std::span<const double> initial = {}) {
  schedule.validate();
  if (!schedule.component_scales.empty() && schedule.component_scales.size() != target.dim()) {
    throw std::invalid_argument("run: component_scales length must match the state dimension");
  }
  ladder.initialize(target, schedule.seed, initial);

  const std::size_t n = ladder.size();
  const std::size_t cold = ladder.cold();
  const std::size_t burn = schedule.burn_in();
  const std::size_t dim = target.dim();
  const std::span<const double> scales = schedule.component_scales;

  SampleSet out;
  for (std::size_t i = 0; i < n; ++i) out.betas.push_back(ladder.beta(i));
  std::vector<std::vector<double>> kept;
  kept.reserve(schedule.retained_count());
  std::vector<std::size_t> swap_total(n > 0 ? n - 1 : 0, 0);
  std::size_t swap_rounds = 0;

  for (int phase = 1; phase <= 2; ++phase) {
    const std::size_t steps = phase == 1 ? schedule.phase1_steps : schedule.phase2_steps;
    const double var = phase == 1 ? schedule.phase1_var : schedule.phase2_var;
    std::vector<std::size_t> accepted(n, 0);

    // Steps [begin, end) for chain i; the cold chain records retained draws.
    auto advance = [&](std::size_t i, std::size_t begin, std::size_t end) {
      for (std::size_t s = begin; s < end; ++s) {
        if (mh_step(i, ladder, target, var, scales)) ++accepted[i];
        if (phase == 2 && i == cold && s >= burn && (s - burn) % schedule.thin == 0) kept.push_back(ladder.states[i]);
      }
    };
    auto between_blocks = [&](std::size_t end) {
      if (n >= 2 && end % schedule.swap_interval == 0) {
        const auto sw = swap_step(ladder);
        for (std::size_t k = 0; k < sw.size(); ++k) swap_total[k] += sw[k] ? 1 : 0;
        ++swap_rounds;
      }
      if (schedule.progress_interval > 0 && end % schedule.progress_interval == 0) {
        std::cerr << "phase " << phase << " step " << end << "/" << steps << " accept";
        for (std::size_t i = 0; i < n; ++i) {
          std::cerr << ' ' << static_cast<double>(accepted[i]) / static_cast<double>(end);
        }
        std::cerr << " swap";
        for (std::size_t k = 0; k < swap_total.size(); ++k) {
          std::cerr << ' ' << (swap_rounds ? static_cast<double>(swap_total[k]) / static_cast<double>(swap_rounds) : 0.0);
        }
        std::cerr << '\n';
      }
    };

    const std::size_t block = schedule.swap_interval;
    const std::size_t n_blocks = (steps + block - 1) / block;
    const std::size_t workers = std::clamp<std::size_t>(schedule.threads, 1, n);

    if (workers == 1) {
      for (std::size_t b = 0; b < n_blocks; ++b) {
        const std::size_t begin = b * block, end = std::min(steps, begin + block);
        for (std::size_t i = 0; i < n; ++i) advance(i, begin, end);
        between_blocks(end);
      }
    } else {
      std::size_t current = 0;
      auto on_block_done = [&]() noexcept {
        const std::size_t end = std::min(steps, (current + 1) * block);
        between_blocks(end);
        ++current;
      };
      std::barrier sync(static_cast<std::ptrdiff_t>(workers), on_block_done);
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          for (std::size_t b = 0; b < n_blocks; ++b) {
            const std::size_t begin = b * block, end = std::min(steps, begin + block);
            for (std::size_t i = w; i < n; i += workers) advance(i, begin, end);
            sync.arrive_and_wait();
          }
        });
      }
    }

    auto& rates = phase == 1 ? out.acceptance_phase1 : out.acceptance_phase2;
    for (std::size_t i = 0; i < n; ++i) rates.push_back(static_cast<double>(accepted[i]) / static_cast<double>(steps));
  }

  for (std::size_t k = 0; k < swap_total.size(); ++k) {
    out.swap_rates.push_back(swap_rounds ? static_cast<double>(swap_total[k]) / static_cast<double>(swap_rounds) : 0.0);
  }
  if (kept.empty()) throw std::runtime_error("run: no samples retained");
  out.samples.resize(static_cast<Eigen::Index>(kept.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < kept.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) out.samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = kept[r][c];
  }
  return out;
}

}  // namespace heatsrc

#endif  // HEATSRC_SAMPLER_HPP
