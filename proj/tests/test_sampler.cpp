#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "heatsrc/bayes.hpp"
#include "heatsrc/sampler.hpp"

using namespace heatsrc;

namespace {

/// Isotropic Gaussian restricted to a box.
struct GaussianTarget {
  std::vector<double> mean;
  double sd = 1.0;
  double half_width = 10.0;

  double operator()(std::span<const double> x) const {
    if (!in_support(x)) return kNegInf;
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mean[i]) * (x[i] - mean[i]);
    return -0.5 * s / (sd * sd);
  }
  std::size_t dim() const { return mean.size(); }
  std::vector<double> canonical(std::span<const double> x) const { return {x.begin(), x.end()}; }
  bool in_support(std::span<const double> x) const {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (std::abs(x[i] - mean[i]) > half_width) return false;
    }
    return true;
  }
  std::vector<double> draw_initial(Rng& rng) const {
    std::uniform_real_distribution<double> u(-half_width, half_width);
    std::vector<double> x(dim());
    for (std::size_t i = 0; i < dim(); ++i) x[i] = mean[i] + u(rng);
    return x;
  }
};

/// Equal mixture of N(-1, s^2) and N(1, s^2) on [-2, 2].
struct BimodalTarget {
  double s = 0.05;
  double operator()(std::span<const double> x) const {
    if (!in_support(x)) return kNegInf;
    const double a = -0.5 * std::pow((x[0] + 1) / s, 2), b = -0.5 * std::pow((x[0] - 1) / s, 2);
    const double m = std::max(a, b);
    return m + std::log(std::exp(a - m) + std::exp(b - m));
  }
  std::size_t dim() const { return 1; }
  std::vector<double> canonical(std::span<const double> x) const { return {x.begin(), x.end()}; }
  bool in_support(std::span<const double> x) const { return std::abs(x[0]) <= 2.0; }
  std::vector<double> draw_initial(Rng& rng) const { return {std::uniform_real_distribution<double>(-2, 2)(rng)}; }
};

static_assert(SamplingTarget<GaussianTarget>);
static_assert(SamplingTarget<LogPosterior>);

McmcSchedule quick(std::size_t p1, double v1, std::size_t p2, double v2, std::size_t thin) {
  McmcSchedule s;
  s.phase1_steps = p1;
  s.phase1_var = v1;
  s.phase2_steps = p2;
  s.phase2_var = v2;
  s.thin = thin;
  s.progress_interval = 0;
  return s;
}

/// Two-heater posterior with a cheap schedule, used for structural checks.
LogPosterior two_heater_target() {
  const SensorArray sensors{{{-1, 0}, {-0.5, 0}, {0, 0}, {0.5, 0}, {1, 0}}, Wall::Unbounded};
  const std::vector<HeaterState> truth{{0.5, 0.8, 1.0, 0.3, 0.1}, {-0.6, 0.6, 2.0, 0.25, 0.0}};
  std::vector<Heater> hs;
  for (const auto& t : truth) hs.push_back(t.heater());
  return LogPosterior(StateSpec(2), Observation{observe(hs, sensors), 5e-3}, sensors);
}

}  // namespace

TEST(Propose, ZeroVarianceLimit) {
  Rng rng(1);
  const std::vector<double> x{0.1, -0.2, 3.0};
  const auto y = propose(x, 1e-300, rng);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(y[i], x[i], 1e-140);
}

TEST(Propose, Deterministic) {
  Rng a = make_stream(42, stream::kChain, 2), b = make_stream(42, stream::kChain, 2);
  const std::vector<double> x{0.0, 1.0};
  EXPECT_EQ(propose(x, 1e-4, a), propose(x, 1e-4, b));
  Rng c = make_stream(42, stream::kChain, 3);
  EXPECT_NE(propose(x, 1e-4, a), propose(x, 1e-4, c));
}

TEST(Propose, SampleVarianceMatches) {
  Rng rng = make_stream(5, stream::kChain, 0);
  const std::vector<double> x{1.0, -2.0, 0.5};
  const double var = 2.5e-5;
  const int n = 100000;
  std::vector<double> s1(3, 0.0), s2(3, 0.0);
  for (int t = 0; t < n; ++t) {
    const auto y = propose(x, var, rng);
    for (int i = 0; i < 3; ++i) {
      s1[i] += y[i] - x[i];
      s2[i] += (y[i] - x[i]) * (y[i] - x[i]);
    }
  }
  for (int i = 0; i < 3; ++i) {
    const double m = s1[i] / n, v = s2[i] / n - m * m;
    EXPECT_NEAR(v / var, 1.0, 0.05);
  }
}

TEST(Propose, ComponentScales) {
  Rng rng(3);
  const std::vector<double> x{0.0, 0.0}, scales{1.0, 0.0};
  const auto y = propose(x, 1.0, rng, scales);
  EXPECT_NE(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(MetropolisAccept, Limits) {
  Rng rng(7);
  for (int t = 0; t < 1000; ++t) {
    EXPECT_TRUE(metropolis_accept(0.5, rng));
    EXPECT_TRUE(metropolis_accept(0.0, rng));
    EXPECT_FALSE(metropolis_accept(kNegInf, rng));
  }
}

TEST(MetropolisAccept, RateAtMinusOne) {
  Rng rng = make_stream(9, stream::kChain, 0);
  const int n = 100000;
  int acc = 0;
  for (int t = 0; t < n; ++t) acc += metropolis_accept(-1.0, rng) ? 1 : 0;
  EXPECT_NEAR(static_cast<double>(acc) / n / std::exp(-1.0), 1.0, 0.02);
}

TEST(MhStep, UphillAlwaysAndNegInfNever) {
  // Target increasing in x on [-10, 10]; a chain at the left wall moves right.
  GaussianTarget g{{0.0}, 1.0, 10.0};
  ChainLadder ladder({0}, 5.0);
  ladder.initialize(g, 1, std::vector<double>{-9.9});
  int uphill_tries = 0, uphill_acc = 0;
  for (int t = 0; t < 2000; ++t) {
    const auto before = ladder.states[0];
    Rng probe = ladder.rngs[0];
    const auto cand = propose(before, 1e-4, probe);
    const bool up = g(cand) > g(before);
    const bool acc = mh_step(0, ladder, g, 1e-4);
    if (up) {
      ++uphill_tries;
      uphill_acc += acc ? 1 : 0;
    }
  }
  EXPECT_GT(uphill_tries, 100);
  EXPECT_EQ(uphill_acc, uphill_tries);

  GaussianTarget edge{{0.0}, 1.0, 1e-9};
  ChainLadder l2({0}, 5.0);
  l2.initialize(edge, 1, std::vector<double>{0.0});
  for (int t = 0; t < 100; ++t) EXPECT_FALSE(mh_step(0, l2, edge, 1.0));
}

TEST(SwapStep, EqualLogPosteriorAlwaysSwaps) {
  ChainLadder ladder({-1, 0}, 5.0);
  ladder.seed_streams(1);
  ladder.states = {{1.0}, {2.0}};
  ladder.log_posts = {-3.0, -3.0};
  for (int t = 0; t < 100; ++t) EXPECT_TRUE(swap_step(ladder)[0]);
}

TEST(SwapStep, HotterChainHigherAlwaysSwaps) {
  ChainLadder ladder({-1, 0}, 5.0);
  ladder.seed_streams(1);
  ladder.states = {{1.0}, {2.0}};
  ladder.log_posts = {-1.0, -5.0};
  const auto sw = swap_step(ladder);
  EXPECT_TRUE(sw[0]);
  EXPECT_EQ(ladder.states[1], std::vector<double>{1.0});
  EXPECT_EQ(ladder.log_posts[1], -1.0);
}

TEST(SwapStep, RateForUnitGap) {
  ChainLadder ladder({-1, 0}, 5.0);
  ladder.seed_streams(11);
  const int n = 100000;
  int acc = 0;
  for (int t = 0; t < n; ++t) {
    ladder.states = {{0.0}, {1.0}};
    ladder.log_posts = {-1.0, 0.0};  // hot chain lower by 1
    acc += swap_step(ladder)[0] ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(acc) / n / std::exp(-0.8), 1.0, 0.02);
}

TEST(SwapStep, NeedsTwoChains) {
  ChainLadder ladder({0}, 5.0);
  EXPECT_THROW(swap_step(ladder), std::invalid_argument);
}

TEST(ChainLadder, Defaults) {
  ChainLadder l;
  EXPECT_EQ(l.size(), 5u);
  EXPECT_DOUBLE_EQ(l.beta(0), std::pow(5.0, -4));
  EXPECT_EQ(l.beta(l.cold()), 1.0);
  EXPECT_NO_THROW(l.validate());
  EXPECT_THROW(ChainLadder({-1, -2, 0}, 5.0).validate(), std::invalid_argument);
  EXPECT_THROW(ChainLadder({-2, -1}, 5.0).validate(), std::invalid_argument);
  EXPECT_THROW(ChainLadder({-1, 0}, 1.0).validate(), std::invalid_argument);
}

TEST(McmcSchedule, RetainedCounts) {
  EXPECT_EQ(McmcSchedule{}.retained_count(), 2500u);
  EXPECT_EQ(McmcSchedule::desk_scale().retained_count(), 2500u);
  McmcSchedule bad;
  bad.thin = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.burn_in_fraction = 1.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(DetailedBalance, ThreeStateChain) {
  const double pi[3] = {0.2, 0.3, 0.5};
  Rng rng = make_stream(21, stream::kChain, 0);
  std::uniform_int_distribution<int> pick(1, 2);
  int state = 0;
  std::vector<double> visits(3, 0.0);
  const int n = 1000000;
  for (int t = 0; t < n; ++t) {
    const int cand = (state + pick(rng)) % 3;  // symmetric proposal
    if (metropolis_accept(std::log(pi[cand]) - std::log(pi[state]), rng)) state = cand;
    visits[static_cast<std::size_t>(state)] += 1.0;
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(visits[static_cast<std::size_t>(i)] / n / pi[i], 1.0, 0.01) << i;
}

TEST(Run, GaussianCalibration) {
  const GaussianTarget g{{0.3, -0.2, 0.1}, 0.01, 0.5};
  ChainLadder ladder;
  auto sched = quick(10000, 1e-4, 100000, 2e-4, 20);
  sched.seed = 123;
  const auto out = run(ladder, g, sched);
  const Eigen::MatrixXd& s = out.samples;
  ASSERT_EQ(s.rows(), 2500);
  const Eigen::RowVectorXd mean = s.colwise().mean();
  // Batch-means standard error (50 batches of 50 thinned draws).
  const int batches = 50, per = static_cast<int>(s.rows()) / batches;
  for (int c = 0; c < 3; ++c) {
    double bm = 0.0, bm2 = 0.0;
    for (int b = 0; b < batches; ++b) {
      const double m = s.col(c).segment(b * per, per).mean();
      bm += m;
      bm2 += m * m;
    }
    bm /= batches;
    const double se = std::sqrt((bm2 / batches - bm * bm) / (batches - 1));
    EXPECT_LT(std::abs(mean(c) - g.mean[static_cast<std::size_t>(c)]), 3 * se) << c;
  }
  const Eigen::MatrixXd centered = s.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(s.rows() - 1);
  const Eigen::MatrixXd want = Eigen::MatrixXd::Identity(3, 3) * g.sd * g.sd;
  EXPECT_LT((cov - want).norm() / want.norm(), 0.10);
}

TEST(Run, TemperingVisitsBothModes) {
  const BimodalTarget t;
  auto sched = quick(2000, 1e-3, 40000, 1e-3, 10);
  sched.seed = 5;
  ChainLadder tempered;
  const auto a = run(tempered, t, sched);
  const double left = (a.samples.col(0).array() < 0).cast<double>().mean();
  EXPECT_GE(left, 0.10);
  EXPECT_LE(left, 0.90);
  // Without tempering the cold chain stays in its starting mode.
  ChainLadder single({0}, 5.0);
  const auto b = run(single, t, sched);
  const double left_single = (b.samples.col(0).array() < 0).cast<double>().mean();
  EXPECT_TRUE(left_single == 0.0 || left_single == 1.0);
}

TEST(Run, DeterministicAndThreadIndependent) {
  const auto target = two_heater_target();
  auto sched = quick(200, 1e-4, 600, 2.5e-5, 3);
  sched.seed = 77;
  ChainLadder l1, l2, l3;
  const auto a = run(l1, target, sched);
  const auto b = run(l2, target, sched);
  sched.threads = 3;
  const auto c = run(l3, target, sched);
  ASSERT_EQ(a.samples.rows(), 100);
  EXPECT_TRUE(a.samples == b.samples);
  EXPECT_TRUE(a.samples == c.samples);
  EXPECT_EQ(a.acceptance_phase2, c.acceptance_phase2);
  EXPECT_EQ(a.swap_rates, c.swap_rates);
  sched.seed = 78;
  ChainLadder l4;
  EXPECT_FALSE(a.samples == run(l4, target, sched).samples);
}

TEST(Run, RetainedSamplesFiniteCanonicalAndCachesCoherent) {
  const auto target = two_heater_target();
  auto sched = quick(200, 1e-4, 600, 2.5e-5, 1);
  sched.seed = 3;
  ChainLadder ladder;
  const auto out = run(ladder, target, sched);
  for (Eigen::Index r = 0; r < out.samples.rows(); ++r) {
    std::vector<double> x;
    for (Eigen::Index c = 0; c < 10; ++c) x.push_back(out.samples(r, c));
    EXPECT_TRUE(std::isfinite(target(x)));
    EXPECT_TRUE(target.in_support(x));
    EXPECT_LE(x[2], x[7]);
  }
  for (std::size_t i = 0; i < ladder.size(); ++i) {
    EXPECT_NEAR(target(ladder.states[i]), ladder.log_posts[i], 1e-12 * std::max(1.0, std::abs(ladder.log_posts[i])));
  }
}

TEST(Run, AcceptanceDecreasesWithProposalVariance) {
  const GaussianTarget g{{0.0, 0.0, 0.0}, 0.05, 1.0};
  double prev = 1.1;
  for (double var : {1e-4, 1e-3, 1e-2}) {
    auto sched = quick(1000, var, 20000, var, 10);
    sched.seed = 8;
    ChainLadder ladder;
    const double acc = run(ladder, g, sched).acceptance_phase2.back();
    EXPECT_LE(acc, prev);
    prev = acc;
  }
}

TEST(Run, InitialOutsideSupportIsResampled) {
  const GaussianTarget g{{0.0}, 1.0, 1.0};
  auto sched = quick(10, 1e-2, 20, 1e-2, 1);
  ChainLadder ladder;
  const std::vector<double> bad{5.0};
  EXPECT_NO_THROW(run(ladder, g, sched, bad));
  for (const auto& s : ladder.states) EXPECT_TRUE(g.in_support(s));
}

TEST(Run, InitialUsedWhenValid) {
  const GaussianTarget g{{0.0}, 1.0, 1.0};
  ChainLadder ladder;
  ladder.initialize(g, 1, std::vector<double>{0.25});
  EXPECT_EQ(ladder.states[ladder.cold()], std::vector<double>{0.25});
}

TEST(Run, ComponentScalesLengthChecked) {
  const GaussianTarget g{{0.0, 0.0}, 1.0, 1.0};
  auto sched = quick(10, 1e-2, 20, 1e-2, 1);
  sched.component_scales = {1.0};
  ChainLadder ladder;
  EXPECT_THROW(run(ladder, g, sched), std::invalid_argument);
}
