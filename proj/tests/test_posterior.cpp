#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "heatsrc/posterior.hpp"

using namespace heatsrc;
using std::numbers::pi;

namespace {

Eigen::MatrixXd gaussian_cloud(std::size_t n, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, Rng& rng) {
  const Eigen::MatrixXd l = cov.llt().matrixL();
  std::normal_distribution<double> z;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), mean.size());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    Eigen::VectorXd e(mean.size());
    for (Eigen::Index d = 0; d < e.size(); ++d) e(d) = z(rng);
    out.row(i) = (mean + l * e).transpose();
  }
  return out;
}

Eigen::MatrixXd two_clusters(std::size_t per, Rng& rng) {
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(2, 2);
  Eigen::MatrixXd a = gaussian_cloud(per, Eigen::Vector2d(-5, -5), id, rng);
  Eigen::MatrixXd b = gaussian_cloud(per, Eigen::Vector2d(5, 5), id, rng);
  Eigen::MatrixXd out(a.rows() + b.rows(), 2);
  out << a, b;
  return out;
}

double weight_sum(const GaussianMixture& g) {
  double s = 0.0;
  for (double w : g.weights) s += w;
  return s;
}

}  // namespace

TEST(FitGmm, SingleComponentIsSampleMoments) {
  Rng rng(1);
  Eigen::Matrix3d cov;
  cov << 2, 0.3, 0.1, 0.3, 1, -0.2, 0.1, -0.2, 0.5;
  const auto s = gaussian_cloud(2000, Eigen::Vector3d(1, -2, 0.5), cov, rng);
  Rng fit_rng(2);
  const auto g = fit_gmm(s, 1, fit_rng);
  ASSERT_EQ(g.size(), 1u);
  const Eigen::VectorXd mean = s.colwise().mean();
  const Eigen::MatrixXd c = s.rowwise() - mean.transpose();
  const Eigen::MatrixXd sample_cov = c.transpose() * c / static_cast<double>(s.rows());
  EXPECT_LT((g.means[0] - mean).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((g.covariances[0] - sample_cov).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_DOUBLE_EQ(g.weights[0], 1.0);
}

TEST(FitGmm, TwoClusters) {
  Rng rng(3);
  const auto s = two_clusters(500, rng);
  Rng fit_rng(4);
  const auto g = fit_gmm(s, 2, fit_rng);
  ASSERT_EQ(g.size(), 2u);
  const std::size_t lo = g.means[0](0) < g.means[1](0) ? 0 : 1;
  EXPECT_NEAR(g.weights[lo], 0.5, 0.05);
  EXPECT_NEAR(g.weights[1 - lo], 0.5, 0.05);
  EXPECT_LT((g.means[lo] - Eigen::Vector2d(-5, -5)).norm(), 0.1 * std::sqrt(2.0));
  EXPECT_LT((g.means[1 - lo] - Eigen::Vector2d(5, 5)).norm(), 0.1 * std::sqrt(2.0));
  EXPECT_NEAR(weight_sum(g), 1.0, 1e-12);
}

TEST(FitGmm, LogLikelihoodNonDecreasing) {
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    Rng rng(seed);
    Eigen::MatrixXd s = two_clusters(300, rng);
    s.col(1) += Eigen::VectorXd::LinSpaced(s.rows(), 0, 3);
    for (std::size_t k : {2u, 3u, 5u}) {
      Rng fit_rng(seed + 100);
      const auto g = fit_gmm(s, k, fit_rng);
      if (g.reseeded > 0) continue;  // a reseed restarts the ascent
      for (std::size_t i = 1; i < g.log_likelihood_trace.size(); ++i) {
        EXPECT_GE(g.log_likelihood_trace[i], g.log_likelihood_trace[i - 1] - 1e-10) << "k=" << k << " it=" << i;
      }
      EXPECT_NEAR(weight_sum(g), 1.0, 1e-12);
    }
  }
}

TEST(FitGmm, DegenerateDataKeepsProbabilityWeights) {
  // Many duplicate points force empty components.
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(60, 2);
  s.bottomRows(3).setConstant(1.0);
  Rng rng(8);
  const auto g = fit_gmm(s, 5, rng);
  EXPECT_GE(g.size(), 1u);
  EXPECT_LE(g.size(), 5u);
  EXPECT_NEAR(weight_sum(g), 1.0, 1e-12);
  for (double w : g.weights) EXPECT_GE(w, 0.0);
  for (const auto& c : g.covariances) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    EXPECT_GE(es.eigenvalues().minCoeff(), 1e-8 * (1 - 1e-9));
  }
}

TEST(FitGmm, InsufficientSamples) {
  Rng rng(1);
  EXPECT_THROW(fit_gmm(Eigen::MatrixXd::Zero(49, 2), 5, rng), std::invalid_argument);
  EXPECT_THROW(fit_gmm(Eigen::MatrixXd::Zero(50, 2), 0, rng), std::invalid_argument);
}

TEST(FitGmm, DeterministicForSeed) {
  Rng rng(9);
  const auto s = two_clusters(200, rng);
  Rng a(10), b(10);
  const auto ga = fit_gmm(s, 3, a), gb = fit_gmm(s, 3, b);
  ASSERT_EQ(ga.size(), gb.size());
  for (std::size_t k = 0; k < ga.size(); ++k) {
    EXPECT_EQ(ga.weights[k], gb.weights[k]);
    EXPECT_TRUE(ga.means[k] == gb.means[k]);
  }
}

TEST(GmmDensity, StandardNormalAtOrigin) {
  GaussianMixture g;
  g.weights = {1.0};
  g.means = {Eigen::VectorXd::Zero(3)};
  g.covariances = {Eigen::MatrixXd::Identity(3, 3)};
  EXPECT_NEAR(gmm_density(g, Eigen::VectorXd::Zero(3)), std::pow(2 * pi, -1.5), 1e-15);
  EXPECT_LT(gmm_density(g, Eigen::VectorXd::Constant(3, 4.0)), gmm_density(g, Eigen::VectorXd::Zero(3)));
}

TEST(GmmDensity, IntegratesToOne) {
  GaussianMixture g;
  g.weights = {0.3, 0.7};
  g.means = {Eigen::Vector2d(-1, 0.5), Eigen::Vector2d(1.5, -0.5)};
  Eigen::Matrix2d c0, c1;
  c0 << 0.5, 0.2, 0.2, 0.3;
  c1 << 0.2, -0.05, -0.05, 0.4;
  g.covariances = {c0, c1};
  const int n = 301;
  const double lo = -6, hi = 6, h = (hi - lo) / (n - 1);
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double wx = (i == 0 || i == n - 1) ? 0.5 : 1.0, wy = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      total += wx * wy * gmm_density(g, Eigen::Vector2d(lo + i * h, lo + j * h));
    }
  }
  EXPECT_NEAR(total * h * h, 1.0, 0.01);
}

TEST(GmmDensity, FarPointsAreStable) {
  GaussianMixture g;
  g.weights = {0.5, 0.5};
  g.means = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 1.0)};
  g.covariances = {Eigen::MatrixXd::Constant(1, 1, 1e-6), Eigen::MatrixXd::Constant(1, 1, 1e-6)};
  const double l = gmm_log_density(g, Eigen::VectorXd::Constant(1, 100.0));
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(l, -1e9);
}

TEST(BestComponent, Rules) {
  GaussianMixture g;
  g.weights = {1.0};
  g.means = {Eigen::VectorXd::Zero(1)};
  g.covariances = {Eigen::MatrixXd::Identity(1, 1)};
  auto t = [](std::span<const double> x) { return -x[0] * x[0]; };
  EXPECT_EQ(best_component(g, t), 0u);

  g.weights = {0.2, 0.5, 0.3};
  g.means = {Eigen::VectorXd::Constant(1, 5.0), Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -1.0)};
  g.covariances.assign(3, Eigen::MatrixXd::Identity(1, 1));
  // Tie between +1 and -1 goes to the larger weight.
  EXPECT_EQ(best_component(g, t), 1u);
  g.weights = {0.2, 0.4, 0.4};
  EXPECT_EQ(best_component(g, t), 1u);  // equal weight: lower index
  // A mean outside the support is never selected.
  auto boxed = [](std::span<const double> x) { return x[0] > 2 ? -std::numeric_limits<double>::infinity() : x[0]; };
  EXPECT_EQ(best_component(g, boxed), 1u);
}

TEST(BestComponent, InvariantUnderAffineRescale) {
  Rng rng(12);
  std::uniform_real_distribution<double> u(-3, 3);
  GaussianMixture g;
  for (int k = 0; k < 6; ++k) {
    g.weights.push_back(1.0 / 6);
    g.means.push_back(Eigen::Vector2d(u(rng), u(rng)));
    g.covariances.push_back(Eigen::MatrixXd::Identity(2, 2));
  }
  auto t = [](std::span<const double> x) { return -std::pow(x[0] - 0.5, 2) - 2 * std::pow(x[1] + 1, 2); };
  const auto base = best_component(g, t);
  for (double a : {0.01, 3.0, 1e4}) {
    for (double b : {-100.0, 0.0, 7.0}) {
      EXPECT_EQ(best_component(g, [&](std::span<const double> x) { return a * t(x) + b; }), base);
    }
  }
}

TEST(Pca, Diagonal) {
  Eigen::Matrix2d c;
  c << 1, 0, 0, 4;
  const auto r = pca(c);
  EXPECT_DOUBLE_EQ(r.eigenvalues(0), 4.0);
  EXPECT_DOUBLE_EQ(r.eigenvalues(1), 1.0);
  EXPECT_DOUBLE_EQ(r.max_uncertainty_length, 2.0);
  EXPECT_NEAR(r.max_direction(0), 0.0, 1e-15);
  EXPECT_NEAR(std::abs(r.max_direction(1)), 1.0, 1e-15);
  EXPECT_LT(r.max_direction(1), 0.0);
}

TEST(Pca, Identity) {
  const auto r = pca(Eigen::MatrixXd::Identity(3, 3));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(r.eigenvalues(i), 1.0, 1e-15);
  EXPECT_NEAR(r.max_uncertainty_length, 1.0, 1e-15);
  EXPECT_LT((r.eigenvectors.transpose() * r.eigenvectors - Eigen::MatrixXd::Identity(3, 3)).norm(), 1e-12);
}

TEST(Pca, ReconstructionAndSigns) {
  Rng rng(13);
  std::normal_distribution<double> z;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a(4, 4);
    for (int i = 0; i < 16; ++i) a(i / 4, i % 4) = z(rng);
    const Eigen::MatrixXd c = a * a.transpose();
    const auto r = pca(c);
    const Eigen::MatrixXd rec = r.eigenvectors * r.eigenvalues.asDiagonal() * r.eigenvectors.transpose();
    EXPECT_LT((rec - c).norm() / c.norm(), 1e-10);
    EXPECT_LT((r.eigenvectors.transpose() * r.eigenvectors - Eigen::MatrixXd::Identity(4, 4)).norm(), 1e-12);
    for (int i = 1; i < 4; ++i) EXPECT_GE(r.eigenvalues(i - 1), r.eigenvalues(i));
    for (int i = 0; i < 4; ++i) {
      Eigen::Index arg;
      r.eigenvectors.col(i).cwiseAbs().maxCoeff(&arg);
      EXPECT_LT(r.eigenvectors(arg, i), 0.0);
    }
  }
}

TEST(Pca, RejectsAsymmetric) {
  Eigen::Matrix2d c;
  c << 1, 0.5, 0.4, 1;
  EXPECT_THROW(pca(c), std::invalid_argument);
}

TEST(SubCovariance, Selects) {
  Eigen::Matrix3d c;
  c << 1, 2, 3, 2, 5, 6, 3, 6, 9;
  const std::vector<std::size_t> idx{0, 2};
  Eigen::Matrix2d want;
  want << 1, 3, 3, 9;
  EXPECT_TRUE(sub_covariance(c, idx) == want);
}
