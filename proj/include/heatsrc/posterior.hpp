#ifndef HEATSRC_POSTERIOR_HPP
#define HEATSRC_POSTERIOR_HPP

// Gaussian mixture summary of posterior samples (EM from k-means++ seeds)
// and eigen-analysis of component covariances.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "heatsrc/random.hpp"

namespace heatsrc {

struct GaussianMixture {
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covariances;
  std::vector<double> log_likelihood_trace;  // per EM iteration, before the M-step
  std::size_t reseeded = 0;
  std::size_t dropped = 0;

  std::size_t size() const { return weights.size(); }
  Eigen::Index dim() const { return means.empty() ? 0 : means.front().size(); }
};

struct GmmOptions {
  std::size_t max_iters = 500;
  double tol = 1e-8;
  double covariance_floor = 1e-8;
};

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

/// Symmetrizes and raises eigenvalues to at least `floor`. This is the
/// maximizer of the Gaussian M-step objective over {Sigma >= floor * I}.
inline Eigen::MatrixXd floor_covariance(const Eigen::MatrixXd& c, double floor) {
  const Eigen::MatrixXd sym = 0.5 * (c + c.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.eigenvalues().minCoeff() >= floor) return sym;
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

/// Cached Cholesky factor and log-normalizer of one component.
struct ComponentFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_norm = 0.0;

  ComponentFactor(const Eigen::MatrixXd& cov) : llt(cov) {
    if (llt.info() != Eigen::Success) throw std::runtime_error("gmm: covariance is not positive definite");
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    log_norm = -0.5 * (static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) + log_det);
  }

  double log_pdf(const Eigen::VectorXd& mean, const Eigen::Ref<const Eigen::VectorXd>& x) const {
    const Eigen::VectorXd z = llt.matrixL().solve(x - mean);
    return log_norm - 0.5 * z.squaredNorm();
  }
};

}  // namespace detail

inline double gmm_log_density(const GaussianMixture& g, const Eigen::Ref<const Eigen::VectorXd>& x) {
  std::vector<double> terms;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g.weights[k] <= 0.0) continue;
    detail::ComponentFactor f(g.covariances[k]);
    terms.push_back(std::log(g.weights[k]) + f.log_pdf(g.means[k], x));
  }
  return detail::log_sum_exp(terms);
}

inline double gmm_density(const GaussianMixture& g, const Eigen::Ref<const Eigen::VectorXd>& x) {
  return std::exp(gmm_log_density(g, x));
}

namespace detail {

/// k-means++ seeding: returns row indices of the chosen centers.
inline std::vector<Eigen::Index> kmeanspp_seeds(const Eigen::MatrixXd& data, std::size_t k, Rng& rng) {
  const Eigen::Index n = data.rows();
  std::vector<Eigen::Index> centers;
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  centers.push_back(first(rng));
  std::vector<double> d2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    const auto c = data.row(centers.back());
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto& d = d2[static_cast<std::size_t>(i)];
      d = std::min(d, (data.row(i) - c).squaredNorm());
      total += d;
    }
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double t = u(rng) * total;
      for (Eigen::Index i = 0; i < n; ++i) {
        t -= d2[static_cast<std::size_t>(i)];
        if (t <= 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    } else {
      pick = first(rng);
    }
    centers.push_back(pick);
  }
  return centers;
}

}  // namespace detail

/// EM fit of a k-component mixture to the rows of `samples`.
inline GaussianMixture fit_gmm(const Eigen::MatrixXd& samples, std::size_t k, Rng& rng, GmmOptions opt = {}) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index dim = samples.cols();
  if (k == 0) throw std::invalid_argument("fit_gmm: k must be at least 1");
  if (dim == 0) throw std::invalid_argument("fit_gmm: samples have no columns");
  if (n < static_cast<Eigen::Index>(10 * k)) {
    throw std::invalid_argument("fit_gmm: need at least " + std::to_string(10 * k) + " samples, got " +
                                std::to_string(n));
  }

  const Eigen::VectorXd global_mean = samples.colwise().mean();
  const Eigen::MatrixXd centered = samples.rowwise() - global_mean.transpose();
  const Eigen::MatrixXd global_cov =
      detail::floor_covariance(centered.transpose() * centered / static_cast<double>(n), opt.covariance_floor);

  // Initial parameters from hard assignment to the k-means++ seeds.
  const auto seeds = detail::kmeanspp_seeds(samples, k, rng);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      const double d = (samples.row(i) - samples.row(seeds[c])).squaredNorm();
      if (d < bd) {
        bd = d;
        best = static_cast<Eigen::Index>(c);
      }
    }
    resp(i, best) = 1.0;
  }

  GaussianMixture g;
  std::vector<bool> reseeded_once(k, false);

  auto m_step = [&]() {
    g.weights.assign(static_cast<std::size_t>(resp.cols()), 0.0);
    g.means.assign(static_cast<std::size_t>(resp.cols()), Eigen::VectorXd::Zero(dim));
    g.covariances.assign(static_cast<std::size_t>(resp.cols()), global_cov);
    for (Eigen::Index c = 0; c < resp.cols(); ++c) {
      const auto cu = static_cast<std::size_t>(c);
      const double nk = resp.col(c).sum();
      g.weights[cu] = nk / static_cast<double>(n);
      if (nk <= 0.0) {
        g.means[cu] = global_mean;
        continue;
      }
      const Eigen::VectorXd mu = (resp.col(c).transpose() * samples).transpose() / nk;
      const Eigen::MatrixXd d = samples.rowwise() - mu.transpose();
      Eigen::MatrixXd cov = d.transpose() * resp.col(c).asDiagonal() * d / nk;
      g.means[cu] = mu;
      // A single point carries no spread; borrow the global covariance.
      g.covariances[cu] = nk < 1.0 + 1e-12 ? global_cov : detail::floor_covariance(cov, opt.covariance_floor);
    }
    double s = 0.0;
    for (double w : g.weights) s += w;
    for (double& w : g.weights) w /= s;
  };

  // E-step: responsibilities and the data log-likelihood under `g`.
  auto e_step = [&]() {
    const auto kk = g.size();
    std::vector<detail::ComponentFactor> factors;
    factors.reserve(kk);
    for (const auto& c : g.covariances) factors.emplace_back(c);
    resp.resize(n, static_cast<Eigen::Index>(kk));
    std::vector<double> terms(kk);
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::VectorXd x = samples.row(i).transpose();
      for (std::size_t c = 0; c < kk; ++c) {
        terms[c] = g.weights[c] > 0.0 ? std::log(g.weights[c]) + factors[c].log_pdf(g.means[c], x)
                                      : -std::numeric_limits<double>::infinity();
      }
      const double lse = detail::log_sum_exp(terms);
      ll += lse;
      for (std::size_t c = 0; c < kk; ++c) resp(i, static_cast<Eigen::Index>(c)) = std::exp(terms[c] - lse);
    }
    return ll;
  };

  // Components with (numerically) no responsibility are reseeded at the
  // worst-explained sample once, then dropped.
  auto handle_empty = [&]() {
    constexpr double kEmpty = 1e-3;
    bool changed = false;
    for (Eigen::Index c = resp.cols(); c-- > 0;) {
      const auto cu = static_cast<std::size_t>(c);
      if (resp.col(c).sum() >= kEmpty) continue;
      changed = true;
      if (!reseeded_once[cu]) {
        reseeded_once[cu] = true;
        ++g.reseeded;
        Eigen::Index worst = 0;
        double worst_ll = std::numeric_limits<double>::infinity();
        for (Eigen::Index i = 0; i < n; ++i) {
          const double l = gmm_log_density(g, samples.row(i).transpose());
          if (l < worst_ll) {
            worst_ll = l;
            worst = i;
          }
        }
        resp.row(worst).setZero();
        resp(worst, c) = 1.0;
      } else {
        ++g.dropped;
        const Eigen::Index last = resp.cols() - 1;
        resp.col(c) = resp.col(last);
        resp.conservativeResize(Eigen::NoChange, last);
        reseeded_once.erase(reseeded_once.begin() + c);
        const Eigen::VectorXd rs = resp.rowwise().sum();
        for (Eigen::Index i = 0; i < n; ++i) {
          if (rs(i) > 0.0) resp.row(i) /= rs(i);
        }
      }
    }
    return changed;
  };

  m_step();
  double prev = -std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < opt.max_iters; ++it) {
    const double ll = e_step();
    g.log_likelihood_trace.push_back(ll);
    if (handle_empty()) {
      m_step();
      prev = -std::numeric_limits<double>::infinity();
      continue;
    }
    if (ll - prev < opt.tol && std::isfinite(prev)) break;
    prev = ll;
    m_step();
  }
  if (g.size() == 0) throw std::runtime_error("fit_gmm: all components collapsed");
  return g;
}

/// Component whose mean has the highest target value; ties go to the larger
/// weight, then the lower index.
inline std::size_t best_component(const GaussianMixture& g,
                                  const std::function<double(std::span<const double>)>& target) {
  if (g.size() == 0) throw std::invalid_argument("best_component: empty mixture");
  std::size_t best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  bool have = false;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& m = g.means[k];
    const double v = target(std::span<const double>(m.data(), static_cast<std::size_t>(m.size())));
    const bool better = !have || v > best_val || (v == best_val && g.weights[k] > g.weights[best]);
    if (better) {
      best = k;
      best_val = v;
      have = true;
    }
  }
  return best;
}

struct PcaReport {
  Eigen::VectorXd eigenvalues;   // descending
  Eigen::MatrixXd eigenvectors;  // columns, matching eigenvalues
  double max_uncertainty_length = 0.0;
  Eigen::VectorXd max_direction;
};

/// Eigen-decomposition of a symmetric covariance. Each eigenvector is signed
/// so that its largest-magnitude entry is negative.
inline PcaReport pca(const Eigen::MatrixXd& cov) {
  if (cov.rows() != cov.cols() || cov.rows() == 0) throw std::invalid_argument("pca: matrix must be square");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw std::invalid_argument("pca: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca: eigen-decomposition failed");
  const Eigen::Index n = cov.rows();
  PcaReport r;
  r.eigenvalues.resize(n);
  r.eigenvectors.resize(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index src = n - 1 - i;  // solver sorts ascending
    r.eigenvalues(i) = es.eigenvalues()(src);
    Eigen::VectorXd v = es.eigenvectors().col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) > 0.0) v = -v;
    r.eigenvectors.col(i) = v;
  }
  r.max_uncertainty_length = std::sqrt(std::max(0.0, r.eigenvalues(0)));
  r.max_direction = r.eigenvectors.col(0);
  return r;
}

/// Rows/columns `idx` of a square matrix.
inline Eigen::MatrixXd sub_covariance(const Eigen::MatrixXd& cov, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) {
    for (std::size_t j = 0; j < idx.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          cov(static_cast<Eigen::Index>(idx[i]), static_cast<Eigen::Index>(idx[j]));
    }
  }
  return out;
}

}  // namespace heatsrc

#endif  // HEATSRC_POSTERIOR_HPP
