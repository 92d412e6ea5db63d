#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/logistic.hpp"
#include "saemlogit/mh_sampler.hpp"
#include "saemlogit/model_spec.hpp"
#include "saemlogit/rng.hpp"

namespace saemlogit {

struct SaemConfig {
  int k1 = 50;         // iterations with step size 1
  double tau = 1.0;    // decay exponent afterwards
  int n_iter = 500;
  int mh_steps = 10;   // MH transitions per row and iteration; the last state is kept
  std::uint64_t seed = 1;
  double beta_tol = 1e-6;  // only annotates the trace
  int newton_max_iter = 20;

  void validate() const {
    if (k1 < 0) throw std::invalid_argument("k1 must be non-negative");
    if (n_iter <= k1) throw std::invalid_argument("n_iter must exceed k1");
    if (!(tau > 0.5 && tau <= 1.0)) throw std::invalid_argument("tau must lie in (0.5, 1]");
    if (mh_steps < 1) throw std::invalid_argument("mh_steps must be at least 1");
    if (newton_max_iter < 1) throw std::invalid_argument("newton_max_iter must be at least 1");
  }
};

/// Step size: 1 for the first k1 iterations, then (k - k1)^-tau.
inline double gamma(int k, const SaemConfig& cfg) {
  if (k < 1) throw std::invalid_argument("gamma: iterations are numbered from 1");
  if (k <= cfg.k1) return 1.0;
  return std::pow(static_cast<double>(k - cfg.k1), -cfg.tau);
}

/// Smoothed complete-data Gaussian sufficient statistics: sum x_i and sum x_i x_i^T.
struct SuffStats {
  Vector s1;
  Matrix s2;

  static SuffStats of(const Matrix& x) {
    SuffStats s;
    s.s1 = x.colwise().sum().transpose();
    s.s2 = x.transpose() * x;
    return s;
  }

  /// s <- s + gamma (S(x) - s).
  void update(const Matrix& x, double step) {
    const SuffStats fresh = of(x);
    if (s1.size() == 0) {
      *this = fresh;
      return;
    }
    s1 += step * (fresh.s1 - s1);
    s2 += step * (fresh.s2 - s2);
  }

  /// Closed-form maximizer: mu = s1/n, sigma = s2/n - mu mu^T (symmetrized).
  GaussianMle maximize(Index n) const {
    GaussianMle g;
    const double nn = static_cast<double>(n);
    g.mu = s1 / nn;
    g.sigma = s2 / nn - g.mu * g.mu.transpose();
    g.sigma = 0.5 * (g.sigma + g.sigma.transpose()).eval();
    return g;
  }
};

/// Makes a symmetric matrix positive definite by flooring its eigenvalues at 1e-8 * the largest one.
/// Returns true when a repair was needed.
inline bool stabilize_covariance(Matrix& sigma) {
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  Eigen::LLT<Matrix> llt(sigma);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) return false;
  Eigen::SelfAdjointEigenSolver<Matrix> eig(sigma);
  if (eig.info() != Eigen::Success || !(eig.eigenvalues().maxCoeff() > 0.0))
    throw NumericalError("covariance estimate collapsed (no positive eigenvalue)");
  const double floor = 1e-8 * eig.eigenvalues().maxCoeff();
  const Vector values = eig.eigenvalues().cwiseMax(floor);
  sigma = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  sigma = 0.5 * (sigma + sigma.transpose()).eval();
  return true;
}

struct SaemTrace {
  std::vector<Vector> beta;         // beta after each iteration
  std::vector<double> gamma;
  std::vector<double> acceptance;   // MH acceptance rate of the iteration (NaN when nothing was sampled)
  std::optional<int> first_stable_iteration;  // first k with |beta_k - beta_{k-1}|_inf < beta_tol
  std::vector<std::string> warnings;

  std::size_t size() const { return beta.size(); }

  void warn(const std::string& w) {
    if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(w);
  }
};

struct SaemResult {
  Theta theta;
  SaemTrace trace;
};

/// Starting point: fill missing cells with observed column means, then logistic MLE on the
/// active columns and the Gaussian MLE of the filled matrix.
inline Theta mean_imputation_start(const MaskedDataset& d, const ModelSpec& model, const NewtonOptions& newton = {}) {
  const Matrix filled = d.filled(d.observed_means());
  const std::vector<Index> cols = model.design_columns();
  const Matrix z = design_matrix(filled)(Eigen::all, cols);
  const NewtonResult fit = fit_newton(z, d.y(), newton);
  Theta theta;
  theta.beta = Vector::Zero(d.p() + 1);
  theta.beta(cols) = fit.beta;
  GaussianMle g = gaussian_mle(filled);
  stabilize_covariance(g.sigma);
  theta.mu = std::move(g.mu);
  theta.sigma = std::move(g.sigma);
  return theta;
}

/// Stochastic-approximation EM for logistic regression with Gaussian covariates missing at random.
///
/// Each iteration k draws the missing coordinates of every incomplete row with
/// a short independence-MH chain under theta_{k-1} (warm-started from the
/// previous state), smooths the Gaussian sufficient statistics and the
/// coefficient vector with step gamma_k, and recovers mu and sigma in closed
/// form. Coefficients outside `model` stay at zero; mu and sigma always cover
/// all p covariates. Runs exactly cfg.n_iter iterations.
inline SaemResult saem_fit(const MaskedDataset& d, const SaemConfig& cfg, const std::optional<Theta>& init = std::nullopt,
                           const std::optional<ModelSpec>& model_opt = std::nullopt) {
  cfg.validate();
  if (!d.has_response() || d.y().size() != d.n()) throw std::invalid_argument("saem_fit: dataset has no response");
  const Index n = d.n();
  const Index p = d.p();
  const ModelSpec model = model_opt.value_or(ModelSpec::full(p));
  model.validate(p);
  const std::vector<Index> cols = model.design_columns();

  SaemResult out;
  Theta& theta = out.theta;
  theta = init ? *init : mean_imputation_start(d, model);
  theta.validate();
  for (Index j = 0; j < p; ++j)
    if (!model.contains(j)) theta.beta[j + 1] = 0.0;

  const PatternIndex patterns(d);
  Matrix completed = d.filled(d.observed_means());
  Matrix z = design_matrix(completed);
  SuffStats stats;
  NewtonOptions newton;
  newton.max_iter = cfg.newton_max_iter;
  std::vector<ChainState> chains(static_cast<std::size_t>(n));

  out.trace.beta.reserve(static_cast<std::size_t>(cfg.n_iter));
  for (int k = 1; k <= cfg.n_iter; ++k) {
    // Simulation.
    const std::vector<PatternConditioner> conditioners = patterns.conditioners(theta);
    std::size_t accepted = 0;
    std::size_t steps = 0;
    for (std::size_t g = 0; g < patterns.groups.size(); ++g) {
      const auto& group = patterns.groups[g];
      const auto& cond = conditioners[g];
      Vector x_obs(static_cast<Index>(group.obs.size()));
      for (Index i : group.rows) {
        for (std::size_t o = 0; o < group.obs.size(); ++o) x_obs[static_cast<Index>(o)] = d.x()(i, group.obs[o]);
        const RowLikelihood lik(theta.beta, d, i, group.obs, group.mis);
        ChainState& chain = chains[static_cast<std::size_t>(i)];
        chain.accept_count = 0;
        chain.steps = 0;
        Rng rng = make_stream(cfg.seed, StreamTag::kSaemSimulation,
                              {d.row_id(i), static_cast<std::uint64_t>(k)});
        run_independence_chain(cond.mean(x_obs), cond.chol(), lik, cfg.mh_steps, rng, chain, [](const Vector&) {});
        for (std::size_t m = 0; m < group.mis.size(); ++m) {
          completed(i, group.mis[m]) = chain.current[static_cast<Index>(m)];
          z(i, group.mis[m] + 1) = chain.current[static_cast<Index>(m)];
        }
        accepted += chain.accept_count;
        steps += chain.steps;
      }
    }

    // Stochastic approximation.
    const double step = gamma(k, cfg);
    stats.update(completed, step);
    const Vector beta_active = theta.beta(cols);
    const NewtonResult fit = fit_newton(z(Eigen::all, cols), d.y(), newton, &beta_active);
    if (fit.separation) out.trace.warn(fit.warning);
    const Vector previous = theta.beta;
    theta.beta(cols) = beta_active + step * (fit.beta - beta_active);

    // Maximization.
    GaussianMle gauss = stats.maximize(n);
    if (stabilize_covariance(gauss.sigma))
      out.trace.warn("covariance estimate was not positive definite; eigenvalues floored");
    theta.mu = std::move(gauss.mu);
    theta.sigma = std::move(gauss.sigma);

    out.trace.beta.push_back(theta.beta);
    out.trace.gamma.push_back(step);
    out.trace.acceptance.push_back(steps ? static_cast<double>(accepted) / static_cast<double>(steps)
                                         : std::numeric_limits<double>::quiet_NaN());
    if (!out.trace.first_stable_iteration && (theta.beta - previous).lpNorm<Eigen::Infinity>() < cfg.beta_tol)
      out.trace.first_stable_iteration = k;
  }
  return out;
}

}  // namespace saemlogit
