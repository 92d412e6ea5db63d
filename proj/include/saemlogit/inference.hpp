#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/logistic.hpp"
#include "saemlogit/mh_sampler.hpp"
#include "saemlogit/model_spec.hpp"
#include "saemlogit/rng.hpp"
#include "saemlogit/saem.hpp"

namespace saemlogit {

// ---------------------------------------------------------------------------
// Observed Fisher information (Louis' formula, Monte Carlo)

/// Running means over MH samples of one row: gradient, Hessian and gradient outer product.
struct FimAccumulators {
  Vector delta;
  Matrix d;
  Matrix g;
  int count = 0;

  explicit FimAccumulators(Index q) : delta(Vector::Zero(q)), d(Matrix::Zero(q, q)), g(Matrix::Zero(q, q)) {}

  void add(const Vector& gradient, const Matrix& hessian) {
    ++count;
    const double s = static_cast<double>(count);
    delta = ((s - 1.0) * delta + gradient) / s;
    d = ((s - 1.0) * d + hessian) / s;
    g = ((s - 1.0) * g + gradient * gradient.transpose()) / s;
  }

  /// Same recursion for the Bernoulli score z (y - s) and Hessian -s (1 - s) z z^T, in place.
  void add_logistic(const Vector& z, int y, double s_prob) {
    ++count;
    const double keep = (static_cast<double>(count) - 1.0) / static_cast<double>(count);
    const double w = 1.0 / static_cast<double>(count);
    const double r = static_cast<double>(y) - s_prob;
    const double h = s_prob * (1.0 - s_prob);
    const Index q = z.size();
    for (Index b = 0; b < q; ++b) {
      delta[b] = keep * delta[b] + w * r * z[b];
      for (Index a = 0; a < q; ++a) {
        const double zz = z[a] * z[b];
        d(a, b) = keep * d(a, b) - w * h * zz;
        g(a, b) = keep * g(a, b) + w * r * r * zz;
      }
    }
  }

  /// Row contribution -(D + G - Delta Delta^T) to the information.
  Matrix information() const { return -(d + g - delta * delta.transpose()); }
};

struct FimResult {
  Matrix information;           // over design_columns of the model
  std::vector<Index> columns;   // indices into (intercept, x_1..x_p)
  bool positive_definite = true;
  double min_eigenvalue = 0.0;
  std::vector<std::string> warnings;
};

/// Observed information of beta at theta by Louis' formula.
///
/// Complete rows contribute the classical logistic information. Each
/// incomplete row runs its own MH chain (stream keyed by seed and row id),
/// discards `burn_in` states and accumulates `samples` states with the
/// running-mean recursions. The sum is symmetrized; a non positive definite
/// result is flagged with its smallest eigenvalue.
inline FimResult louis_fim(const Theta& theta, const MaskedDataset& d, int samples, std::uint64_t seed,
                           int burn_in = 100, const std::optional<ModelSpec>& model_opt = std::nullopt) {
  if (samples < 1) throw std::invalid_argument("louis_fim: need at least one sample");
  const ModelSpec model = model_opt.value_or(ModelSpec::full(d.p()));
  FimResult res;
  res.columns = model.design_columns();
  const auto& cols = res.columns;
  const Index q = static_cast<Index>(cols.size());
  const Vector beta = theta.beta;
  const Vector beta_active = beta(cols);
  res.information = Matrix::Zero(q, q);

  Vector full(d.p() + 1);
  full[0] = 1.0;
  for (Index i = 0; i < d.n(); ++i) {
    if (d.row_has_missing(i)) continue;
    full.tail(d.p()) = d.x().row(i).transpose();
    const Vector z = full(cols);
    FimAccumulators acc(q);
    const ScoreHessian sh = score_and_hessian(beta_active, z, d.y(i));
    acc.add(sh.gradient, sh.hessian);
    res.information += acc.information();
  }

  const PatternIndex patterns(d);
  const auto conditioners = patterns.conditioners(theta);
  for (std::size_t gi = 0; gi < patterns.groups.size(); ++gi) {
    const auto& group = patterns.groups[gi];
    const auto& cond = conditioners[gi];
    Vector x_obs(static_cast<Index>(group.obs.size()));
    for (Index i : group.rows) {
      for (std::size_t o = 0; o < group.obs.size(); ++o) {
        x_obs[static_cast<Index>(o)] = d.x()(i, group.obs[o]);
        full[group.obs[o] + 1] = x_obs[static_cast<Index>(o)];
      }
      const RowLikelihood lik(beta, d, i, group.obs, group.mis);
      Rng rng = make_stream(seed, StreamTag::kFisherInformation, {d.row_id(i)});
      ChainState chain;
      const Vector mean = cond.mean(x_obs);
      run_independence_chain(mean, cond.chol(), lik, burn_in, rng, chain, [](const Vector&) {});
      FimAccumulators acc(q);
      const int y = d.y(i);
      Vector z(q);
      run_independence_chain(mean, cond.chol(), lik, samples, rng, chain, [&](const Vector& x_mis) {
        for (std::size_t m = 0; m < group.mis.size(); ++m) full[group.mis[m] + 1] = x_mis[static_cast<Index>(m)];
        for (Index c = 0; c < q; ++c) z[c] = full[cols[static_cast<std::size_t>(c)]];
        acc.add_logistic(z, y, sigmoid(beta_active.dot(z)));
      });
      res.information += acc.information();
    }
  }
  res.information = 0.5 * (res.information + res.information.transpose()).eval();

  Eigen::SelfAdjointEigenSolver<Matrix> eig(res.information, Eigen::EigenvaluesOnly);
  res.min_eigenvalue = eig.eigenvalues().minCoeff();
  res.positive_definite = res.min_eigenvalue > 0.0;
  if (!res.positive_definite)
    res.warnings.push_back("observed information is not positive definite (smallest eigenvalue " +
                           std::to_string(res.min_eigenvalue) + "); standard errors use a pseudo-inverse");
  return res;
}

// ---------------------------------------------------------------------------
// Wald intervals

struct WaldResult {
  Vector se;
  Vector ci_low;
  Vector ci_high;
  bool pseudo_inverse = false;
};

/// Two-sided standard normal quantile for a confidence level (1.959964 at 0.95).
inline double normal_quantile_two_sided(double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("confidence level must lie in (0, 1)");
  return boost::math::quantile(boost::math::normal_distribution<double>(), 0.5 + 0.5 * level);
}

/// se = sqrt(diag(fim^-1)), CI = beta_hat -/+ z se. A singular `fim` throws unless
/// `allow_pseudo_inverse`, in which case the Moore-Penrose inverse is used and flagged.
inline WaldResult wald_ci(const Matrix& fim, const Vector& beta_hat, double level = 0.95,
                          bool allow_pseudo_inverse = false) {
  if (fim.rows() != fim.cols() || fim.rows() != beta_hat.size()) throw DimensionError("wald_ci: shape mismatch");
  WaldResult res;
  Matrix cov;
  Eigen::LLT<Matrix> llt(fim);
  if (llt.info() == Eigen::Success && llt.matrixL().toDenseMatrix().diagonal().minCoeff() > 0.0) {
    cov = llt.solve(Matrix::Identity(fim.rows(), fim.cols()));
  } else if (allow_pseudo_inverse) {
    cov = fim.completeOrthogonalDecomposition().pseudoInverse();
    res.pseudo_inverse = true;
  } else {
    throw SingularityError("wald_ci: information matrix is singular");
  }
  const double z = normal_quantile_two_sided(level);
  res.se = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  res.ci_low = beta_hat - z * res.se;
  res.ci_high = beta_hat + z * res.se;
  return res;
}

// ---------------------------------------------------------------------------
// Observed log-likelihood by importance sampling

inline double log_mean_exp(const std::vector<double>& v) {
  double hi = -std::numeric_limits<double>::infinity();
  for (double x : v) hi = std::max(hi, x);
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - hi);
  return hi + std::log(acc / static_cast<double>(v.size()));
}

enum class ImportanceForm {
  /// log mean_s [ p(y | x^(s)) N_p(x^(s); mu, sigma) / g(x_mis^(s)) ]
  kJointOverProposal,
  /// log N(x_obs) + log mean_s p(y | x^(s)), algebraically identical
  kFactored,
};

struct LoglikResult {
  double total = 0.0;
  std::vector<double> per_row;
};

/// Sum over rows of log p(y_i, x_obs,i; theta).
///
/// Complete rows are evaluated exactly. Incomplete rows average `samples`
/// i.i.d. draws from the conditional Gaussian of their missing coordinates
/// (stream keyed by seed and row id), with all weights in log space.
inline LoglikResult obs_loglik(const Theta& theta, const MaskedDataset& d, int samples, std::uint64_t seed,
                               ImportanceForm form = ImportanceForm::kJointOverProposal) {
  if (samples < 1) throw std::invalid_argument("obs_loglik: need at least one sample");
  const Index p = d.p();
  const Matrix lower = robust_cholesky(theta.sigma, "sigma");
  const double log_det = log_det_from_cholesky(lower);
  LoglikResult res;
  res.per_row.assign(static_cast<std::size_t>(d.n()), 0.0);

  Vector x(p);
  for (Index i = 0; i < d.n(); ++i) {
    if (d.row_has_missing(i)) continue;
    x = d.x().row(i).transpose();
    const double eta = theta.beta[0] + theta.beta.tail(p).dot(x);
    res.per_row[static_cast<std::size_t>(i)] =
        bernoulli_loglik(d.y(i), eta) + gaussian_log_density(x, theta.mu, lower, log_det);
  }

  const PatternIndex patterns(d);
  const auto conditioners = patterns.conditioners(theta);
  std::vector<double> log_w(static_cast<std::size_t>(samples));
  for (std::size_t gi = 0; gi < patterns.groups.size(); ++gi) {
    const auto& group = patterns.groups[gi];
    const auto& cond = conditioners[gi];
    std::optional<Matrix> obs_lower;
    double obs_log_det = 0.0;
    if (form == ImportanceForm::kFactored && !group.obs.empty()) {
      obs_lower = robust_cholesky(theta.sigma(group.obs, group.obs), "observed covariance block");
      obs_log_det = log_det_from_cholesky(*obs_lower);
    }
    Vector x_obs(static_cast<Index>(group.obs.size()));
    Vector x_mis(static_cast<Index>(group.mis.size()));
    for (Index i : group.rows) {
      for (std::size_t o = 0; o < group.obs.size(); ++o) {
        x_obs[static_cast<Index>(o)] = d.x()(i, group.obs[o]);
        x[group.obs[o]] = x_obs[static_cast<Index>(o)];
      }
      const Vector mean = cond.mean(x_obs);
      const RowLikelihood lik(theta.beta, d, i, group.obs, group.mis);
      Rng rng = make_stream(seed, StreamTag::kLoglik, {d.row_id(i)});
      for (int s = 0; s < samples; ++s) {
        sample_into(x_mis, mean, cond.chol(), rng);
        double lw = lik.log_lik(x_mis);
        if (form == ImportanceForm::kJointOverProposal) {
          for (std::size_t m = 0; m < group.mis.size(); ++m) x[group.mis[m]] = x_mis[static_cast<Index>(m)];
          lw += gaussian_log_density(x, theta.mu, lower, log_det) -
                gaussian_log_density(x_mis, mean, cond.chol(), cond.log_det());
        }
        log_w[static_cast<std::size_t>(s)] = lw;
      }
      double value = log_mean_exp(log_w);
      if (obs_lower) value += gaussian_log_density(x_obs, theta.mu(group.obs), *obs_lower, obs_log_det);
      if (!std::isfinite(value))
        throw NumericalError("observed log-likelihood of row " + std::to_string(i + 1) +
                             " is not finite (all importance weights underflow)");
      res.per_row[static_cast<std::size_t>(i)] = value;
    }
  }
  for (double v : res.per_row) res.total += v;
  return res;
}

// ---------------------------------------------------------------------------
// BIC

/// Free parameters: intercept and active coefficients, plus p means and p(p+1)/2 covariances.
inline int parameter_count(Index active, Index p) {
  return static_cast<int>(1 + active + p + p * (p + 1) / 2);
}

inline double bic(double loglik_obs, Index n, const ModelSpec& model, Index p) {
  if (n < 1) throw std::invalid_argument("bic: n must be positive");
  return -2.0 * loglik_obs + std::log(static_cast<double>(n)) * parameter_count(model.size(), p);
}

// ---------------------------------------------------------------------------
// Full fit

struct InferenceOptions {
  int fim_samples = 1000;
  int fim_burn_in = 100;
  int loglik_samples = 1000;
  double level = 0.95;
  bool compute_fim = true;
  bool compute_loglik = true;
  /// Seed of the importance-sampling streams; defaults to the SAEM seed.
  std::optional<std::uint64_t> loglik_seed;
};

struct FitResult {
  Theta theta;
  ModelSpec model;
  Vector se;       // NaN for coefficients fixed at zero
  Vector ci_low;
  Vector ci_high;
  double level = 0.95;
  Matrix fim;      // over model.design_columns()
  double loglik_obs = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> loglik_per_row;
  double bic = std::numeric_limits<double>::quiet_NaN();
  int n_params = 0;
  Index n = 0;
  SaemTrace trace;
  bool pseudo_inverse = false;
  std::vector<std::string> warnings;
};

/// SAEM estimate followed by Louis standard errors, Wald intervals, observed log-likelihood and BIC.
inline FitResult fit_model(const MaskedDataset& d, const SaemConfig& cfg, const InferenceOptions& inf = {},
                           const std::optional<ModelSpec>& model_opt = std::nullopt,
                           const std::optional<Theta>& init = std::nullopt) {
  FitResult r;
  r.model = model_opt.value_or(ModelSpec::full(d.p()));
  SaemResult saem = saem_fit(d, cfg, init, r.model);
  r.theta = std::move(saem.theta);
  r.trace = std::move(saem.trace);
  r.warnings = r.trace.warnings;
  r.n = d.n();
  r.level = inf.level;
  r.n_params = parameter_count(r.model.size(), d.p());

  const Index q = d.p() + 1;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  r.se = Vector::Constant(q, nan);
  r.ci_low = Vector::Constant(q, nan);
  r.ci_high = Vector::Constant(q, nan);
  if (inf.compute_fim) {
    FimResult fim = louis_fim(r.theta, d, inf.fim_samples, cfg.seed, inf.fim_burn_in, r.model);
    r.fim = fim.information;
    for (auto& w : fim.warnings) r.warnings.push_back(w);
    const auto cols = r.model.design_columns();
    const WaldResult w = wald_ci(fim.information, r.theta.beta(cols), inf.level, true);
    r.pseudo_inverse = w.pseudo_inverse;
    r.se(cols) = w.se;
    r.ci_low(cols) = w.ci_low;
    r.ci_high(cols) = w.ci_high;
  }
  if (inf.compute_loglik) {
    LoglikResult ll = obs_loglik(r.theta, d, inf.loglik_samples, inf.loglik_seed.value_or(cfg.seed));
    r.loglik_obs = ll.total;
    r.loglik_per_row = std::move(ll.per_row);
    r.bic = bic(r.loglik_obs, d.n(), r.model, d.p());
  }
  return r;
}

}  // namespace saemlogit
