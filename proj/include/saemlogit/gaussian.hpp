#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/errors.hpp"

namespace saemlogit {

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;  // log(2*pi)
inline constexpr double kMaxConditionNumber = 1e12;

namespace detail {

inline bool try_cholesky(const Matrix& a, Matrix& lower) {
  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) return false;
  lower = llt.matrixL();
  const auto diag = lower.diagonal();
  if (!diag.allFinite() || diag.minCoeff() <= 0.0) return false;
  const double ratio = diag.maxCoeff() / diag.minCoeff();
  return ratio * ratio <= kMaxConditionNumber;
}

}  // namespace detail

/// Lower Cholesky factor of a symmetric positive definite matrix.
///
/// A factorization that fails, or whose condition estimate (ratio of extreme
/// factor diagonals, squared) exceeds 1e12, is retried once with
/// 1e-8 * trace / dim added to the diagonal. A second failure throws
/// SingularityError mentioning `what`.
inline Matrix robust_cholesky(const Matrix& a, const std::string& what = "covariance") {
  Matrix lower;
  if (a.rows() == 0) return lower;
  if (detail::try_cholesky(a, lower)) return lower;
  const double jitter = 1e-8 * a.trace() / static_cast<double>(a.rows());
  if (jitter > 0.0) {
    Matrix bumped = a;
    bumped.diagonal().array() += jitter;
    if (detail::try_cholesky(bumped, lower)) return lower;
  }
  throw SingularityError(what + " is numerically singular");
}

inline double log_det_from_cholesky(const Matrix& lower) {
  return 2.0 * lower.diagonal().array().log().sum();
}

/// log N(v; mean, L L^T) given the lower Cholesky factor L and log det(L L^T).
inline double gaussian_log_density(const Eigen::Ref<const Vector>& v, const Eigen::Ref<const Vector>& mean,
                                   const Matrix& lower, double log_det) {
  // forward substitution without a heap temporary for the usual small dimensions
  const Index m = v.size();
  constexpr Index kStack = 32;
  double stack[kStack];
  std::vector<double> heap;
  double* r = stack;
  if (m > kStack) {
    heap.resize(static_cast<std::size_t>(m));
    r = heap.data();
  }
  double quad = 0.0;
  for (Index a = 0; a < m; ++a) {
    double acc = v[a] - mean[a];
    for (Index c = 0; c < a; ++c) acc -= lower(a, c) * r[c];
    r[a] = acc / lower(a, a);
    quad += r[a] * r[a];
  }
  return -0.5 * (static_cast<double>(m) * kLog2Pi + log_det + quad);
}

/// Law of the missing coordinates of a row given its observed ones.
struct ConditionalGaussian {
  Vector mean;
  Matrix cov;
  Matrix chol;  // lower triangular, chol * chol^T == cov
  double log_det = 0.0;

  Index dim() const { return mean.size(); }

  /// Builds the factor from an explicit covariance.
  static ConditionalGaussian from_moments(Vector mean, Matrix cov) {
    if (cov.rows() != mean.size() || cov.cols() != mean.size())
      throw DimensionError("covariance shape does not match mean length");
    ConditionalGaussian cg;
    cg.mean = std::move(mean);
    cg.cov = std::move(cov);
    cg.chol = robust_cholesky(cg.cov, "conditional covariance");
    cg.log_det = log_det_from_cholesky(cg.chol);
    return cg;
  }
};

/// Conditional law of x[mis] given x[obs] under N(mu, sigma) for one missingness pattern.
///
/// Everything that does not depend on the observed values (the gain matrix
/// sigma_mo sigma_oo^-1, the Schur complement and its factor) is computed once,
/// so rows sharing a pattern only pay for a matrix-vector product.
class PatternConditioner {
 public:
  PatternConditioner() = default;

  PatternConditioner(const Theta& theta, const std::vector<Index>& mis, const std::vector<Index>& obs,
                     const std::string& context = "row")
      : mis_(mis), obs_(obs) {
    mu_mis_ = theta.mu(mis_);
    if (obs_.empty()) {
      cov_ = theta.sigma(mis_, mis_);
    } else {
      mu_obs_ = theta.mu(obs_);
      const Matrix sigma_oo = theta.sigma(obs_, obs_);
      const Matrix l_oo = robust_cholesky(sigma_oo, "observed covariance block of " + context);
      // gain^T = sigma_oo^-1 sigma_om
      Matrix gain_t = theta.sigma(obs_, mis_);
      l_oo.triangularView<Eigen::Lower>().solveInPlace(gain_t);
      l_oo.transpose().triangularView<Eigen::Upper>().solveInPlace(gain_t);
      gain_ = gain_t.transpose();
      cov_ = theta.sigma(mis_, mis_) - gain_ * theta.sigma(obs_, mis_);
      cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
    }
    if (!mis_.empty()) {
      chol_ = robust_cholesky(cov_, "conditional covariance of " + context);
      log_det_ = log_det_from_cholesky(chol_);
    }
  }

  Index dim() const { return static_cast<Index>(mis_.size()); }
  const std::vector<Index>& mis() const { return mis_; }
  const std::vector<Index>& obs() const { return obs_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return chol_; }
  double log_det() const { return log_det_; }

  Vector mean(const Eigen::Ref<const Vector>& x_obs) const {
    if (obs_.empty()) return mu_mis_;
    return mu_mis_ + gain_ * (x_obs - mu_obs_);
  }

  ConditionalGaussian apply(const Eigen::Ref<const Vector>& x_obs) const {
    ConditionalGaussian cg;
    cg.mean = mean(x_obs);
    cg.cov = cov_;
    cg.chol = chol_;
    cg.log_det = log_det_;
    return cg;
  }

 private:
  std::vector<Index> mis_;
  std::vector<Index> obs_;
  Vector mu_mis_;
  Vector mu_obs_;
  Matrix gain_;
  Matrix cov_;
  Matrix chol_;
  double log_det_ = 0.0;
};

/// Exact Schur-complement conditional of the row's missing coordinates. Requires a nonempty mis_idx.
inline ConditionalGaussian condition(const Theta& theta, const RowView& rv) {
  if (rv.mis_idx.empty()) throw std::invalid_argument("condition: row has no missing coordinate");
  return PatternConditioner(theta, rv.mis_idx, rv.obs_idx, "row " + std::to_string(rv.row + 1))
      .apply(rv.x_obs);
}

/// Writes mean + L z (z standard normal) into `out`.
template <class Urbg>
void sample_into(Eigen::Ref<Vector> out, const Eigen::Ref<const Vector>& mean, const Matrix& lower,
                 Urbg& rng) {
  std::normal_distribution<double> normal;
  const Index m = mean.size();
  for (Index k = 0; k < m; ++k) out[k] = normal(rng);
  // out = mean + L z in place; bottom row first so z[0..a] is still intact at row a
  for (Index a = m - 1; a >= 0; --a) {
    double acc = mean[a];
    for (Index c = 0; c <= a; ++c) acc += lower(a, c) * out[c];
    out[a] = acc;
  }
}

template <class Urbg>
Vector sample(const ConditionalGaussian& cg, Urbg& rng) {
  Vector out(cg.dim());
  sample_into(out, cg.mean, cg.chol, rng);
  return out;
}

inline double log_density(const ConditionalGaussian& cg, const Eigen::Ref<const Vector>& v) {
  if (v.size() != cg.dim())
    throw DimensionError("log_density: vector of length " + std::to_string(v.size()) +
                         " for a " + std::to_string(cg.dim()) + "-dimensional law");
  return gaussian_log_density(v, cg.mean, cg.chol, cg.log_det);
}

/// log N(x_obs; mu_obs, sigma_oo). Requires at least one observed coordinate.
inline double marginal_log_density(const Theta& theta, const RowView& rv) {
  if (rv.obs_idx.empty()) throw std::invalid_argument("marginal_log_density: row has no observed coordinate");
  const Matrix lower = robust_cholesky(theta.sigma(rv.obs_idx, rv.obs_idx),
                                       "observed covariance block of row " + std::to_string(rv.row + 1));
  return gaussian_log_density(rv.x_obs, theta.mu(rv.obs_idx), lower, log_det_from_cholesky(lower));
}

/// Groups rows by missingness pattern; built once per dataset.
struct PatternIndex {
  struct Group {
    std::vector<Index> mis;
    std::vector<Index> obs;
    std::vector<Index> rows;
  };
  std::vector<Group> groups;      // only patterns with at least one missing coordinate
  std::vector<int> group_of_row;  // -1 for complete rows

  explicit PatternIndex(const MaskedDataset& d) : group_of_row(static_cast<std::size_t>(d.n()), -1) {
    std::vector<std::vector<bool>> keys;
    for (Index i = 0; i < d.n(); ++i) {
      if (!d.row_has_missing(i)) continue;
      std::vector<bool> key(static_cast<std::size_t>(d.p()));
      for (Index j = 0; j < d.p(); ++j) key[static_cast<std::size_t>(j)] = d.missing(i, j);
      auto it = std::find(keys.begin(), keys.end(), key);
      std::size_t g = static_cast<std::size_t>(it - keys.begin());
      if (it == keys.end()) {
        keys.push_back(key);
        Group group;
        for (Index j = 0; j < d.p(); ++j) (key[static_cast<std::size_t>(j)] ? group.mis : group.obs).push_back(j);
        groups.push_back(std::move(group));
      }
      groups[g].rows.push_back(i);
      group_of_row[static_cast<std::size_t>(i)] = static_cast<int>(g);
    }
  }

  /// One conditioner per group under `theta`.
  std::vector<PatternConditioner> conditioners(const Theta& theta) const {
    std::vector<PatternConditioner> out;
    out.reserve(groups.size());
    for (const auto& g : groups)
      out.emplace_back(theta, g.mis, g.obs, "pattern of row " + std::to_string(g.rows.front() + 1));
    return out;
  }
};

}  // namespace saemlogit
