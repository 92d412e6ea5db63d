#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/errors.hpp"
#include "saemlogit/gaussian.hpp"

namespace saemlogit {

/// Numerically stable logistic function.
inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

/// log(sigmoid(t)) without overflow or cancellation.
inline double log_sigmoid(double t) {
  if (t >= 0.0) return -std::log1p(std::exp(-t));
  return t - std::log1p(std::exp(t));
}

/// log p(y | eta) for a Bernoulli response with logit eta.
inline double bernoulli_loglik(int y, double eta) { return y == 1 ? log_sigmoid(eta) : log_sigmoid(-eta); }

/// Design row (1, x_1, ..., x_p).
inline Vector design_row(const Eigen::Ref<const Vector>& x) {
  Vector z(x.size() + 1);
  z[0] = 1.0;
  z.tail(x.size()) = x;
  return z;
}

/// Design matrix [1 | x].
inline Matrix design_matrix(const Matrix& x) {
  Matrix z(x.rows(), x.cols() + 1);
  z.col(0).setOnes();
  z.rightCols(x.cols()) = x;
  return z;
}

/// P(y = 1 | z; beta) for a design row z with z[0] = 1. Kept strictly inside (0, 1):
/// saturated values are pinned to the smallest subnormal and to 1 - 2^-53.
inline double predict_prob(const Eigen::Ref<const Vector>& beta, const Eigen::Ref<const Vector>& z) {
  if (beta.size() != z.size()) throw DimensionError("predict_prob: beta and design row lengths differ");
  return std::clamp(sigmoid(beta.dot(z)), std::numeric_limits<double>::denorm_min(), std::nextafter(1.0, 0.0));
}

/// Complete-data log-likelihood: Bernoulli terms plus Gaussian covariate log-densities.
inline double complete_loglik(const Theta& theta, const Matrix& x, const Vector& y) {
  if (x.cols() != theta.p() || y.size() != x.rows()) throw DimensionError("complete_loglik: shape mismatch");
  const Matrix lower = robust_cholesky(theta.sigma, "sigma");
  const double log_det = log_det_from_cholesky(lower);
  double ll = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const Vector xi = x.row(i).transpose();
    const double eta = theta.beta[0] + theta.beta.tail(theta.p()).dot(xi);
    ll += bernoulli_loglik(y[i] > 0.5 ? 1 : 0, eta);
    ll += gaussian_log_density(xi, theta.mu, lower, log_det);
  }
  return ll;
}

struct ScoreHessian {
  Vector gradient;
  Matrix hessian;
};

/// Gradient z (y - s) and Hessian -s (1 - s) z z^T of the Bernoulli log-likelihood, s = sigmoid(beta^T z).
inline ScoreHessian score_and_hessian(const Eigen::Ref<const Vector>& beta, const Eigen::Ref<const Vector>& z,
                                      int y) {
  if (beta.size() != z.size()) throw DimensionError("score_and_hessian: beta and design row lengths differ");
  const double s = sigmoid(beta.dot(z));
  ScoreHessian out;
  out.gradient = z * (static_cast<double>(y) - s);
  out.hessian = -(s * (1.0 - s)) * (z * z.transpose());
  return out;
}

struct NewtonOptions {
  double tol = 1e-8;
  int max_iter = 100;
  double separation_bound = 30.0;
};

struct NewtonResult {
  Vector beta;
  double loglik = 0.0;
  Vector gradient;
  Matrix information;  // -Hessian at beta
  int iterations = 0;
  bool converged = false;
  /// Set when |beta|_inf exceeds the separation bound without the gradient converging.
  bool separation = false;
  std::string warning;
};

namespace detail {

inline double design_loglik(const Matrix& z, const Vector& y, const Vector& beta) {
  const Vector eta = z * beta;
  double ll = 0.0;
  for (Index i = 0; i < eta.size(); ++i) ll += bernoulli_loglik(y[i] > 0.5 ? 1 : 0, eta[i]);
  return ll;
}

inline void design_derivatives(const Matrix& z, const Vector& y, const Vector& beta, Vector& gradient,
                               Matrix& information) {
  const Vector eta = z * beta;
  Vector resid(eta.size());
  Vector weight(eta.size());
  for (Index i = 0; i < eta.size(); ++i) {
    const double s = sigmoid(eta[i]);
    resid[i] = y[i] - s;
    weight[i] = s * (1.0 - s);
  }
  gradient.noalias() = z.transpose() * resid;
  information.noalias() = z.transpose() * weight.asDiagonal() * z;
}

}  // namespace detail

/// Maximum-likelihood logistic regression by Newton-Raphson with step halving.
///
/// `z` is the design (first column of ones when an intercept is wanted). Stops
/// when |gradient|_inf < tol. Separation (|beta|_inf beyond the bound while
/// the gradient has not converged) is reported on the result rather than
/// thrown; a singular information matrix otherwise throws SingularityError.
inline NewtonResult fit_newton(const Matrix& z, const Vector& y, const NewtonOptions& opts = {},
                               const Vector* start = nullptr) {
  const Index n = z.rows();
  const Index q = z.cols();
  if (y.size() != n) throw DimensionError("fit_newton: response length differs from design rows");
  if (n <= q) throw std::invalid_argument("fit_newton: need more rows than coefficients");

  NewtonResult res;
  res.beta = start ? *start : Vector::Zero(q);
  if (res.beta.size() != q) throw DimensionError("fit_newton: start vector has the wrong length");
  res.loglik = detail::design_loglik(z, y, res.beta);

  auto flag_separation = [&] {
    res.separation = true;
    res.warning = "possible separation: |beta|_inf exceeded " + std::to_string(opts.separation_bound) +
                  " before the gradient converged";
  };

  for (int it = 0;; ++it) {
    detail::design_derivatives(z, y, res.beta, res.gradient, res.information);
    if (res.gradient.lpNorm<Eigen::Infinity>() < opts.tol) {
      res.converged = true;
      res.iterations = it;
      return res;
    }
    if (res.beta.lpNorm<Eigen::Infinity>() > opts.separation_bound) {
      flag_separation();
      res.iterations = it;
      return res;
    }
    if (it == opts.max_iter) {
      res.iterations = it;
      return res;
    }
    Eigen::LDLT<Matrix> ldlt(res.information);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
      throw SingularityError("fit_newton: information matrix is singular");
    }
    const Vector step = ldlt.solve(res.gradient);
    double t = 1.0;
    Vector candidate = res.beta + step;
    double ll = detail::design_loglik(z, y, candidate);
    for (int halving = 0; halving < 30 && !(ll >= res.loglik); ++halving) {
      t *= 0.5;
      candidate = res.beta + t * step;
      ll = detail::design_loglik(z, y, candidate);
    }
    if (!(ll >= res.loglik)) {
      // No ascent along the Newton direction at machine precision.
      res.iterations = it + 1;
      res.converged = res.gradient.lpNorm<Eigen::Infinity>() < std::sqrt(opts.tol);
      return res;
    }
    res.beta = std::move(candidate);
    res.loglik = ll;
  }
}

struct GaussianMle {
  Vector mu;
  Matrix sigma;
};

/// Column means and the divisor-n covariance, symmetrized.
inline GaussianMle gaussian_mle(const Matrix& x) {
  if (x.rows() < 2) throw std::invalid_argument("gaussian_mle: need at least two rows");
  GaussianMle out;
  out.mu = x.colwise().mean().transpose();
  const Matrix centered = x.rowwise() - out.mu.transpose();
  out.sigma = (centered.transpose() * centered) / static_cast<double>(x.rows());
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
  return out;
}

}  // namespace saemlogit
