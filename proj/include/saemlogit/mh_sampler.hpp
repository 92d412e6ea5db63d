#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/logistic.hpp"

namespace saemlogit {

struct ChainState {
  Vector current;
  std::size_t accept_count = 0;
  std::size_t steps = 0;

  double acceptance_rate() const {
    return steps == 0 ? 0.0 : static_cast<double>(accept_count) / static_cast<double>(steps);
  }
};

/// Bernoulli log-likelihood of one row as a function of its missing coordinates.
/// The observed part of the linear predictor is folded into a constant.
class RowLikelihood {
 public:
  RowLikelihood(const Vector& beta, const RowView& rv, int y) : y_(y) {
    offset_ = beta[0];
    for (std::size_t k = 0; k < rv.obs_idx.size(); ++k)
      offset_ += beta[rv.obs_idx[k] + 1] * rv.x_obs[static_cast<Index>(k)];
    beta_mis_.resize(static_cast<Index>(rv.mis_idx.size()));
    for (std::size_t k = 0; k < rv.mis_idx.size(); ++k)
      beta_mis_[static_cast<Index>(k)] = beta[rv.mis_idx[k] + 1];
  }

  /// Same, reading the observed values straight from a dataset row.
  RowLikelihood(const Vector& beta, const MaskedDataset& d, Index i, const std::vector<Index>& obs,
                const std::vector<Index>& mis)
      : y_(d.y(i)) {
    offset_ = beta[0];
    for (Index j : obs) offset_ += beta[j + 1] * d.x()(i, j);
    beta_mis_.resize(static_cast<Index>(mis.size()));
    for (std::size_t k = 0; k < mis.size(); ++k) beta_mis_[static_cast<Index>(k)] = beta[mis[k] + 1];
  }

  double linear_predictor(const Eigen::Ref<const Vector>& x_mis) const { return offset_ + beta_mis_.dot(x_mis); }
  double log_lik(const Eigen::Ref<const Vector>& x_mis) const { return bernoulli_loglik(y_, linear_predictor(x_mis)); }

 private:
  int y_;
  double offset_ = 0.0;
  Vector beta_mis_;
};

/// MH ratio [f/g](cand) / [f/g](curr) for the independence proposal g = p(x_mis | x_obs).
/// Since f is proportional to p(y | x) g, this is p(y | cand) / p(y | curr).
inline double log_acceptance_ratio(const Vector& beta, const RowView& rv, int y, const Eigen::Ref<const Vector>& cand,
                                   const Eigen::Ref<const Vector>& curr) {
  const RowLikelihood lik(beta, rv, y);
  return lik.log_lik(cand) - lik.log_lik(curr);
}

inline double acceptance_ratio(const Vector& beta, const RowView& rv, int y, const Eigen::Ref<const Vector>& cand,
                               const Eigen::Ref<const Vector>& curr) {
  return std::exp(log_acceptance_ratio(beta, rv, y, cand, curr));
}

/// Independence Metropolis-Hastings targeting p(x_mis | x_obs, y) with proposal N(mean, chol chol^T).
///
/// `state.current` holds x_mis^(0) on entry; when it is empty a draw from the
/// proposal is used instead. Runs `steps` transitions, calling
/// `visit(const Vector& state)` after each one, and leaves the final state in
/// `state.current`.
template <class Urbg, class Visitor>
void run_independence_chain(const Eigen::Ref<const Vector>& mean, const Matrix& chol, const RowLikelihood& lik,
                            int steps, Urbg& rng, ChainState& state, Visitor&& visit) {
  const Index m = mean.size();
  if (state.current.size() != m) {
    state.current.resize(m);
    sample_into(state.current, mean, chol, rng);
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Vector cand(m);
  double ll_curr = lik.log_lik(state.current);
  for (int s = 0; s < steps; ++s) {
    sample_into(cand, mean, chol, rng);
    const double ll_cand = lik.log_lik(cand);
    const double u = unif(rng);
    ++state.steps;
    if (std::log(u) < ll_cand - ll_curr) {
      state.current.swap(cand);
      ll_curr = ll_cand;
      ++state.accept_count;
    }
    visit(static_cast<const Vector&>(state.current));
  }
}

struct ChainOutput {
  std::vector<Vector> states;
  ChainState state;
};

/// Stand-alone chain for one row: proposal is condition(theta, rv); starts from `init` or a proposal draw.
template <class Urbg>
ChainOutput run_chain(const Theta& theta, const RowView& rv, int y, int steps, Urbg& rng,
                      const std::optional<Vector>& init = std::nullopt) {
  if (steps < 1) throw std::invalid_argument("run_chain: need at least one step");
  const ConditionalGaussian g = condition(theta, rv);
  const RowLikelihood lik(theta.beta, rv, y);
  ChainOutput out;
  if (init) {
    if (init->size() != g.dim()) throw DimensionError("run_chain: init has the wrong length");
    out.state.current = *init;
  }
  out.states.reserve(static_cast<std::size_t>(steps));
  run_independence_chain(g.mean, g.chol, lik, steps, rng, out.state,
                         [&](const Vector& v) { out.states.push_back(v); });
  return out;
}

}  // namespace saemlogit
