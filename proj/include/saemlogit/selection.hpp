#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/inference.hpp"
#include "saemlogit/logistic.hpp"
#include "saemlogit/model_spec.hpp"
#include "saemlogit/rng.hpp"
#include "saemlogit/saem.hpp"

namespace saemlogit {

/// SAEM with coefficients outside `model` held at zero; mu and sigma are estimated on all columns.
inline FitResult constrained_saem(const MaskedDataset& d, const SaemConfig& cfg, const ModelSpec& model,
                                  const InferenceOptions& inf = {}) {
  return fit_model(d, cfg, inf, model);
}

enum class SearchMethod { kForward, kExhaustive };

struct SelectionOptions {
  SaemConfig saem;
  InferenceOptions inference;
  /// SAEM iterations per candidate; the winner is refit with saem.n_iter.
  int candidate_iters = 200;
  SearchMethod method = SearchMethod::kForward;
  /// Receives one line per skipped candidate.
  std::function<void(const std::string&)> log;
};

struct CandidateResult {
  ModelSpec model;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::infinity();
  bool ok = false;
  std::string error;
};

struct SelectionResult {
  ModelSpec best;
  std::vector<CandidateResult> candidates;  // in evaluation order
  FitResult final_fit;
};

namespace detail {

/// Seed of a candidate model, keyed by the names of its active columns so that it does
/// not depend on column order.
inline std::uint64_t candidate_seed(std::uint64_t master, const ModelSpec& model, const std::vector<std::string>& names) {
  std::uint64_t key = 0;
  for (Index j : model.active) key += mix64(std::hash<std::string>{}(names[static_cast<std::size_t>(j)]));
  return derive_seed(master, StreamTag::kSelection, {key, static_cast<std::uint64_t>(model.size())});
}

inline CandidateResult evaluate_candidate(const MaskedDataset& d, const SelectionOptions& opts, const ModelSpec& model) {
  CandidateResult c;
  c.model = model;
  SaemConfig cfg = opts.saem;
  cfg.n_iter = std::max(opts.candidate_iters, cfg.k1 + 1);
  cfg.seed = candidate_seed(opts.saem.seed, model, d.names());
  InferenceOptions inf = opts.inference;
  inf.compute_fim = false;
  // Common importance-sampling streams across candidates.
  inf.loglik_seed = inf.loglik_seed.value_or(opts.saem.seed);
  try {
    const FitResult fit = fit_model(d, cfg, inf, model);
    c.loglik = fit.loglik_obs;
    c.bic = fit.bic;
    c.ok = std::isfinite(c.bic);
    if (!c.ok) c.error = "non-finite BIC";
  } catch (const std::exception& e) {
    c.error = e.what();
  }
  if (!c.ok && opts.log) opts.log("skipping candidate " + model.describe(d.names()) + ": " + c.error);
  return c;
}

inline SelectionResult finish(const MaskedDataset& d, const SelectionOptions& opts, SelectionResult res) {
  InferenceOptions inf = opts.inference;
  inf.loglik_seed = inf.loglik_seed.value_or(opts.saem.seed);
  res.final_fit = fit_model(d, opts.saem, inf, res.best);
  return res;
}

}  // namespace detail

/// Forward selection by observed-data BIC: start from the intercept-only model and add the
/// covariate giving the lowest BIC while it improves on the incumbent.
inline SelectionResult forward_select(const MaskedDataset& d, const SelectionOptions& opts) {
  SelectionResult res;
  CandidateResult incumbent = detail::evaluate_candidate(d, opts, ModelSpec{});
  res.candidates.push_back(incumbent);
  if (!incumbent.ok) throw NumericalError("intercept-only model failed: " + incumbent.error);
  while (true) {
    std::optional<CandidateResult> best_round;
    for (Index j = 0; j < d.p(); ++j) {
      if (incumbent.model.contains(j)) continue;
      CandidateResult c = detail::evaluate_candidate(d, opts, incumbent.model.with(j));
      res.candidates.push_back(c);
      if (c.ok && (!best_round || c.bic < best_round->bic)) best_round = c;
    }
    if (!best_round || !(best_round->bic < incumbent.bic)) break;
    incumbent = *best_round;
  }
  res.best = incumbent.model;
  return detail::finish(d, opts, std::move(res));
}

/// All 2^p models (p <= 15); lowest BIC wins.
inline SelectionResult exhaustive_select(const MaskedDataset& d, const SelectionOptions& opts) {
  if (d.p() > 15) throw std::invalid_argument("exhaustive search is limited to p <= 15");
  SelectionResult res;
  std::optional<CandidateResult> best;
  for (std::uint64_t bits = 0; bits < (std::uint64_t{1} << d.p()); ++bits) {
    CandidateResult c = detail::evaluate_candidate(d, opts, ModelSpec::from_bits(bits, d.p()));
    res.candidates.push_back(c);
    if (c.ok && (!best || c.bic < best->bic)) best = c;
  }
  if (!best) throw NumericalError("every candidate model failed");
  res.best = best->model;
  return detail::finish(d, opts, std::move(res));
}

inline SelectionResult select_model(const MaskedDataset& d, const SelectionOptions& opts) {
  return opts.method == SearchMethod::kForward ? forward_select(d, opts) : exhaustive_select(d, opts);
}

// ---------------------------------------------------------------------------
// Prediction with missing covariates

struct PredictionResult {
  double prob = 0.0;
  int label = 0;
  int s_used = 0;
};

/// P(y = 1 | x_obs) averaged over `samples` draws of x_mis from p(x_mis | x_obs; mu, sigma).
/// Complete rows use sigmoid(beta^T z) directly. Labels are 1 iff prob >= threshold.
template <class Urbg>
PredictionResult predict_incomplete(const Theta& theta, const RowView& rv, int samples, double threshold, Urbg& rng) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw std::invalid_argument("threshold must lie in (0, 1)");
  if (samples < 1) throw std::invalid_argument("predict_incomplete: need at least one sample");
  PredictionResult out;
  Vector x(theta.p());
  for (std::size_t k = 0; k < rv.obs_idx.size(); ++k) x[rv.obs_idx[k]] = rv.x_obs[static_cast<Index>(k)];
  if (rv.mis_idx.empty()) {
    out.prob = predict_prob(theta.beta, design_row(x));
  } else {
    const ConditionalGaussian g = condition(theta, rv);
    const RowLikelihood lik(theta.beta, rv, 1);
    Vector x_mis(g.dim());
    double sum = 0.0;
    for (int s = 0; s < samples; ++s) {
      sample_into(x_mis, g.mean, g.chol, rng);
      sum += sigmoid(lik.linear_predictor(x_mis));
    }
    out.prob = sum / static_cast<double>(samples);
    out.s_used = samples;
  }
  out.label = out.prob >= threshold ? 1 : 0;
  return out;
}

/// Predictions for every row of `d`; row streams are keyed by seed and row id.
inline std::vector<PredictionResult> predict_dataset(const Theta& theta, const MaskedDataset& d, int samples,
                                                     double threshold, std::uint64_t seed) {
  if (d.p() != theta.p()) throw DimensionError("predict: dataset and model have different covariate counts");
  std::vector<PredictionResult> out;
  out.reserve(static_cast<std::size_t>(d.n()));
  for (Index i = 0; i < d.n(); ++i) {
    Rng rng = make_stream(seed, StreamTag::kPrediction, {d.row_id(i)});
    out.push_back(predict_incomplete(theta, row_view(d, i), samples, threshold, rng));
  }
  return out;
}

}  // namespace saemlogit
