#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "saemlogit/data_model.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/inference.hpp"
#include "saemlogit/logistic.hpp"
#include "saemlogit/rng.hpp"
#include "saemlogit/saem.hpp"
#include "saemlogit/selection.hpp"

namespace saemlogit {

// ---------------------------------------------------------------------------
// Designs

enum class CovariateLaw { kGaussian, kStudent, kMixture };

struct McarSpec {
  double rate = 0.1;
};

/// Each row draws a pattern eta (eta_j = 1 with probability pattern_prob, never all zero);
/// coordinates with eta_j = 0 go missing with probability sigmoid(phi0 + sum_{eta_j=1} phi_j x~_j),
/// x~ the standardized covariates, and phi0 calibrated to target_rate.
struct MarSpec {
  double pattern_prob = 0.5;
  Vector phi;  // empty means all ones
  double target_rate = 0.1;
};

struct SimDesign {
  Index n = 1000;
  Vector beta_true;
  Vector mu_true;
  Matrix sigma_true;
  CovariateLaw law = CovariateLaw::kGaussian;
  double dof = 5.0;            // Student-t degrees of freedom
  Vector mixture_mu2;          // second-component mean; the first is mu_true
  std::variant<McarSpec, MarSpec> missing = McarSpec{};
  std::uint64_t seed = 1;

  Index p() const { return mu_true.size(); }

  void validate() const {
    if (n < 2) throw std::invalid_argument("design needs n >= 2");
    if (beta_true.size() != p() + 1) throw DimensionError("beta_true must have length p+1");
    if (sigma_true.rows() != p() || sigma_true.cols() != p()) throw DimensionError("sigma_true must be p x p");
    Eigen::LLT<Matrix> llt(sigma_true);
    if (llt.info() != Eigen::Success) throw SingularityError("sigma_true is not positive definite");
    if (law == CovariateLaw::kStudent && !(dof > 0.0)) throw std::invalid_argument("dof must be positive");
    if (law == CovariateLaw::kMixture && mixture_mu2.size() != p()) throw DimensionError("mixture_mu2 must have length p");
    if (const auto* m = std::get_if<McarSpec>(&missing); m && !(m->rate >= 0.0 && m->rate < 1.0))
      throw std::invalid_argument("missing rate must lie in [0, 1)");
    if (const auto* m = std::get_if<MarSpec>(&missing); m && !(m->target_rate >= 0.0 && m->target_rate < 1.0))
      throw std::invalid_argument("missing rate must lie in [0, 1)");
  }
};

/// Block correlation matrix used by the reference simulation design.
inline Matrix correlation_c() {
  Matrix c(5, 5);
  c << 1.0, 0.8, 0.0, 0.0, 0.0,  //
      0.8, 1.0, 0.0, 0.0, 0.0,   //
      0.0, 0.0, 1.0, 0.3, 0.6,   //
      0.0, 0.0, 0.3, 1.0, 0.7,   //
      0.0, 0.0, 0.6, 0.7, 1.0;
  return c;
}

/// n x 5 Gaussian covariates, mu = (1..5), sd = (1..5), correlation C,
/// beta = (-0.2, 0.5, -0.3, 1, 0, -0.6), MCAR at `rate`.
inline SimDesign default_design(Index n = 1000, double rate = 0.1) {
  SimDesign d;
  d.n = n;
  d.beta_true.resize(6);
  d.beta_true << -0.2, 0.5, -0.3, 1.0, 0.0, -0.6;
  d.mu_true.resize(5);
  d.mu_true << 1.0, 2.0, 3.0, 4.0, 5.0;
  const Vector sd = d.mu_true;
  d.sigma_true = sd.asDiagonal() * correlation_c() * sd.asDiagonal();
  d.missing = McarSpec{rate};
  return d;
}

/// Named designs: default, mar, student5, student20, mixture, null-model, sparse.
/// `separability` scales beta_true.
inline SimDesign preset_design(const std::string& name, Index n = 1000, double rate = 0.1, double separability = 1.0) {
  SimDesign d = default_design(n, rate);
  if (name == "default") {
  } else if (name == "mar") {
    d.missing = MarSpec{0.5, Vector(), rate};
  } else if (name == "student5" || name == "student20") {
    d.law = CovariateLaw::kStudent;
    d.dof = name == "student5" ? 5.0 : 20.0;
  } else if (name == "mixture") {
    d.law = CovariateLaw::kMixture;
    d.mixture_mu2 = Vector::Ones(5);
  } else if (name == "null-model") {
    d.beta_true.tail(5).setZero();
  } else if (name == "sparse") {
    d.beta_true << -0.2, 0.5, 0.0, 1.0, 0.0, -0.6;
  } else {
    throw std::invalid_argument("unknown design '" + name + "'");
  }
  d.beta_true *= separability;
  return d;
}

// ---------------------------------------------------------------------------
// Missingness mechanisms

inline Mask mcar_mask(Index n, Index p, double rate, Rng& rng) {
  std::bernoulli_distribution draw(rate);
  Mask mask(n, p);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < p; ++j) mask(i, j) = draw(rng);
  return mask;
}

struct MarResult {
  Mask mask;
  Mask pattern;  // eta: true = always observed in this row
  double phi0 = 0.0;
  double realized_rate = 0.0;
};

/// MAR amputation. Patterns and uniforms are drawn once, so the realized rate is
/// monotone in phi0 and bisection brings it within 0.005 of target_rate.
inline MarResult mar_mask(const Matrix& x, double pattern_prob, const Vector& phi_in, double target_rate, Rng& rng) {
  const Index n = x.rows();
  const Index p = x.cols();
  if (!(pattern_prob > 0.0 && pattern_prob < 1.0)) throw std::invalid_argument("pattern_prob must lie in (0, 1)");
  const Vector phi = phi_in.size() == 0 ? Vector::Ones(p) : phi_in;
  if (phi.size() != p) throw DimensionError("phi must have one weight per covariate");

  const Vector mean = x.colwise().mean().transpose();
  Vector sd = ((x.rowwise() - mean.transpose()).array().square().colwise().sum() / static_cast<double>(n - 1))
                  .sqrt()
                  .transpose();
  sd = sd.unaryExpr([](double s) { return s > 0.0 ? s : 1.0; });

  MarResult res;
  res.pattern.resize(n, p);
  Matrix uniforms(n, p);
  Vector linear(n);
  std::bernoulli_distribution eta(pattern_prob);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Index eligible = 0;
  for (Index i = 0; i < n; ++i) {
    do {
      for (Index j = 0; j < p; ++j) res.pattern(i, j) = eta(rng);
    } while (!res.pattern.row(i).any());
    linear[i] = 0.0;
    for (Index j = 0; j < p; ++j) {
      uniforms(i, j) = unif(rng);
      if (res.pattern(i, j)) linear[i] += phi[j] * (x(i, j) - mean[j]) / sd[j];
      else ++eligible;
    }
  }

  const double total = static_cast<double>(n * p);
  auto build = [&](double phi0) {
    Mask m(n, p);
    for (Index i = 0; i < n; ++i) {
      const double prob = sigmoid(phi0 + linear[i]);
      for (Index j = 0; j < p; ++j) m(i, j) = !res.pattern(i, j) && uniforms(i, j) < prob;
    }
    return m;
  };
  if (static_cast<double>(eligible) / total < target_rate)
    throw std::invalid_argument("target missing rate exceeds the share of maskable entries");

  double lo = -60.0;
  double hi = 60.0;
  double best_phi0 = 0.0;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double rate = static_cast<double>(build(mid).count()) / total;
    if (std::abs(rate - target_rate) < best_gap) {
      best_gap = std::abs(rate - target_rate);
      best_phi0 = mid;
    }
    if (best_gap <= 1e-12 || hi - lo < 1e-10) break;
    (rate < target_rate ? lo : hi) = mid;
  }
  res.phi0 = best_phi0;
  res.mask = build(best_phi0);
  res.realized_rate = static_cast<double>(res.mask.count()) / total;
  if (std::abs(res.realized_rate - target_rate) > 0.005)
    throw NumericalError("MAR calibration missed the target rate");
  return res;
}

// ---------------------------------------------------------------------------
// Generation

struct Generated {
  MaskedDataset data;
  Matrix complete;
  Mask mask;
};

inline Generated generate(const SimDesign& design, Rng& rng) {
  design.validate();
  const Index n = design.n;
  const Index p = design.p();
  const Matrix lower = Eigen::LLT<Matrix>(design.sigma_true).matrixL();
  std::normal_distribution<double> normal;
  std::chi_squared_distribution<double> chi2(design.law == CovariateLaw::kStudent ? design.dof : 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Generated g;
  g.complete.resize(n, p);
  Vector y(n);
  Vector z(p);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < p; ++j) z[j] = normal(rng);
    Vector xi = lower * z;
    if (design.law == CovariateLaw::kStudent) xi *= std::sqrt(design.dof / chi2(rng));
    const bool second = design.law == CovariateLaw::kMixture && i >= n / 2;
    xi += second ? design.mixture_mu2 : design.mu_true;
    g.complete.row(i) = xi.transpose();
    const double prob = sigmoid(design.beta_true[0] + design.beta_true.tail(p).dot(xi));
    y[i] = unif(rng) < prob ? 1.0 : 0.0;
  }

  if (const auto* mcar = std::get_if<McarSpec>(&design.missing)) {
    g.mask = mcar_mask(n, p, mcar->rate, rng);
  } else {
    const auto& mar = std::get<MarSpec>(design.missing);
    g.mask = mar_mask(g.complete, mar.pattern_prob, mar.phi, mar.target_rate, rng).mask;
  }
  // A column left without any observed value is not estimable; unmask one cell.
  for (Index j = 0; j < p; ++j)
    if (n > 0 && g.mask.col(j).all()) g.mask(0, j) = false;
  g.data = MaskedDataset(std::move(y), g.complete, g.mask);
  return g;
}

inline Generated generate(const SimDesign& design) {
  Rng rng = make_stream(design.seed, StreamTag::kGenerate);
  return generate(design, rng);
}

// ---------------------------------------------------------------------------
// Scores

struct ScoreReport {
  double auc = 0.0;
  double brier = 0.0;
  double logscore = 0.0;  // mean log predictive probability of the observed label (higher is better)
  double cost = 0.0;
  // confusion[truth][predicted]
  std::array<std::array<Index, 2>, 2> confusion{};
};

/// Area under the ROC curve by the rank statistic with average ranks for ties.
inline double auc(const std::vector<double>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size()) throw DimensionError("auc: lengths differ");
  const std::size_t n = probs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && probs[order[j + 1]] == probs[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double n1 = 0.0;
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i] == 1) {
      n1 += 1.0;
      rank_sum += rank[i];
    }
  const double n0 = static_cast<double>(n) - n1;
  if (n1 == 0.0 || n0 == 0.0) throw DomainError("AUC is undefined when all labels belong to one class");
  return (rank_sum - n1 * (n1 + 1.0) / 2.0) / (n1 * n0);
}

/// Weighted misclassification loss: (1/n) sum w0 [y=1, yhat=0] + w1 [y=0, yhat=1].
inline double weighted_cost(const std::vector<int>& predicted, const std::vector<int>& labels, double w0, double w1) {
  if (predicted.size() != labels.size()) throw DimensionError("weighted_cost: lengths differ");
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1 && predicted[i] == 0) total += w0;
    if (labels[i] == 0 && predicted[i] == 1) total += w1;
  }
  return total / static_cast<double>(labels.size());
}

/// Threshold minimizing the expected weighted cost: predict 1 when w0 p >= w1 (1 - p).
inline double cost_threshold(double w0, double w1) { return w1 / (w0 + w1); }

inline ScoreReport score(const std::vector<double>& probs, const std::vector<int>& labels, double threshold = 0.5,
                         double w0 = 0.5, double w1 = 0.5) {
  if (!(w0 > 0.0 && w1 > 0.0) || std::abs(w0 + w1 - 1.0) > 1e-12)
    throw std::invalid_argument("cost weights must be positive and sum to 1");
  if (probs.empty() || probs.size() != labels.size()) throw DimensionError("score: lengths differ or empty");
  ScoreReport r;
  r.auc = auc(probs, labels);
  std::vector<int> predicted(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double prob = probs[i];
    const double y = labels[i];
    r.brier += (prob - y) * (prob - y);
    const double clamped = std::clamp(prob, 1e-12, 1.0 - 1e-12);
    r.logscore += y * std::log(clamped) + (1.0 - y) * std::log(1.0 - clamped);
    predicted[i] = prob >= threshold ? 1 : 0;
    ++r.confusion[static_cast<std::size_t>(labels[i])][static_cast<std::size_t>(predicted[i])];
  }
  const double n = static_cast<double>(probs.size());
  r.brier /= n;
  r.logscore /= n;
  r.cost = weighted_cost(predicted, labels, w0, w1);
  return r;
}

// ---------------------------------------------------------------------------
// Replication studies

enum class StudyMethod { kSaem, kCompleteCase, kMeanImpute };

inline std::string to_string(StudyMethod m) {
  switch (m) {
    case StudyMethod::kSaem: return "saem";
    case StudyMethod::kCompleteCase: return "complete_case";
    case StudyMethod::kMeanImpute: return "mean_impute";
  }
  return "?";
}

inline StudyMethod parse_study_method(const std::string& s) {
  if (s == "saem") return StudyMethod::kSaem;
  if (s == "complete_case" || s == "cc") return StudyMethod::kCompleteCase;
  if (s == "mean_impute" || s == "mean") return StudyMethod::kMeanImpute;
  throw std::invalid_argument("unknown method '" + s + "'");
}

struct StudyOptions {
  SaemConfig saem;
  InferenceOptions inference;
  std::uint64_t seed = 1;
  bool with_scores = true;
  Index n_test = 100;
  int predict_samples = 1000;
  double threshold = 0.5;
  double w0 = 0.5;
  double w1 = 0.5;
};

struct ReplicationRecord {
  int rep = 0;
  bool ok = false;
  std::string error;
  Vector est;
  Vector se;
  Vector lo;
  Vector hi;
  bool has_scores = false;
  ScoreReport scores;
};

struct CoverageRow {
  Index coordinate = 0;
  double truth = 0.0;
  double coverage_pct = 0.0;
  double mean_ci_length = 0.0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double empirical_sd = 0.0;
  double mean_se = 0.0;
  int reps_used = 0;
};

struct StudyTables {
  StudyMethod method = StudyMethod::kSaem;
  Vector beta_true;
  std::vector<ReplicationRecord> reps;
  std::vector<CoverageRow> coverage;
  int failures = 0;
};

/// Coefficients, Wald intervals of a complete-data logistic fit on (x, y).
struct BaselineFit {
  Vector beta;
  WaldResult wald;
};

inline BaselineFit fit_baseline(const Matrix& x, const Vector& y, double level) {
  BaselineFit out;
  const NewtonResult nr = fit_newton(design_matrix(x), y);
  if (nr.separation) throw NumericalError(nr.warning);
  out.beta = nr.beta;
  out.wald = wald_ci(nr.information, nr.beta, level);
  return out;
}

/// Drops every row with a missing entry, then fits.
inline BaselineFit fit_complete_case(const MaskedDataset& d, double level = 0.95) {
  std::vector<Index> keep;
  for (Index i = 0; i < d.n(); ++i)
    if (!d.row_has_missing(i)) keep.push_back(i);
  const MaskedDataset cc = d.select_rows(keep);
  return fit_baseline(cc.x(), cc.y(), level);
}

/// Fills missing entries with observed column means, then fits.
inline BaselineFit fit_mean_impute(const MaskedDataset& d, double level = 0.95) {
  return fit_baseline(d.filled(d.observed_means()), d.y(), level);
}

/// Probabilities for a test set that is mean-imputed with its own observed column means.
inline std::vector<double> predict_mean_imputed(const Vector& beta, const MaskedDataset& test) {
  const Matrix filled = test.filled(test.observed_means());
  std::vector<double> probs(static_cast<std::size_t>(test.n()));
  for (Index i = 0; i < test.n(); ++i)
    probs[static_cast<std::size_t>(i)] = sigmoid(beta[0] + beta.tail(test.p()).dot(filled.row(i).transpose()));
  return probs;
}

inline std::vector<int> labels_of(const MaskedDataset& d) {
  std::vector<int> out(static_cast<std::size_t>(d.n()));
  for (Index i = 0; i < d.n(); ++i) out[static_cast<std::size_t>(i)] = d.y(i);
  return out;
}

inline std::vector<CoverageRow> summarize_coverage(const Vector& beta_true, const std::vector<ReplicationRecord>& reps) {
  std::vector<CoverageRow> rows;
  for (Index j = 0; j < beta_true.size(); ++j) {
    CoverageRow row;
    row.coordinate = j;
    row.truth = beta_true[j];
    std::vector<double> est;
    double hits = 0.0;
    double length = 0.0;
    double se = 0.0;
    for (const auto& r : reps) {
      if (!r.ok) continue;
      est.push_back(r.est[j]);
      hits += (r.lo[j] <= beta_true[j] && beta_true[j] <= r.hi[j]) ? 1.0 : 0.0;
      length += r.hi[j] - r.lo[j];
      se += r.se[j];
    }
    row.reps_used = static_cast<int>(est.size());
    if (!est.empty()) {
      const double m = static_cast<double>(est.size());
      row.coverage_pct = 100.0 * hits / m;
      row.mean_ci_length = length / m;
      row.mean_se = se / m;
      row.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / m;
      row.bias = row.mean_estimate - row.truth;
      double ss = 0.0;
      for (double e : est) ss += (e - row.mean_estimate) * (e - row.mean_estimate);
      row.empirical_sd = est.size() > 1 ? std::sqrt(ss / (m - 1.0)) : 0.0;
    }
    rows.push_back(row);
  }
  return rows;
}

/// Training and test sets of replication `rep`; identical across methods for a given seed.
inline std::pair<Generated, Generated> replication_data(const SimDesign& design, std::uint64_t seed, int rep,
                                                        Index n_test) {
  SimDesign train = design;
  train.seed = derive_seed(seed, StreamTag::kReplication, {static_cast<std::uint64_t>(rep)});
  SimDesign test = design;
  test.n = n_test;
  test.seed = derive_seed(seed, StreamTag::kTestSet, {static_cast<std::uint64_t>(rep)});
  return {generate(train), generate(test)};
}

/// R replications of `design` fitted by `method`: per-replication estimates and intervals, coverage
/// summary and (optionally) test-set scores. Failed replications are recorded; more than 10% aborts.
inline StudyTables replicate_study(const SimDesign& design, int reps, StudyMethod method, const StudyOptions& opts) {
  if (reps < 1) throw std::invalid_argument("replicate_study: need at least one replication");
  design.validate();
  StudyTables t;
  t.method = method;
  t.beta_true = design.beta_true;
  for (int rep = 0; rep < reps; ++rep) {
    ReplicationRecord rec;
    rec.rep = rep;
    try {
      auto [train, test] = replication_data(design, opts.seed, rep, opts.with_scores ? opts.n_test : 2);
      std::vector<double> probs;
      if (method == StudyMethod::kSaem) {
        SaemConfig cfg = opts.saem;
        cfg.seed = derive_seed(opts.seed, StreamTag::kSaemSimulation, {static_cast<std::uint64_t>(rep)});
        InferenceOptions inf = opts.inference;
        inf.compute_loglik = false;
        const FitResult fit = fit_model(train.data, cfg, inf);
        rec.est = fit.theta.beta;
        rec.se = fit.se;
        rec.lo = fit.ci_low;
        rec.hi = fit.ci_high;
        if (opts.with_scores) {
          for (const auto& pr : predict_dataset(fit.theta, test.data, opts.predict_samples, opts.threshold, cfg.seed))
            probs.push_back(pr.prob);
        }
      } else {
        const BaselineFit fit = method == StudyMethod::kCompleteCase ? fit_complete_case(train.data, opts.inference.level)
                                                                     : fit_mean_impute(train.data, opts.inference.level);
        rec.est = fit.beta;
        rec.se = fit.wald.se;
        rec.lo = fit.wald.ci_low;
        rec.hi = fit.wald.ci_high;
        if (opts.with_scores) probs = predict_mean_imputed(fit.beta, test.data);
      }
      if (opts.with_scores) {
        rec.scores = score(probs, labels_of(test.data), opts.threshold, opts.w0, opts.w1);
        rec.has_scores = true;
      }
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
      ++t.failures;
      if (t.failures > reps / 10)
        throw NumericalError("study aborted: " + std::to_string(t.failures) + " of " + std::to_string(reps) +
                             " replications failed; last error: " + rec.error);
    }
    t.reps.push_back(std::move(rec));
  }
  t.coverage = summarize_coverage(design.beta_true, t.reps);
  return t;
}

inline void write_estimates_csv(std::ostream& out, const StudyTables& t) {
  const Index q = t.beta_true.size();
  out << "rep";
  for (Index j = 0; j < q; ++j)
    for (const char* f : {"est", "se", "lo", "hi"}) out << ",beta" << j << "_" << f;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& r : t.reps) {
    out << r.rep;
    for (Index j = 0; j < q; ++j) {
      if (!r.ok) {
        out << ",NA,NA,NA,NA";
        continue;
      }
      out << ',' << r.est[j] << ',' << r.se[j] << ',' << r.lo[j] << ',' << r.hi[j];
    }
    out << '\n';
  }
}

inline void write_coverage_csv(std::ostream& out, const StudyTables& t) {
  out << "coordinate,truth,coverage_pct,mean_ci_length,mean_estimate,bias,empirical_sd,mean_se,reps_used\n";
  out << std::setprecision(17);
  for (const auto& c : t.coverage)
    out << "beta" << c.coordinate << ',' << c.truth << ',' << c.coverage_pct << ',' << c.mean_ci_length << ','
        << c.mean_estimate << ',' << c.bias << ',' << c.empirical_sd << ',' << c.mean_se << ',' << c.reps_used << '\n';
}

inline void write_scores_csv(std::ostream& out, const StudyTables& t) {
  out << "rep,auc,brier,logscore,cost,tn,fp,fn,tp\n";
  out << std::setprecision(17);
  for (const auto& r : t.reps) {
    if (!r.has_scores) continue;
    const auto& s = r.scores;
    out << r.rep << ',' << s.auc << ',' << s.brier << ',' << s.logscore << ',' << s.cost << ',' << s.confusion[0][0]
        << ',' << s.confusion[0][1] << ',' << s.confusion[1][0] << ',' << s.confusion[1][1] << '\n';
  }
}

}  // namespace saemlogit
