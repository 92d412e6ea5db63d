#pragma once

// JSON and CSV serialization used by the command-line tool.

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "saemlogit/data_model.hpp"
#include "saemlogit/inference.hpp"
#include "saemlogit/selection.hpp"

namespace saemlogit::io {

using nlohmann::json;

inline json to_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(std::isfinite(v[i]) ? json(v[i]) : json(nullptr));
  return a;
}

inline json to_json(const Matrix& m) {
  json a = json::array();
  for (Index i = 0; i < m.rows(); ++i) a.push_back(to_json(Vector(m.row(i).transpose())));
  return a;
}

inline Vector vector_from_json(const json& a) {
  Vector v(static_cast<Index>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    v[static_cast<Index>(i)] = a[i].is_null() ? std::numeric_limits<double>::quiet_NaN() : a[i].get<double>();
  return v;
}

inline Matrix matrix_from_json(const json& a) {
  const auto rows = static_cast<Index>(a.size());
  const auto cols = rows ? static_cast<Index>(a[0].size()) : 0;
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    if (static_cast<Index>(a[static_cast<std::size_t>(i)].size()) != cols) throw DimensionError("ragged matrix in JSON");
    m.row(i) = vector_from_json(a[static_cast<std::size_t>(i)]).transpose();
  }
  return m;
}

inline json to_json(const SaemConfig& c) {
  return json{{"k1", c.k1},           {"tau", c.tau},     {"iters", c.n_iter},
              {"mh_steps", c.mh_steps}, {"seed", c.seed}, {"beta_tol", c.beta_tol}};
}

/// Document written by `fit` and `select`, read back by `loglik` and `predict`.
inline json fit_to_json(const FitResult& r, const MaskedDataset& d, const SaemConfig& cfg) {
  json j;
  j["response"] = d.response_name();
  j["covariates"] = d.names();
  json active = json::array();
  for (Index a : r.model.active) active.push_back(d.names()[static_cast<std::size_t>(a)]);
  j["active"] = active;
  j["n"] = r.n;
  j["beta"] = to_json(r.theta.beta);
  j["mu"] = to_json(r.theta.mu);
  j["sigma"] = to_json(r.theta.sigma);
  j["se"] = to_json(r.se);
  j["ci_level"] = r.level;
  j["ci_low"] = to_json(r.ci_low);
  j["ci_high"] = to_json(r.ci_high);
  j["loglik"] = std::isfinite(r.loglik_obs) ? json(r.loglik_obs) : json(nullptr);
  j["bic"] = std::isfinite(r.bic) ? json(r.bic) : json(nullptr);
  j["n_params"] = r.n_params;
  j["config"] = to_json(cfg);
  json diag;
  diag["iterations"] = r.trace.size();
  diag["first_stable_iteration"] =
      r.trace.first_stable_iteration ? json(*r.trace.first_stable_iteration) : json(nullptr);
  double acc = 0.0;
  int counted = 0;
  for (double a : r.trace.acceptance)
    if (std::isfinite(a)) {
      acc += a;
      ++counted;
    }
  diag["mean_acceptance"] = counted ? json(acc / counted) : json(nullptr);
  diag["pseudo_inverse"] = r.pseudo_inverse;
  j["diagnostics"] = diag;
  j["warnings"] = r.warnings;
  return j;
}

struct StoredFit {
  Theta theta;
  ModelSpec model;
  std::vector<std::string> covariates;
  std::string response;
};

inline StoredFit fit_from_json(const json& j) {
  StoredFit f;
  f.theta.beta = vector_from_json(j.at("beta"));
  f.theta.mu = vector_from_json(j.at("mu"));
  f.theta.sigma = matrix_from_json(j.at("sigma"));
  f.theta.validate();
  f.covariates = j.at("covariates").get<std::vector<std::string>>();
  f.response = j.value("response", std::string("y"));
  for (const auto& name : j.value("active", json::array())) {
    const auto it = std::find(f.covariates.begin(), f.covariates.end(), name.get<std::string>());
    if (it == f.covariates.end()) throw std::invalid_argument("active covariate not among covariates");
    f.model.active.push_back(static_cast<Index>(it - f.covariates.begin()));
  }
  std::sort(f.model.active.begin(), f.model.active.end());
  return f;
}

inline json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return json::parse(in);
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << j.dump(2) << '\n';
}

/// Reorders the dataset's columns to match `names` (the fitted model's covariate order).
inline MaskedDataset align_columns(const MaskedDataset& d, const std::vector<std::string>& names) {
  if (d.names() == names) return d;
  std::vector<Index> cols;
  for (const auto& name : names) {
    const auto it = std::find(d.names().begin(), d.names().end(), name);
    if (it == d.names().end()) throw std::invalid_argument("column '" + name + "' missing from input");
    cols.push_back(static_cast<Index>(it - d.names().begin()));
  }
  MaskedDataset out(d.y(), d.x()(Eigen::all, cols), d.mask()(Eigen::all, cols), names, d.row_ids());
  out.set_response_layout(d.response_name(), d.response_position());
  return out;
}

/// One row per SAEM iteration: iteration, gamma, acceptance, beta0..betap.
inline void write_trace_csv(std::ostream& out, const SaemTrace& t) {
  out << "iteration,gamma,acceptance";
  const Index q = t.beta.empty() ? 0 : t.beta.front().size();
  for (Index j = 0; j < q; ++j) out << ",beta" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < t.size(); ++k) {
    out << (k + 1) << ',' << t.gamma[k] << ',';
    if (std::isfinite(t.acceptance[k])) out << t.acceptance[k];
    else out << "NA";
    for (Index j = 0; j < q; ++j) out << ',' << t.beta[k][j];
    out << '\n';
  }
}

inline void write_predictions_csv(std::ostream& out, const MaskedDataset& d, const std::vector<PredictionResult>& preds) {
  out << "row,prob,label\n" << std::setprecision(17);
  for (std::size_t i = 0; i < preds.size(); ++i)
    out << (d.row_id(static_cast<Index>(i)) + 1) << ',' << preds[i].prob << ',' << preds[i].label << '\n';
}

inline void write_row_loglik_csv(std::ostream& out, const MaskedDataset& d, const std::vector<double>& per_row) {
  out << "row,loglik\n" << std::setprecision(17);
  for (std::size_t i = 0; i < per_row.size(); ++i) out << (d.row_id(static_cast<Index>(i)) + 1) << ',' << per_row[i] << '\n';
}

}  // namespace saemlogit::io
