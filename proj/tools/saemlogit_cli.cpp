// Command-line front end: fit, loglik, select, predict, simulate, generate.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "saemlogit/io.hpp"
#include "saemlogit/saemlogit.hpp"

namespace fs = std::filesystem;
using namespace saemlogit;

namespace {

struct DataArgs {
  std::string input;
  std::string response = "y";
  std::vector<std::string> missing_tokens;
};

void add_data_options(CLI::App* cmd, DataArgs& a, bool input_required = true) {
  auto* opt = cmd->add_option("--input", a.input, "Delimited file with a header row");
  if (input_required) opt->required();
  cmd->add_option("--response", a.response, "Name of the 0/1 response column")->capture_default_str();
  cmd->add_option("--missing-token", a.missing_tokens, "Cell value meaning 'missing' (repeatable; default: empty and NA)");
}

MaskedDataset load(const DataArgs& a, bool require_response = true) {
  CsvOptions opts;
  opts.response = a.response;
  opts.require_response = require_response;
  if (!a.missing_tokens.empty()) opts.missing_tokens = a.missing_tokens;
  MaskedDataset d = load_csv(a.input, opts);
  std::cerr << "loaded " << d.n() << " rows, " << d.p() << " covariates, " << d.missing_count()
            << " missing cells\n";
  return d;
}

void add_saem_options(CLI::App* cmd, SaemConfig& c) {
  cmd->add_option("--k1", c.k1, "Iterations with step size 1")->capture_default_str();
  cmd->add_option("--tau", c.tau, "Step-size decay exponent in (0.5, 1]")->capture_default_str();
  cmd->add_option("--iters", c.n_iter, "Total SAEM iterations")->capture_default_str();
  cmd->add_option("--mh-steps", c.mh_steps, "MH transitions per row and iteration")->capture_default_str();
  cmd->add_option("--seed", c.seed, "Master seed")->capture_default_str();
}

void add_inference_options(CLI::App* cmd, InferenceOptions& inf) {
  cmd->add_option("--fim-samples", inf.fim_samples, "MH samples per row for the information matrix")
      ->capture_default_str();
  cmd->add_option("--loglik-samples", inf.loglik_samples, "Importance samples per row for the log-likelihood")
      ->capture_default_str();
  cmd->add_option("--level", inf.level, "Confidence level of the Wald intervals")->capture_default_str();
}

ModelSpec model_from_names(const MaskedDataset& d, const std::vector<std::string>& names) {
  ModelSpec m;
  for (const auto& name : names) {
    const auto it = std::find(d.names().begin(), d.names().end(), name);
    if (it == d.names().end()) throw std::invalid_argument("unknown covariate '" + name + "'");
    m.active.push_back(static_cast<Index>(it - d.names().begin()));
  }
  std::sort(m.active.begin(), m.active.end());
  m.active.erase(std::unique(m.active.begin(), m.active.end()), m.active.end());
  return m;
}

void print_fit(const FitResult& r, const MaskedDataset& d) {
  std::cout << std::setprecision(6) << std::fixed;
  std::cout << "coefficient        estimate        se      ci_low     ci_high\n";
  for (Index j = 0; j <= d.p(); ++j) {
    const std::string name = j == 0 ? "(intercept)" : d.names()[static_cast<std::size_t>(j - 1)];
    std::cout << std::left << std::setw(16) << name << std::right << std::setw(12) << r.theta.beta[j]
              << std::setw(10) << r.se[j] << std::setw(12) << r.ci_low[j] << std::setw(12) << r.ci_high[j] << '\n';
  }
  std::cout << "loglik " << r.loglik_obs << "\nBIC " << r.bic << '\n';
  for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Logistic regression with missing covariates (SAEM)"};
  app.require_subcommand(1);

  // fit
  DataArgs fit_data;
  SaemConfig fit_cfg;
  InferenceOptions fit_inf;
  std::string fit_out = "fit.json";
  std::string fit_trace;
  std::vector<std::string> fit_active;
  auto* fit = app.add_subcommand("fit", "Estimate parameters, standard errors, log-likelihood and BIC");
  add_data_options(fit, fit_data);
  add_saem_options(fit, fit_cfg);
  add_inference_options(fit, fit_inf);
  fit->add_option("--out", fit_out, "Fit document (JSON)")->capture_default_str();
  fit->add_option("--trace", fit_trace, "Per-iteration trace (CSV)");
  fit->add_option("--active", fit_active, "Restrict the regression to these covariates");

  // loglik
  DataArgs ll_data;
  std::string ll_fit;
  int ll_samples = 1000;
  std::uint64_t ll_seed = 1;
  std::string ll_rows;
  auto* ll = app.add_subcommand("loglik", "Observed log-likelihood and BIC of a stored fit");
  add_data_options(ll, ll_data);
  ll->add_option("--fit", ll_fit, "Fit document produced by 'fit' or 'select'")->required();
  ll->add_option("--samples", ll_samples, "Importance samples per incomplete row")->capture_default_str();
  ll->add_option("--seed", ll_seed, "Seed")->capture_default_str();
  ll->add_option("--per-row", ll_rows, "Write per-row log-likelihood contributions (CSV)");

  // select
  DataArgs sel_data;
  SelectionOptions sel_opts;
  std::string sel_method = "forward";
  bool sel_exhaustive = false;
  std::string sel_out = "model.json";
  auto* sel = app.add_subcommand("select", "BIC model selection over covariate subsets");
  add_data_options(sel, sel_data);
  add_saem_options(sel, sel_opts.saem);
  add_inference_options(sel, sel_opts.inference);
  sel->add_option("--method", sel_method, "forward | exhaustive")
      ->check(CLI::IsMember({"forward", "exhaustive"}))
      ->capture_default_str();
  sel->add_flag("--exhaustive", sel_exhaustive, "Shorthand for --method exhaustive");
  sel->add_option("--candidate-iters", sel_opts.candidate_iters, "SAEM iterations per candidate model")
      ->capture_default_str();
  sel->add_option("--out", sel_out, "Fit document of the selected model (JSON)")->capture_default_str();

  // predict
  DataArgs pr_data;
  std::string pr_fit;
  int pr_samples = 1000;
  double pr_threshold = 0.5;
  double pr_w0 = 0.5;
  std::uint64_t pr_seed = 1;
  std::string pr_out = "preds.csv";
  auto* pr = app.add_subcommand("predict", "Predict responses for rows with missing covariates");
  add_data_options(pr, pr_data);
  pr->add_option("--fit", pr_fit, "Fit document")->required();
  pr->add_option("--samples", pr_samples, "Monte Carlo draws per incomplete row")->capture_default_str();
  pr->add_option("--threshold", pr_threshold, "Label 1 when probability >= threshold")->capture_default_str();
  pr->add_option("--w0", pr_w0, "False-negative cost weight for the reported cost (w1 = 1 - w0)")
      ->capture_default_str();
  pr->add_option("--seed", pr_seed, "Seed")->capture_default_str();
  pr->add_option("--out", pr_out, "Predictions (CSV: row, prob, label)")->capture_default_str();

  // simulate
  std::string sim_design = "default";
  Index sim_n = 1000;
  double sim_rate = 0.1;
  double sim_sep = 1.0;
  int sim_reps = 400;
  std::string sim_method = "saem";
  std::string sim_out = "study";
  StudyOptions sim_opts;
  auto* sim = app.add_subcommand("simulate", "Replication study on synthetic data");
  sim->add_option("--design", sim_design, "default | mar | student5 | student20 | mixture | null-model | sparse")
      ->capture_default_str();
  sim->add_option("--n", sim_n, "Training rows")->capture_default_str();
  sim->add_option("--rate", sim_rate, "Missing-value rate")->capture_default_str();
  sim->add_option("--separability", sim_sep, "Scale factor applied to the true coefficients")->capture_default_str();
  sim->add_option("--reps", sim_reps, "Replications")->capture_default_str();
  sim->add_option("--method", sim_method, "saem | complete_case | mean_impute")->capture_default_str();
  sim->add_option("--seed", sim_opts.seed, "Master seed")->capture_default_str();
  sim->add_option("--n-test", sim_opts.n_test, "Test rows per replication")->capture_default_str();
  sim->add_option("--out", sim_out, "Output directory")->capture_default_str();
  add_inference_options(sim, sim_opts.inference);
  sim->add_option("--iters", sim_opts.saem.n_iter, "SAEM iterations")->capture_default_str();
  sim->add_option("--mh-steps", sim_opts.saem.mh_steps, "MH transitions per row and iteration")->capture_default_str();

  // generate
  std::string gen_design = "default";
  Index gen_n = 1000;
  double gen_rate = 0.1;
  double gen_sep = 1.0;
  std::uint64_t gen_seed = 1;
  std::string gen_out = "data.csv";
  auto* gen = app.add_subcommand("generate", "Write one synthetic dataset");
  gen->add_option("--design", gen_design, "Design name (see simulate)")->capture_default_str();
  gen->add_option("--n", gen_n, "Rows")->capture_default_str();
  gen->add_option("--rate", gen_rate, "Missing-value rate")->capture_default_str();
  gen->add_option("--separability", gen_sep, "Scale factor applied to the true coefficients")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output CSV")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*fit) {
      const MaskedDataset d = load(fit_data);
      std::optional<ModelSpec> model;
      if (!fit_active.empty()) model = model_from_names(d, fit_active);
      const FitResult r = fit_model(d, fit_cfg, fit_inf, model);
      io::write_json(fit_out, io::fit_to_json(r, d, fit_cfg));
      if (!fit_trace.empty()) {
        std::ofstream out(fit_trace);
        io::write_trace_csv(out, r.trace);
      }
      print_fit(r, d);
    } else if (*ll) {
      const io::StoredFit f = io::fit_from_json(io::read_json(ll_fit));
      ll_data.response = ll_data.response == "y" ? f.response : ll_data.response;
      const MaskedDataset d = io::align_columns(load(ll_data), f.covariates);
      const LoglikResult r = obs_loglik(f.theta, d, ll_samples, ll_seed);
      std::cout << std::setprecision(10) << "loglik " << r.total << "\nBIC " << bic(r.total, d.n(), f.model, d.p())
                << '\n';
      if (!ll_rows.empty()) {
        std::ofstream out(ll_rows);
        io::write_row_loglik_csv(out, d, r.per_row);
      }
    } else if (*sel) {
      const MaskedDataset d = load(sel_data);
      if (sel_exhaustive) sel_method = "exhaustive";
      sel_opts.method = sel_method == "forward" ? SearchMethod::kForward : SearchMethod::kExhaustive;
      sel_opts.log = [](const std::string& s) { std::cerr << "warning: " << s << '\n'; };
      const SelectionResult r = select_model(d, sel_opts);
      std::cout << std::setprecision(6) << std::fixed;
      for (const auto& c : r.candidates)
        std::cout << std::setw(40) << std::left << c.model.describe(d.names()) << std::right << " BIC "
                  << (c.ok ? std::to_string(c.bic) : "failed: " + c.error) << '\n';
      std::cout << "selected " << r.best.describe(d.names()) << '\n';
      auto doc = io::fit_to_json(r.final_fit, d, sel_opts.saem);
      doc["selection_method"] = sel_method;
      io::write_json(sel_out, doc);
      print_fit(r.final_fit, d);
    } else if (*pr) {
      const io::StoredFit f = io::fit_from_json(io::read_json(pr_fit));
      pr_data.response = pr_data.response == "y" ? f.response : pr_data.response;
      const MaskedDataset d = io::align_columns(load(pr_data, false), f.covariates);
      const auto preds = predict_dataset(f.theta, d, pr_samples, pr_threshold, pr_seed);
      std::ofstream out(pr_out);
      io::write_predictions_csv(out, d, preds);
      if (d.y().size() == d.n() && d.n() > 0) {
        std::vector<double> probs;
        for (const auto& p : preds) probs.push_back(p.prob);
        const ScoreReport s = score(probs, labels_of(d), pr_threshold, pr_w0, 1.0 - pr_w0);
        std::cout << std::setprecision(6) << "AUC " << s.auc << "\nBrier " << s.brier << "\nlogscore " << s.logscore
                  << "\ncost " << s.cost << "\nconfusion tn=" << s.confusion[0][0] << " fp=" << s.confusion[0][1]
                  << " fn=" << s.confusion[1][0] << " tp=" << s.confusion[1][1] << '\n';
      }
    } else if (*sim) {
      const SimDesign design = preset_design(sim_design, sim_n, sim_rate, sim_sep);
      sim_opts.saem.seed = sim_opts.seed;
      const StudyTables t = replicate_study(design, sim_reps, parse_study_method(sim_method), sim_opts);
      fs::create_directories(sim_out);
      std::ofstream est(fs::path(sim_out) / "estimates.csv");
      write_estimates_csv(est, t);
      std::ofstream cov(fs::path(sim_out) / "coverage.csv");
      write_coverage_csv(cov, t);
      std::ofstream sc(fs::path(sim_out) / "scores.csv");
      write_scores_csv(sc, t);
      std::cout << std::setprecision(4) << std::fixed;
      for (const auto& c : t.coverage)
        std::cout << "beta" << c.coordinate << " bias " << c.bias << " coverage " << c.coverage_pct << "% length "
                  << c.mean_ci_length << '\n';
      if (t.failures) std::cerr << t.failures << " replications failed\n";
    } else if (*gen) {
      SimDesign design = preset_design(gen_design, gen_n, gen_rate, gen_sep);
      design.seed = gen_seed;
      write_csv(gen_out, generate(design).data);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
