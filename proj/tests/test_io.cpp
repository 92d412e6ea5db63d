#include <sstream>

#include "catch2/catch_amalgamated.hpp"
#include "saemlogit/io.hpp"
#include "saemlogit/simulation.hpp"

using namespace saemlogit;

TEST_CASE("fit document round trip") {
  SimDesign des = default_design(200, 0.1);
  des.seed = 3;
  const MaskedDataset d = generate(des).data;
  SaemConfig c;
  c.n_iter = 60;
  c.k1 = 20;
  InferenceOptions inf;
  inf.fim_samples = 100;
  inf.loglik_samples = 100;
  const FitResult r = fit_model(d, c, inf, ModelSpec{{1, 3}});
  const auto doc = io::fit_to_json(r, d, c);
  const io::StoredFit f = io::fit_from_json(io::json::parse(doc.dump()));
  CHECK(f.theta.beta == r.theta.beta);
  CHECK(f.theta.mu == r.theta.mu);
  CHECK(f.theta.sigma == r.theta.sigma);
  CHECK(f.model == r.model);
  CHECK(f.covariates == d.names());
  CHECK(doc["se"][1].is_null());  // fixed at zero
  CHECK(doc["n_params"] == 23);
  CHECK(doc["diagnostics"]["iterations"] == 60);
}

TEST_CASE("align_columns reorders by name") {
  Matrix x(2, 3);
  x << 1, 2, 3, 4, 5, 6;
  Mask m = Mask::Constant(2, 3, false);
  m(1, 2) = true;
  const MaskedDataset d(Eigen::Vector2d(0, 1), x, m, {"a", "b", "c"});
  const MaskedDataset e = io::align_columns(d, {"c", "a", "b"});
  CHECK(e.names() == std::vector<std::string>{"c", "a", "b"});
  CHECK(e.x()(0, 0) == 3);
  CHECK(e.missing(1, 0));
  CHECK_THROWS(io::align_columns(d, {"a", "z", "b"}));
}

TEST_CASE("trace and prediction CSV layout") {
  SaemTrace t;
  t.beta = {Eigen::Vector2d(0.1, 0.2), Eigen::Vector2d(0.3, 0.4)};
  t.gamma = {1.0, 0.5};
  t.acceptance = {std::numeric_limits<double>::quiet_NaN(), 0.9};
  std::ostringstream out;
  io::write_trace_csv(out, t);
  CHECK(out.str() == "iteration,gamma,acceptance,beta0,beta1\n1,1,NA,0.10000000000000001,0.20000000000000001\n"
                     "2,0.5,0.90000000000000002,0.29999999999999999,0.40000000000000002\n");
}
