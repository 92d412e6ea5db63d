#include "catch2/catch_amalgamated.hpp"
#include "oracles.hpp"
#include "saemlogit/mh_sampler.hpp"
#include "saemlogit/rng.hpp"

using namespace saemlogit;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// p = 1, single fully missing coordinate.
struct Scalar {
  Theta theta;
  RowView rv;
};

Scalar scalar_row(double b0, double b1, double mu, double var) {
  Scalar s;
  s.theta.beta = Eigen::Vector2d(b0, b1);
  s.theta.mu = Vector::Constant(1, mu);
  s.theta.sigma = Matrix::Constant(1, 1, var);
  s.rv.mis_idx = {0};
  s.rv.x_obs = Vector(0);
  return s;
}

// Batch-means standard error of a correlated series.
double batch_se(const std::vector<double>& v, int batches = 100) {
  const std::size_t len = v.size() / static_cast<std::size_t>(batches);
  std::vector<double> means;
  for (int b = 0; b < batches; ++b) {
    double s = 0;
    for (std::size_t k = 0; k < len; ++k) s += v[static_cast<std::size_t>(b) * len + k];
    means.push_back(s / static_cast<double>(len));
  }
  double m = 0;
  for (double x : means) m += x;
  m /= batches;
  double ss = 0;
  for (double x : means) ss += (x - m) * (x - m);
  return std::sqrt(ss / (batches - 1) / batches);
}

}  // namespace

TEST_CASE("acceptance_ratio: flat likelihood") {
  RowView rv;
  rv.obs_idx = {0};
  rv.mis_idx = {1, 2};
  rv.x_obs = Vector::Constant(1, 0.7);
  const Vector beta = Vector::Zero(4);
  CHECK(acceptance_ratio(beta, rv, 1, Eigen::Vector2d(5, -3), Eigen::Vector2d(0, 1)) == 1.0);
  CHECK(acceptance_ratio(beta, rv, 0, Eigen::Vector2d(-9, 2), Eigen::Vector2d(4, 4)) == 1.0);
}

TEST_CASE("acceptance_ratio: sigmoid arithmetic") {
  // y = 1, linear predictor 0 at curr and log 3 at cand
  const Scalar s = scalar_row(0.0, 1.0, 0.0, 1.0);
  const Vector curr = Vector::Zero(1), cand = Vector::Constant(1, std::log(3.0));
  CHECK_THAT(acceptance_ratio(s.theta.beta, s.rv, 1, cand, curr), WithinAbs(1.5, 1e-14));
}

TEST_CASE("acceptance_ratio: reciprocity") {
  RowView rv;
  rv.obs_idx = {1};
  rv.mis_idx = {0, 2};
  rv.x_obs = Vector::Constant(1, -0.4);
  Vector beta(4);
  beta << 0.3, -1.2, 0.8, 2.0;
  Rng rng(1);
  std::normal_distribution<double> z;
  for (int rep = 0; rep < 50; ++rep) {
    const Eigen::Vector2d a(3 * z(rng), 3 * z(rng)), b(3 * z(rng), 3 * z(rng));
    for (int y : {0, 1})
      CHECK_THAT(acceptance_ratio(beta, rv, y, a, b) * acceptance_ratio(beta, rv, y, b, a), WithinAbs(1.0, 1e-12));
  }
}

TEST_CASE("run_chain: beta = 0 accepts every proposal, which are plain proposal draws") {
  RowView rv;
  rv.obs_idx = {0};
  rv.mis_idx = {1, 2};
  rv.x_obs = Vector::Constant(1, 1.0);
  Matrix s(3, 3);
  s << 1, 0.5, 0.2, 0.5, 2, 0.1, 0.2, 0.1, 1;
  Theta t{Vector::Zero(4), Eigen::Vector3d(0.1, -0.2, 0.3), s};
  Rng rng(42);
  const auto out = run_chain(t, rv, 1, 200, rng);
  CHECK(out.state.acceptance_rate() == 1.0);
  CHECK(out.state.steps == 200);
  REQUIRE(out.states.size() == 200);

  // Each transition consumes one proposal and one uniform; replay that stream.
  const auto g = condition(t, rv);
  Rng replay(42);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  sample(g, replay);  // initial state
  for (const auto& st : out.states) {
    CHECK(st == sample(g, replay));
    unif(replay);
  }
}

TEST_CASE("run_chain: reproducible under a fixed seed") {
  const Scalar s = scalar_row(0.2, 1.5, 0.0, 2.0);
  Rng a = make_stream(5, StreamTag::kSaemSimulation, {3, 1});
  Rng b = make_stream(5, StreamTag::kSaemSimulation, {3, 1});
  const auto x = run_chain(s.theta, s.rv, 1, 500, a);
  const auto y = run_chain(s.theta, s.rv, 1, 500, b);
  CHECK(x.states == y.states);
  CHECK(x.state.accept_count == y.state.accept_count);
}

TEST_CASE("run_chain: starts from init when given") {
  // Proposals sit near -5 where p(y = 1 | x) is about e^-250; from init = 10 every one is rejected.
  const Scalar s = scalar_row(0.0, 50.0, -5.0, 1e-4);
  Rng rng(3);
  const auto out = run_chain(s.theta, s.rv, 1, 50, rng, Vector::Constant(1, 10.0));
  CHECK(out.state.accept_count == 0);
  for (const auto& st : out.states) CHECK(st[0] == 10.0);
  CHECK_THROWS_AS(run_chain(s.theta, s.rv, 1, 1, rng, Vector::Zero(2)), DimensionError);
  CHECK_THROWS(run_chain(s.theta, s.rv, 1, 0, rng));
}

TEST_CASE("run_chain: acceptance positive for finite beta, counts bounded") {
  const Scalar s = scalar_row(-1.0, 6.0, 0.5, 3.0);
  Rng rng(8);
  const auto out = run_chain(s.theta, s.rv, 1, 2000, rng);
  CHECK(out.state.accept_count > 0);
  CHECK(out.state.accept_count < out.state.steps);
  CHECK(out.state.acceptance_rate() > 0.0);
  CHECK(out.state.acceptance_rate() < 1.0);
}

TEST_CASE("run_chain: posterior mean matches Gauss-Hermite quadrature") {
  const Scalar s = scalar_row(0.0, 1.0, 0.0, 1.0);
  // E[x | y = 1] = E[x sigma(x)] / E[sigma(x)], x ~ N(0, 1)
  const double num = oracle::normal_expectation([](double x) { return x * oracle::logistic(x); }, 0.0, 1.0);
  const double den = oracle::normal_expectation([](double x) { return oracle::logistic(x); }, 0.0, 1.0);
  const double exact = num / den;
  Rng rng(2718);
  const auto out = run_chain(s.theta, s.rv, 1, 100000, rng);
  std::vector<double> v;
  double mean = 0;
  for (const auto& st : out.states) {
    v.push_back(st[0]);
    mean += st[0];
  }
  mean /= static_cast<double>(v.size());
  const double se = batch_se(v);
  INFO("chain mean " << mean << " exact " << exact << " se " << se);
  CHECK(std::abs(mean - exact) < 3 * se);
}

TEST_CASE("run_chain: long-run histogram matches the discretized posterior") {
  const double b0 = 0.5, b1 = 2.0, mu = 0.3, var = 1.5;
  const Scalar s = scalar_row(b0, b1, mu, var);
  const int y = 0;
  auto post = [&](double x) {
    const double pr = oracle::logistic(b0 + b1 * x);
    return (y ? pr : 1 - pr) * oracle::normal_pdf(x, mu, var);
  };
  const double lo = mu - 6 * std::sqrt(var), hi = mu + 6 * std::sqrt(var);
  const int bins = 40;
  const double w = (hi - lo) / bins;
  std::vector<double> mass(bins, 0.0);
  double total = 0.0;
  const int sub = 2000;
  for (int b = 0; b < bins; ++b) {
    for (int k = 0; k < sub; ++k) mass[b] += post(lo + b * w + (k + 0.5) * w / sub) * w / sub;
    total += mass[b];
  }
  for (double& m : mass) m /= total;

  Rng rng(99);
  const int steps = 1000000;
  std::vector<double> counts(bins, 0.0);
  double outside = 0;
  ChainState st;
  const auto g = condition(s.theta, s.rv);
  const RowLikelihood lik(s.theta.beta, s.rv, y);
  run_independence_chain(g.mean, g.chol, lik, steps, rng, st, [&](const Vector& v) {
    const int b = static_cast<int>(std::floor((v[0] - lo) / w));
    if (b < 0 || b >= bins) outside += 1;
    else counts[static_cast<std::size_t>(b)] += 1;
  });
  double tv = outside / steps;
  for (int b = 0; b < bins; ++b) tv += std::abs(counts[b] / steps - mass[b]);
  tv *= 0.5;
  INFO("total variation " << tv);
  CHECK(tv < 0.02);
}
