#include "catch2/catch_amalgamated.hpp"
#include "oracles.hpp"
#include "saemlogit/gaussian.hpp"
#include "saemlogit/rng.hpp"

using namespace saemlogit;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

RowView make_row(const Vector& x, const std::vector<Index>& mis, Index row = 0) {
  RowView rv;
  rv.row = row;
  for (Index j = 0; j < x.size(); ++j) {
    if (std::find(mis.begin(), mis.end(), j) != mis.end()) rv.mis_idx.push_back(j);
    else rv.obs_idx.push_back(j);
  }
  rv.x_obs = x(rv.obs_idx);
  return rv;
}

Matrix random_spd(Index p, Rng& rng) {
  std::normal_distribution<double> z;
  Matrix a(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) a(i, j) = z(rng);
  return a * a.transpose() + 0.5 * Matrix::Identity(p, p);
}

Vector random_vec(Index p, Rng& rng) {
  std::normal_distribution<double> z;
  Vector v(p);
  for (Index i = 0; i < p; ++i) v[i] = z(rng);
  return v;
}

}  // namespace

TEST_CASE("condition: diagonal sigma leaves the missing block unchanged") {
  Theta t{Vector::Zero(5), Vector::LinSpaced(4, 1, 4), Vector::LinSpaced(4, 0.5, 2).asDiagonal()};
  Vector x = Vector::Constant(4, 9.0);
  const auto cg = condition(t, make_row(x, {1, 3}));
  CHECK(cg.mean.isApprox(t.mu(std::vector<Index>{1, 3})));
  CHECK(cg.cov.isApprox(t.sigma(std::vector<Index>{1, 3}, std::vector<Index>{1, 3})));
}

TEST_CASE("condition: bivariate 0.8 correlation, x1 = 1 observed") {
  Matrix s(2, 2);
  s << 1, 0.8, 0.8, 1;
  Theta t{Vector::Zero(3), Vector::Zero(2), s};
  Vector x(2);
  x << 1.0, 0.0;
  const auto cg = condition(t, make_row(x, {1}));
  CHECK_THAT(cg.mean[0], WithinAbs(0.8, 1e-14));
  CHECK_THAT(cg.cov(0, 0), WithinAbs(0.36, 1e-14));
}

TEST_CASE("condition: nothing observed returns the marginal law") {
  Rng rng(3);
  Theta t{Vector::Zero(4), random_vec(3, rng), random_spd(3, rng)};
  const auto cg = condition(t, make_row(Vector::Zero(3), {0, 1, 2}));
  CHECK(cg.mean == t.mu);
  CHECK(cg.cov.isApprox(t.sigma, 1e-15));
}

TEST_CASE("condition: factor reproduces the conditional covariance") {
  Rng rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    const Index p = 6;
    Theta t{Vector::Zero(p + 1), random_vec(p, rng), random_spd(p, rng)};
    const auto cg = condition(t, make_row(random_vec(p, rng), {0, 2, 5}));
    CHECK((cg.chol * cg.chol.transpose() - cg.cov).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((cg.cov - cg.cov.transpose()).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("condition: agrees with the explicit-inverse formula") {
  Rng rng(12);
  const Index p = 5;
  Theta t{Vector::Zero(p + 1), random_vec(p, rng), random_spd(p, rng)};
  const Vector x = random_vec(p, rng);
  const std::vector<Index> mis{1, 4}, obs{0, 2, 3};
  const Matrix soo_inv = t.sigma(obs, obs).inverse();
  const Vector m = t.mu(mis) + t.sigma(mis, obs) * soo_inv * (x(obs) - t.mu(obs));
  const Matrix c = t.sigma(mis, mis) - t.sigma(mis, obs) * soo_inv * t.sigma(obs, mis);
  const auto cg = condition(t, make_row(x, mis));
  CHECK((cg.mean - m).cwiseAbs().maxCoeff() < 1e-10);
  CHECK((cg.cov - c).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("condition: singular observed block names the row") {
  Matrix s(3, 3);
  s << 1, 2, 0, 2, 1, 0, 0, 0, 1;  // observed block {0,1} is indefinite
  Theta t{Vector::Zero(4), Vector::Zero(3), s};
  try {
    condition(t, make_row(Vector::Zero(3), {2}, 41));
    FAIL("expected SingularityError");
  } catch (const SingularityError& e) {
    CHECK_THAT(std::string(e.what()), ContainsSubstring("42"));
  }
  Theta z{Vector::Zero(3), Vector::Zero(2), Matrix::Zero(2, 2)};
  z.sigma(1, 1) = 1.0;
  CHECK_THROWS_AS(condition(z, make_row(Vector::Zero(2), {1})), SingularityError);
  CHECK_THROWS_AS(condition(z, make_row(Vector::Zero(2), {})), std::invalid_argument);
}

TEST_CASE("condition: jitter rescues a barely singular block") {
  Matrix s(3, 3);
  s << 1, 1, 0.2, 1, 1, 0.2, 0.2, 0.2, 1;  // x0 == x1
  Theta t{Vector::Zero(4), Vector::Zero(3), s};
  const auto cg = condition(t, make_row(Vector::Ones(3), {2}));
  CHECK(std::isfinite(cg.mean[0]));
  CHECK(cg.cov(0, 0) > 0.0);
}

TEST_CASE("sample: degenerate variance returns the mean") {
  const auto cg = ConditionalGaussian::from_moments(Vector::Constant(1, 2.5), Matrix::Constant(1, 1, 1e-30));
  Rng rng(1);
  for (int i = 0; i < 10; ++i) CHECK_THAT(sample(cg, rng)[0], WithinAbs(2.5, 1e-10));
}

TEST_CASE("sample: deterministic under a fixed seed") {
  Matrix s(2, 2);
  s << 2, 0.3, 0.3, 1;
  const auto cg = ConditionalGaussian::from_moments(Vector::Ones(2), s);
  Rng a(99), b(99);
  for (int i = 0; i < 5; ++i) CHECK(sample(cg, a) == sample(cg, b));
  Rng c = make_stream(7, StreamTag::kLoglik, {3}), d = make_stream(7, StreamTag::kLoglik, {3});
  CHECK(sample(cg, c) == sample(cg, d));
}

TEST_CASE("sample: moments over 1e5 draws") {
  Matrix s(2, 2);
  s << 2.0, -0.7, -0.7, 0.5;
  Vector m(2);
  m << 1.0, -3.0;
  const auto cg = ConditionalGaussian::from_moments(m, s);
  Rng rng(2024);
  const int n = 100000;
  Matrix draws(n, 2);
  for (int i = 0; i < n; ++i) draws.row(i) = sample(cg, rng).transpose();
  const Vector mean = draws.colwise().mean().transpose();
  const Matrix centered = draws.rowwise() - mean.transpose();
  const Matrix cov = centered.transpose() * centered / (n - 1.0);
  for (int k = 0; k < 2; ++k) CHECK(std::abs(mean[k] - m[k]) < 4.0 * std::sqrt(s(k, k) / n));
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) CHECK(std::abs(cov(a, b) - s(a, b)) < 0.05 * std::abs(s(a, b)));
}

TEST_CASE("log_density: closed-form values") {
  const auto std1 = ConditionalGaussian::from_moments(Vector::Zero(1), Matrix::Identity(1, 1));
  CHECK_THAT(log_density(std1, Vector::Zero(1)), WithinAbs(-0.9189385332046727, 1e-12));

  Rng rng(8);
  const Matrix s = random_spd(3, rng);
  const Vector m = random_vec(3, rng);
  const auto cg = ConditionalGaussian::from_moments(m, s);
  CHECK_THAT(log_density(cg, m), WithinAbs(-0.5 * (3 * std::log(2 * std::numbers::pi) + std::log(s.determinant())), 1e-10));
  CHECK_THROWS_AS(log_density(cg, Vector::Zero(2)), DimensionError);
}

TEST_CASE("log_density: matches the written-out bivariate density") {
  Rng rng(31);
  const Matrix s = random_spd(2, rng);
  const Vector m = random_vec(2, rng);
  const auto cg = ConditionalGaussian::from_moments(m, s);
  for (int i = 0; i < 10; ++i) {
    const Vector v = random_vec(2, rng);
    CHECK_THAT(std::exp(log_density(cg, v)), WithinRel(oracle::bvn_pdf(v[0], v[1], m, s), 1e-10));
  }
}

TEST_CASE("log_density: integrates to one on a grid") {
  Rng rng(4);
  Matrix s = random_spd(2, rng) * 0.3;
  const Vector m = random_vec(2, rng);
  const auto cg = ConditionalGaussian::from_moments(m, s);
  const double ra = 8 * std::sqrt(s(0, 0)), rb = 8 * std::sqrt(s(1, 1));
  const int g = 600;
  const double ha = 2 * ra / g, hb = 2 * rb / g;
  double total = 0.0;
  Vector v(2);
  for (int a = 0; a < g; ++a)
    for (int b = 0; b < g; ++b) {
      v << m[0] - ra + (a + 0.5) * ha, m[1] - rb + (b + 0.5) * hb;
      total += std::exp(log_density(cg, v)) * ha * hb;
    }
  CHECK_THAT(total, WithinAbs(1.0, 1e-3));
}

TEST_CASE("marginal_log_density: special cases") {
  Rng rng(6);
  const Index p = 4;
  Theta t{Vector::Zero(p + 1), random_vec(p, rng), random_spd(p, rng)};
  const Vector x = random_vec(p, rng);
  const auto full = ConditionalGaussian::from_moments(t.mu, t.sigma);
  CHECK_THAT(marginal_log_density(t, make_row(x, {})), WithinAbs(log_density(full, x), 1e-12));

  Theta id{Vector::Zero(p + 1), Vector::Zero(p), Matrix::Identity(p, p)};
  CHECK_THAT(marginal_log_density(id, make_row(Vector::Zero(p), {1})), WithinAbs(-1.5 * kLog2Pi, 1e-12));
  CHECK_THROWS(marginal_log_density(id, make_row(Vector::Zero(p), {0, 1, 2, 3})));
}

TEST_CASE("marginal_log_density: equals the integral over the missing coordinate") {
  Matrix s(2, 2);
  s << 1.5, 0.8 * std::sqrt(1.5 * 0.7), 0.8 * std::sqrt(1.5 * 0.7), 0.7;
  Vector mu(2);
  mu << 0.3, -1.0;
  Theta t{Vector::Zero(3), mu, s};
  Vector x(2);
  x << 1.1, 0.0;
  // 1-D midpoint rule on the missing x2
  const double lo = -12, hi = 12;
  const int g = 200000;
  const double h = (hi - lo) / g;
  double integral = 0.0;
  for (int k = 0; k < g; ++k) integral += oracle::bvn_pdf(x[0], lo + (k + 0.5) * h, mu, s) * h;
  CHECK_THAT(marginal_log_density(t, make_row(x, {1})), WithinAbs(std::log(integral), 1e-4));
}

TEST_CASE("condition is permutation-equivariant") {
  Rng rng(21);
  const Index p = 5;
  Theta t{Vector::Zero(p + 1), random_vec(p, rng), random_spd(p, rng)};
  const Vector x = random_vec(p, rng);
  const std::vector<Index> perm{3, 0, 4, 1, 2};  // new column k is old column perm[k]
  Theta tp{Vector::Zero(p + 1), t.mu(perm), t.sigma(perm, perm)};
  const Vector xp = x(perm);
  // old missing {0, 4} sit at new positions {1, 2}
  const auto a = condition(t, make_row(x, {0, 4}));
  const auto b = condition(tp, make_row(xp, {1, 2}));
  CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((a.cov - b.cov).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("tower property: conditional means average to the unconditional mean") {
  Rng rng(77);
  const Index p = 4;
  Theta t{Vector::Zero(p + 1), random_vec(p, rng), random_spd(p, rng)};
  const auto joint = ConditionalGaussian::from_moments(t.mu, t.sigma);
  const std::vector<Index> mis{1, 2};
  const int n = 20000;
  Matrix means(n, 2);
  for (int i = 0; i < n; ++i) means.row(i) = condition(t, make_row(sample(joint, rng), mis)).mean.transpose();
  const Vector avg = means.colwise().mean().transpose();
  for (int k = 0; k < 2; ++k) {
    const double sd = std::sqrt((means.col(k).array() - avg[k]).square().sum() / (n - 1));
    CHECK(std::abs(avg[k] - t.mu[mis[static_cast<std::size_t>(k)]]) < 5 * sd / std::sqrt(double(n)));
  }
}

TEST_CASE("conditioning never inflates variance") {
  Rng rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    const Index p = 5;
    Theta t{Vector::Zero(p + 1), random_vec(p, rng), random_spd(p, rng)};
    const std::vector<Index> mis{0, 3, 4};
    const auto cg = condition(t, make_row(random_vec(p, rng), mis));
    const Matrix diff = t.sigma(mis, mis) - cg.cov;
    CHECK(Eigen::SelfAdjointEigenSolver<Matrix>(diff).eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("PatternIndex groups rows and its conditioners agree with condition") {
  Mask m(6, 3);
  m << false, false, false,  //
      true, false, false,    //
      false, true, true,     //
      true, false, false,    //
      true, true, true,      //
      false, false, false;
  Rng rng(2);
  Matrix x(6, 3);
  for (Index i = 0; i < 6; ++i) x.row(i) = random_vec(3, rng).transpose();
  const MaskedDataset d(Vector::Zero(6), x, m);
  Theta t{Vector::Zero(4), random_vec(3, rng), random_spd(3, rng)};
  const PatternIndex idx(d);
  CHECK(idx.groups.size() == 3);
  CHECK(idx.group_of_row[0] == -1);
  CHECK(idx.group_of_row[5] == -1);
  CHECK(idx.group_of_row[1] == idx.group_of_row[3]);
  const auto conds = idx.conditioners(t);
  for (Index i = 0; i < 6; ++i) {
    const int g = idx.group_of_row[static_cast<std::size_t>(i)];
    if (g < 0) continue;
    const RowView rv = row_view(d, i);
    const auto direct = condition(t, rv);
    const auto grouped = conds[static_cast<std::size_t>(g)].apply(rv.x_obs);
    CHECK((direct.mean - grouped.mean).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((direct.cov - grouped.cov).cwiseAbs().maxCoeff() < 1e-14);
  }
}
