// Scoring rules: frozen hand values, propriety oracles, invariances.
#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "maxstable/scoring.hpp"
#include "testutil.hpp"

using namespace maxstable;

namespace {

MatrixXd rows1d(std::initializer_list<double> xs) {
  MatrixXd m(static_cast<Eigen::Index>(xs.size()), 1);
  Eigen::Index i = 0;
  for (double x : xs) m(i++, 0) = x;
  return m;
}

VectorXd vec1(double x) {
  VectorXd v(1);
  v[0] = x;
  return v;
}

ThetaCurve const_curve(const HGrid& g, double v) {
  return ThetaCurve{g, std::vector<double>(static_cast<std::size_t>(g.count), v)};
}

}  // namespace

TEST_CASE("energy score hand values") {
  // degenerate posterior at the truth
  MatrixXd same(3, 2);
  same << 1.0, 2.0, 1.0, 2.0, 1.0, 2.0;
  VectorXd truth(2);
  truth << 1.0, 2.0;
  CHECK(energy_score(same, truth) == Catch::Approx(0.0).margin(1e-12));

  CHECK(energy_score(rows1d({0.0, 2.0}), vec1(1.0)) == Catch::Approx(0.0).margin(1e-12));
  CHECK(energy_score(rows1d({1.0, 1.0}), vec1(0.0)) == Catch::Approx(1.0).margin(1e-12));

  CHECK_THROWS_AS(energy_score(rows1d({1.0}), vec1(0.0)), DomainError);
  MatrixXd wide(2, 3);
  wide.setZero();
  CHECK_THROWS_AS(energy_score(wide, truth), DomainError);
}

TEST_CASE("energy score invariances") {
  Rng rng(8);
  MatrixXd s(6, 2);
  for (Eigen::Index i = 0; i < s.size(); ++i) s(i / 2, i % 2) = rng.normal();
  VectorXd y(2);
  y << rng.normal(), rng.normal();
  const double base = energy_score(s, y);

  // permutation of samples
  MatrixXd perm(6, 2);
  const int order[] = {3, 1, 5, 0, 4, 2};
  for (int i = 0; i < 6; ++i) perm.row(i) = s.row(order[i]);
  CHECK(energy_score(perm, y) == Catch::Approx(base).epsilon(1e-13));

  // simultaneous orthogonal rotation
  const double a = 0.73;
  MatrixXd rot(2, 2);
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  CHECK(energy_score(s * rot.transpose(), rot * y) == Catch::Approx(base).epsilon(1e-12));
}

TEST_CASE("energy score propriety on discrete 2-D distributions") {
  // Exact expected-score comparison: the true distribution never scores
  // above a perturbation of itself.
  Rng rng(314);
  int wins = 0;
  const int instances = 50;
  for (int t = 0; t < instances; ++t) {
    const int k = 2 + static_cast<int>(rng.integer(4));  // 2..5 atoms
    std::vector<std::array<double, 2>> atoms(static_cast<std::size_t>(k));
    std::vector<double> w(static_cast<std::size_t>(k));
    double wsum = 0.0;
    for (int i = 0; i < k; ++i) {
      atoms[static_cast<std::size_t>(i)] = {rng.uniform(), rng.uniform()};
      w[static_cast<std::size_t>(i)] = rng.uniform(0.1, 1.0);
      wsum += w[static_cast<std::size_t>(i)];
    }
    for (auto& x : w) x /= wsum;
    const double self_score = testutil::expected_energy_score_discrete(atoms, w, atoms, w);
    bool ok = true;
    for (int p = 0; p < 20; ++p) {
      auto q_atoms = atoms;
      auto q_w = w;
      double qsum = 0.0;
      for (auto& at : q_atoms) {
        at[0] += 0.15 * rng.normal();
        at[1] += 0.15 * rng.normal();
      }
      for (auto& x : q_w) {
        x = std::max(1e-3, x + 0.1 * rng.normal());
        qsum += x;
      }
      for (auto& x : q_w) x /= qsum;
      const double perturbed = testutil::expected_energy_score_discrete(q_atoms, q_w, atoms, w);
      if (perturbed < self_score - 1e-12) {
        ok = false;
        break;
      }
    }
    wins += ok ? 1 : 0;
  }
  CHECK(wins >= 48);
}

TEST_CASE("functional energy score") {
  HGrid g{0.1, 4};
  PosteriorSample post;
  post.kind = PosteriorSample::Kind::Theta;
  post.grid = g;
  post.draws.resize(2, 4);
  post.draws.row(0).setConstant(1.0);
  post.draws.row(1).setConstant(1.2);
  const ThetaCurve truth = const_curve(g, 1.1);
  CHECK(functional_energy_score(post, truth) == Catch::Approx(0.0).margin(1e-12));

  // permutation symmetry
  PosteriorSample swapped = post;
  swapped.draws.row(0).setConstant(1.2);
  swapped.draws.row(1).setConstant(1.0);
  CHECK(functional_energy_score(swapped, truth) ==
        Catch::Approx(functional_energy_score(post, truth)).margin(1e-15));

  // identical curves at truth
  PosteriorSample exact = post;
  exact.draws.row(0).setConstant(1.1);
  exact.draws.row(1).setConstant(1.1);
  CHECK(functional_energy_score(exact, truth) == Catch::Approx(0.0).margin(1e-12));

  PosteriorSample wrong = post;
  wrong.grid = HGrid{0.1, 5};
  wrong.draws.resize(2, 5);
  wrong.draws.setConstant(1.1);
  CHECK_THROWS_AS(functional_energy_score(wrong, truth), DomainError);
}

TEST_CASE("interval score hand values") {
  CHECK(interval_score(0.0, 1.0, 0.05, 0.5) == Catch::Approx(1.0).margin(1e-12));
  CHECK(interval_score(0.0, 1.0, 0.05, 1.2) == Catch::Approx(9.0).margin(1e-12));
  CHECK(interval_score(0.2, 1.4, 0.05, 1.4) == Catch::Approx(1.2).margin(1e-12));
  CHECK_THROWS_AS(interval_score(1.0, 0.0, 0.05, 0.5), DomainError);
  CHECK_THROWS_AS(interval_score(0.0, 1.0, 1.5, 0.5), DomainError);
}

TEST_CASE("interval score is minimized at the true quantiles") {
  Rng rng(2024);
  const int n = 10000;
  std::vector<double> draws(n);
  for (auto& d : draws) d = rng.normal();
  const double alpha = 0.05;
  const double q = 1.959963984540054;  // N(0,1) quantile at 0.975
  auto mean_is = [&](double lo, double hi) {
    double acc = 0.0;
    for (double d : draws) acc += interval_score(lo, hi, alpha, d);
    return acc / n;
  };
  const double truth = mean_is(-q, q);
  for (int t = 0; t < 20; ++t) {
    const double dl = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 1.0);
    const double du = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.25, 1.0);
    double lo = -q + dl, hi = q + du;
    if (lo > hi) std::swap(lo, hi);
    CHECK(truth <= mean_is(lo, hi));
  }
}

TEST_CASE("integrated interval score") {
  HGrid g;  // 425 points, dh = 0.1
  const ThetaCurve truth = const_curve(g, 1.5);
  CHECK(integrated_interval_score(const_curve(g, 1.4), const_curve(g, 1.6), 0.05, truth) ==
        Catch::Approx(8.5).margin(1e-12));
  CHECK(integrated_interval_score(truth, truth, 0.05, truth) == Catch::Approx(0.0).margin(1e-12));

  // Riemann consistency: halving dh leaves a constant-band sum unchanged.
  HGrid fine{0.05, 850};
  CHECK(integrated_interval_score(const_curve(fine, 1.4), const_curve(fine, 1.6), 0.05,
                                  const_curve(fine, 1.5)) == Catch::Approx(8.5).margin(1e-12));
}

TEST_CASE("mse_theta") {
  const ParameterVector p{1.5, 1.0, ModelFamily::BrownResnick};
  CHECK(mse_theta(p, p) == Catch::Approx(0.0).margin(1e-15));

  HGrid g;
  ThetaCurve a = const_curve(g, 1.4);
  ThetaCurve b = const_curve(g, 1.5);
  CHECK(mse_theta(a, b) == Catch::Approx(0.425).margin(1e-12));

  // Metric is defined on curves; families are irrelevant once curves agree.
  const ThetaCurve br_curve = theta_curve(p, g);
  CHECK(mse_theta(br_curve, p) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("log score") {
  const GridSpec grid = GridSpec::unit_spaced(4);
  const ParameterVector p{1.5, 1.0, ModelFamily::BrownResnick};
  FieldSample f1{grid, VectorXd::Zero(grid.size()), p, 0, 0};
  FieldSample f2 = f1;
  Rng rng(40);
  for (int i = 0; i < grid.size(); ++i) {
    f1.values[i] = 1.0 / rng.exponential();  // unit Fréchet draws
    f2.values[i] = 1.0 / rng.exponential();
  }

  SECTION("equals the manual pair sum") {
    const LogScoreConfig cfg{2.0, 10000, 17};
    const auto r = log_score(p, f1, f2, cfg);
    const auto pairs = site_pairs_within(grid, cfg.cutoff);
    REQUIRE(r.n_pairs == static_cast<std::int64_t>(pairs.size()));
    double acc = 0.0;
    for (const auto& [a, b] : pairs)
      acc -= std::log(bivariate_density(f1.values[a], f2.values[b], grid.distance(a, b), p));
    CHECK(r.score == Catch::Approx(acc / static_cast<double>(pairs.size())).epsilon(1e-12));
    CHECK(r.n_underflow == 0);
  }

  SECTION("independence-limit parameters factorize into Fréchet margins") {
    const ParameterVector indep{1e-9, 2.0, ModelFamily::BrownResnick};
    const LogScoreConfig cfg{1.5, 10000, 17};
    const auto r = log_score(indep, f1, f1, cfg);
    const auto pairs = site_pairs_within(grid, cfg.cutoff);
    double acc = 0.0;
    auto frechet_logpdf = [](double z) { return -2.0 * std::log(z) - 1.0 / z; };
    for (const auto& [a, b] : pairs)
      acc -= frechet_logpdf(f1.values[a]) + frechet_logpdf(f1.values[b]);
    CHECK(r.score == Catch::Approx(acc / static_cast<double>(pairs.size())).epsilon(1e-12));
  }

  SECTION("agrees with the finite-difference density within 1e-3") {
    // Moderate values keep every pair density above the oracle's
    // cancellation floor.
    FieldSample g1 = f1, g2 = f2;
    Rng moderate(41);
    for (int i = 0; i < grid.size(); ++i) {
      g1.values[i] = moderate.uniform(0.5, 4.0);
      g2.values[i] = moderate.uniform(0.5, 4.0);
    }
    const LogScoreConfig cfg{2.0, 10000, 17};
    const auto pairs = site_pairs_within(grid, cfg.cutoff);
    double acc = 0.0;
    for (const auto& [a, b] : pairs)
      acc -= std::log(bivariate_density_fd(g1.values[a], g2.values[b], grid.distance(a, b), p));
    const auto r = log_score(p, g1, g2, cfg);
    CHECK(r.score == Catch::Approx(acc / static_cast<double>(pairs.size())).margin(1e-3));
  }

  SECTION("underflow is reported, not hidden") {
    FieldSample huge = f1;
    huge.values.setConstant(1e300);
    const auto r = log_score(p, huge, huge, LogScoreConfig{2.0, 100, 17});
    CHECK(std::isinf(r.score));
    CHECK(r.n_underflow > 0);
  }

  SECTION("subsampling caps the pair count deterministically") {
    const LogScoreConfig cfg{10.0, 20, 17};
    const auto r1 = log_score(p, f1, f2, cfg);
    const auto r2 = log_score(p, f1, f2, cfg);
    CHECK(r1.n_pairs == 20);
    CHECK(r1.score == r2.score);
  }
}

TEST_CASE("posterior sample validation and summaries") {
  PosteriorSample ps;
  ps.kind = PosteriorSample::Kind::Params;
  ps.family = ModelFamily::BrownResnick;
  ps.draws.resize(1, 2);
  ps.draws << 1.0, 1.0;
  CHECK_THROWS_AS(ps.validate(), DomainError);  // m >= 2

  ps.draws.resize(3, 2);
  ps.draws << 1.0, 0.5, 2.0, 1.0, 3.0, 1.5;
  ps.validate();

  PosteriorSample th;
  th.kind = PosteriorSample::Kind::Theta;
  th.grid = HGrid{0.1, 3};
  th.draws.resize(2, 3);
  th.draws << 1.2, 1.1, 1.3, 1.4, 1.0, 1.6;
  th.validate();
  const ThetaCurve mean = th.mean_curve();
  CHECK(mean.values[0] == Catch::Approx(1.3));
  const ThetaCurve lo = th.quantile_curve(0.0);
  CHECK(lo.values[1] == Catch::Approx(1.0));

  const auto iv = interval_from_samples({1.0, 2.0, 3.0, 4.0, 5.0}, 0.5);
  CHECK(iv.lower == Catch::Approx(2.0));
  CHECK(iv.upper == Catch::Approx(4.0));
  CHECK(iv.covers(3.0));
  CHECK(!iv.covers(4.5));
}
