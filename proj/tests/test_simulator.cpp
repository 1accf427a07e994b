// Simulator: marginal and dependence laws against their oracles, Gaussian
// field covariance recovery, augmentation isometries, dataset round trips.
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>

#include "maxstable/dataset.hpp"
#include "maxstable/fields.hpp"
#include "testutil.hpp"

using namespace maxstable;
namespace fs = std::filesystem;

namespace {

std::vector<double> one_site_per_replicate(const ParameterVector& p, const GridSpec& grid,
                                           int n_reps, std::uint64_t seed,
                                           const SimOptions& opts = {}) {
  const SimContext ctx = make_sim_context(p, grid, opts);
  const int site = grid.size() / 2;
  std::vector<double> out(static_cast<std::size_t>(n_reps));
  for (int r = 0; r < n_reps; ++r)
    out[static_cast<std::size_t>(r)] =
        simulate_field(ctx, substream_seed(seed, static_cast<std::uint64_t>(r))).values[site];
  return out;
}

}  // namespace

TEST_CASE("simulated fields are positive, finite, and seed-deterministic") {
  const GridSpec grid = GridSpec::unit_spaced(6);
  for (const auto family : {ModelFamily::BrownResnick, ModelFamily::SchlatherPowExp,
                            ModelFamily::SchlatherWhittleMatern, ModelFamily::Smith}) {
    ParameterVector p{1.5, family == ModelFamily::Smith ? 2.0 : 1.0, family};
    const FieldSample a = simulate(p, grid, 42);
    CHECK((a.values.array() > 0.0).all());
    CHECK(a.values.allFinite());
    CHECK(a.spectral_draws > 0);
    const FieldSample b = simulate(p, grid, 42);
    CHECK(a.values == b.values);  // bit-identical
    const FieldSample c = simulate(p, grid, 43);
    CHECK(a.values != c.values);
  }
}

TEST_CASE("simulator margins are unit Fréchet") {
  const GridSpec grid = GridSpec::unit_spaced(6);
  SECTION("Schlather powered exponential") {
    const ParameterVector p{2.0, 1.0, ModelFamily::SchlatherPowExp};
    CHECK(testutil::ks_pvalue_frechet(one_site_per_replicate(p, grid, 2000, 11)) > 0.01);
  }
  SECTION("Brown-Resnick exact sampler") {
    const ParameterVector p{1.5, 1.0, ModelFamily::BrownResnick};
    CHECK(testutil::ks_pvalue_frechet(one_site_per_replicate(p, grid, 2000, 12)) > 0.01);
  }
  SECTION("Brown-Resnick approximate sampler") {
    SimOptions opts;
    opts.brown_resnick_exact = false;
    const ParameterVector p{1.5, 1.0, ModelFamily::BrownResnick};
    CHECK(testutil::ks_pvalue_frechet(one_site_per_replicate(p, grid, 1000, 13, opts)) > 0.01);
  }
}

TEST_CASE("simulator dependence matches the closed-form extremal coefficient") {
  const GridSpec grid = GridSpec::unit_spaced(7);
  struct Case {
    ParameterVector p;
    int site_a, site_b;
  };
  const Case cases[] = {
      {{2.0, 1.0, ModelFamily::SchlatherPowExp}, 0, 1},      // h = 1
      {{2.0, 1.0, ModelFamily::SchlatherPowExp}, 0, 3},      // h = 3
      {{1.5, 1.0, ModelFamily::BrownResnick}, 0, 2},         // h = 2
  };
  for (const auto& c : cases) {
    const SimContext ctx = make_sim_context(c.p, grid);
    std::int64_t hits = 0;
    const int n = 3000;
    for (int r = 0; r < n; ++r) {
      const FieldSample f = simulate_field(ctx, substream_seed(77, static_cast<std::uint64_t>(r)));
      hits += (f.values[c.site_a] <= 1.0 && f.values[c.site_b] <= 1.0) ? 1 : 0;
    }
    const double phat = static_cast<double>(hits) / n;
    const double se = std::sqrt(phat * (1.0 - phat) / n) / phat;  // delta method for -log
    const double h = grid.distance(c.site_a, c.site_b);
    CHECK(std::abs(-std::log(phat) - theta(h, c.p)) < 3.0 * se);
  }
}

TEST_CASE("simulator isotropy: equal distance, different orientation") {
  const GridSpec grid = GridSpec::unit_spaced(7);
  const ParameterVector p{2.0, 1.0, ModelFamily::SchlatherPowExp};
  const SimContext ctx = make_sim_context(p, grid);
  std::int64_t hits_h = 0, hits_v = 0;
  const int n = 3000;
  for (int r = 0; r < n; ++r) {
    const FieldSample f = simulate_field(ctx, substream_seed(31, static_cast<std::uint64_t>(r)));
    hits_h += (f.values[0] <= 1.0 && f.values[2] <= 1.0) ? 1 : 0;       // horizontal, h = 2
    hits_v += (f.values[0] <= 1.0 && f.values[2 * 7] <= 1.0) ? 1 : 0;   // vertical, h = 2
  }
  auto to_theta = [&](std::int64_t hits) {
    const double phat = static_cast<double>(hits) / n;
    return std::pair<double, double>{-std::log(phat),
                                     std::sqrt(phat * (1.0 - phat) / n) / phat};
  };
  const auto [th, seh] = to_theta(hits_h);
  const auto [tv, sev] = to_theta(hits_v);
  CHECK(std::abs(th - tv) < 3.0 * std::sqrt(seh * seh + sev * sev));
}

TEST_CASE("Schlather stopping rule terminates with a recorded point count") {
  const GridSpec grid = GridSpec::unit_spaced(5);
  const ParameterVector p{2.0, 1.0, ModelFamily::SchlatherPowExp};
  const SimContext ctx = make_sim_context(p, grid);
  for (int r = 0; r < 200; ++r) {
    const FieldSample f = simulate_field(ctx, substream_seed(3, static_cast<std::uint64_t>(r)));
    CHECK(f.spectral_draws > 0);
    CHECK(f.spectral_draws < 1000000);
  }
}

TEST_CASE("gaussian field reproduces the requested covariance") {
  const GridSpec grid = GridSpec::unit_spaced(4);
  auto kernel = [](double h) { return std::exp(-h / 2.0); };
  Rng rng(5150);
  const int n = 5000;
  double s01 = 0.0, s0 = 0.0, s1 = 0.0, sq0 = 0.0;
  for (int r = 0; r < n; ++r) {
    const VectorXd w = gaussian_field(grid, kernel, rng);
    s01 += w[0] * w[5];
    s0 += w[0];
    s1 += w[5];
    sq0 += w[0] * w[0];
  }
  const double cov = s01 / n - (s0 / n) * (s1 / n);
  const double rho = kernel(grid.distance(0, 5));
  const double se = std::sqrt((1.0 + rho * rho) / n);
  CHECK(std::abs(cov - rho) < 3.0 * se);
  const double var0 = sq0 / n - (s0 / n) * (s0 / n);
  CHECK(std::abs(var0 - 1.0) < 3.0 * std::sqrt(2.0 / n));
}

TEST_CASE("gaussian field with a pure nugget kernel has unit variance") {
  const GridSpec grid = GridSpec::unit_spaced(3);
  auto nugget = [](double h) { return h == 0.0 ? 1.0 : 0.0; };
  Rng rng(6);
  double sq = 0.0;
  const int n = 4000;
  for (int r = 0; r < n; ++r) {
    const VectorXd w = gaussian_field(grid, nugget, rng);
    sq += w[4] * w[4];
  }
  CHECK(std::abs(sq / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
  Rng r1(9), r2(9);
  CHECK(gaussian_field(grid, nugget, r1) == gaussian_field(grid, nugget, r2));
}

TEST_CASE("augmentation transforms are involutions preserving pair structure") {
  const GridSpec grid = GridSpec::unit_spaced(4);
  const ParameterVector p{1.5, 1.0, ModelFamily::SchlatherPowExp};
  const FieldSample f = simulate(p, grid, 1);
  const int nx = grid.nx, ny = grid.ny;
  CHECK(rotate180(rotate180(f.values, nx, ny), nx, ny) == f.values);
  CHECK(flip_vertical(flip_vertical(f.values, nx, ny), nx, ny) == f.values);
  CHECK(flip_horizontal(flip_horizontal(f.values, nx, ny), nx, ny) == f.values);

  // The multiset of (distance, unordered value pair) is invariant: every
  // transform is a lattice isometry, so the parameter label stays valid.
  auto pair_cloud = [&](const VectorXd& v) {
    std::multiset<std::tuple<double, double, double>> cloud;
    for (int i = 0; i < grid.size(); ++i)
      for (int j = i + 1; j < grid.size(); ++j) {
        const double d = std::round(grid.distance(i, j) * 1e9) / 1e9;
        cloud.emplace(d, std::min(v[i], v[j]), std::max(v[i], v[j]));
      }
    return cloud;
  };
  const FieldSample g = augment(f, 99);
  CHECK(pair_cloud(f.values) == pair_cloud(g.values));

  const FieldSample g2 = augment(f, 99);
  CHECK(g.values == g2.values);

  FieldSample rect = f;
  rect.grid.ny = 2;
  rect.grid.y1 = 2.0;
  rect.values = VectorXd::Ones(4 * 2);
  CHECK_THROWS_AS(augment(rect, 1), DomainError);
}

TEST_CASE("training set generation honors the prior and the seeds") {
  const GridSpec grid = GridSpec::unit_spaced(4);
  PriorBox prior;
  const TrainingSet ts =
      generate_training_set(prior, 50, ModelFamily::BrownResnick, grid, 123, {}, 2);
  REQUIRE(ts.size() == 50);
  for (const auto& p : ts.params) CHECK(prior.contains(p));
  CHECK(ts.train_count() == 40);

  const TrainingSet one = generate_training_set(prior, 1, ModelFamily::BrownResnick, grid, 5);
  CHECK(one.size() == 1);

  // Disjoint master seeds give disjoint parameter draws.
  const TrainingSet other =
      generate_training_set(prior, 50, ModelFamily::BrownResnick, grid, 124);
  for (std::size_t i = 0; i < 50; ++i) CHECK(ts.params[i].lambda != other.params[i].lambda);

  // Thread count does not change content.
  const TrainingSet ts1 =
      generate_training_set(prior, 50, ModelFamily::BrownResnick, grid, 123, {}, 1);
  for (std::size_t i = 0; i < 50; ++i) CHECK(ts.fields[i] == ts1.fields[i]);

  CHECK_THROWS_AS(
      generate_training_set(prior, 10, ModelFamily::BrownResnick, grid, 1, {}, 1, 100),
      DomainError);
  PriorBox bad;
  bad.lambda_hi = bad.lambda_lo;
  CHECK_THROWS_AS(generate_training_set(bad, 5, ModelFamily::BrownResnick, grid, 1), DomainError);
}

TEST_CASE("dataset directory round trip is exact and streaming matches memory") {
  const fs::path dir = fs::temp_directory_path() / "maxstable_test_dataset";
  fs::remove_all(dir);
  const GridSpec grid = GridSpec::unit_spaced(5);
  PriorBox prior;
  const TrainingSet ts =
      generate_training_set(prior, 20, ModelFamily::SchlatherPowExp, grid, 321);
  write_dataset(dir, ts);
  const TrainingSet back = load_dataset(dir);
  REQUIRE(back.size() == ts.size());
  CHECK(back.family == ts.family);
  CHECK(back.grid == ts.grid);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(back.params[i].lambda == ts.params[i].lambda);
    CHECK(back.params[i].nu == ts.params[i].nu);
    CHECK(back.fields[i] == ts.fields[i]);
  }

  const fs::path dir2 = fs::temp_directory_path() / "maxstable_test_dataset_stream";
  fs::remove_all(dir2);
  generate_dataset_dir(dir2, prior, 20, ModelFamily::SchlatherPowExp, grid, 321, {}, 2, 7);
  const TrainingSet streamed = load_dataset(dir2);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    CHECK(streamed.params[i].lambda == ts.params[i].lambda);
    CHECK(streamed.fields[i] == ts.fields[i]);
  }
  CHECK(dataset_hash(dir) == dataset_hash(dir2));

  export_dataset_csv(ts, dir / "dataset.csv");
  std::ifstream csv(dir / "dataset.csv");
  std::string header;
  std::getline(csv, header);
  CHECK(header.rfind("index,lambda,nu,site_0", 0) == 0);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}
