// Training-set generation under uniform prior boxes and the on-disk dataset
// format: manifest.json + params.bin (n x 2, row-major float64, little
// endian) + fields.bin (n x nx x ny, row-major float64, little endian).
#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "maxstable/common.hpp"
#include "maxstable/fields.hpp"
#include "maxstable/parallel.hpp"
#include "maxstable/rng.hpp"

namespace maxstable {

using json = nlohmann::json;

/// Independent uniform prior over (lambda, nu). For Smith the lambda range
/// holds the scale sigma and the nu range is ignored (nu = 2 always).
struct PriorBox {
  double lambda_lo = 0.5, lambda_hi = 5.0;
  double nu_lo = 0.3, nu_hi = 1.8;

  void validate(ModelFamily family) const {
    if (!(lambda_lo < lambda_hi) || !(lambda_lo > 0.0))
      throw DomainError("prior lambda range must satisfy 0 < a < b");
    if (family == ModelFamily::Smith) return;
    if (!(nu_lo < nu_hi) || !(nu_lo >= 0.0))
      throw DomainError("prior nu range must satisfy 0 <= a < b");
    const double cap = family == ModelFamily::SchlatherWhittleMatern
                           ? std::numeric_limits<double>::infinity()
                           : 2.0;
    if (nu_hi > cap) throw DomainError("prior nu range exceeds the family's admissible (0,2]");
  }

  ParameterVector sample(ModelFamily family, Rng& rng) const {
    if (family == ModelFamily::Smith)
      return ParameterVector{rng.uniform(lambda_lo, lambda_hi), 2.0, family};
    return ParameterVector{rng.uniform(lambda_lo, lambda_hi), rng.uniform(nu_lo, nu_hi), family};
  }

  bool contains(const ParameterVector& p) const {
    if (p.lambda < lambda_lo || p.lambda > lambda_hi) return false;
    if (p.family == ModelFamily::Smith) return true;
    return p.nu >= nu_lo && p.nu <= nu_hi;
  }
};

struct TrainingSet {
  GridSpec grid;
  ModelFamily family = ModelFamily::BrownResnick;
  PriorBox prior;
  std::vector<ParameterVector> params;
  std::vector<VectorXd> fields;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;

  std::size_t size() const { return params.size(); }
  /// First train_count() entries train, the rest validate.
  std::size_t train_count() const {
    return size() - static_cast<std::size_t>(validation_fraction * static_cast<double>(size()));
  }
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void write_doubles(std::ofstream& os, const double* data, std::size_t n) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

inline void read_doubles(std::ifstream& is, double* data, std::size_t n) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("dataset binary truncated");
}

inline json grid_to_json(const GridSpec& g) {
  return json{{"nx", g.nx}, {"ny", g.ny}, {"extent", {g.x0, g.x1, g.y0, g.y1}}};
}

inline GridSpec grid_from_json(const json& j) {
  GridSpec g;
  g.nx = j.at("nx").get<int>();
  g.ny = j.at("ny").get<int>();
  const auto& e = j.at("extent");
  g.x0 = e.at(0).get<double>();
  g.x1 = e.at(1).get<double>();
  g.y0 = e.at(2).get<double>();
  g.y1 = e.at(3).get<double>();
  return g;
}

}  // namespace detail

inline json dataset_manifest(const TrainingSet& ts, const SimOptions& opts) {
  return json{{"kind", "maxstable-dataset"},
              {"version", 1},
              {"family", family_name(ts.family)},
              {"grid", detail::grid_to_json(ts.grid)},
              {"prior",
               {{"lambda", {ts.prior.lambda_lo, ts.prior.lambda_hi}},
                {"nu", {ts.prior.nu_lo, ts.prior.nu_hi}}}},
              {"seed", ts.seed},
              {"count", ts.size()},
              {"validation_fraction", ts.validation_fraction},
              {"dtype", "float64"},
              {"byte_order", "little-endian"},
              {"files", {{"params", "params.bin"}, {"fields", "fields.bin"}}},
              {"sim",
               {{"brown_resnick_exact", opts.brown_resnick_exact},
                {"approx_replicates", opts.approx_replicates}}}};
}

/// FNV-1a hash of the manifest bytes; recorded in model checkpoints.
inline std::string dataset_hash(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json", std::ios::binary);
  if (!is) throw std::runtime_error("missing manifest.json in " + dir.string());
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(detail::fnv1a(bytes)));
  return buf;
}

/// n i.i.d. prior draws with one simulated field each. Replicate i uses the
/// substreams (seed, i, 0) for its parameters and (seed, i, 1) for its field,
/// so generation is parallel-safe and identical for any thread count.
inline TrainingSet generate_training_set(const PriorBox& prior, std::int64_t n,
                                         ModelFamily family, const GridSpec& grid,
                                         std::uint64_t seed, const SimOptions& opts = {},
                                         int n_threads = 1,
                                         std::int64_t memory_budget_values = std::int64_t{1} << 27) {
  if (n < 1) throw DomainError("training set size must be at least 1");
  prior.validate(family);
  grid.validate();
  if (n * grid.size() > memory_budget_values)
    throw DomainError("n*k exceeds the in-memory budget; generate to a dataset directory instead");
  TrainingSet ts;
  ts.grid = grid;
  ts.family = family;
  ts.prior = prior;
  ts.seed = seed;
  ts.params.resize(static_cast<std::size_t>(n));
  ts.fields.resize(static_cast<std::size_t>(n));
  parallel_for(n, n_threads, [&](std::int64_t i) {
    Rng prng = substream(seed, static_cast<std::uint64_t>(i), 0);
    const ParameterVector p = prior.sample(family, prng);
    const std::uint64_t fseed = substream_seed(seed, static_cast<std::uint64_t>(i), 1);
    FieldSample f;
    try {
      f = simulate(p, grid, fseed, opts);
    } catch (const std::exception& e) {
      throw std::runtime_error("simulation failed at replicate " + std::to_string(i) + ": " +
                               e.what());
    }
    ts.params[static_cast<std::size_t>(i)] = p;
    ts.fields[static_cast<std::size_t>(i)] = std::move(f.values);
  });
  return ts;
}

inline void write_dataset(const std::filesystem::path& dir, const TrainingSet& ts,
                          const SimOptions& opts = {}) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json");
    os << dataset_manifest(ts, opts).dump(2) << "\n";
  }
  std::ofstream ps(dir / "params.bin", std::ios::binary);
  std::ofstream fs(dir / "fields.bin", std::ios::binary);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double row[2] = {ts.params[i].lambda, ts.params[i].nu};
    detail::write_doubles(ps, row, 2);
    detail::write_doubles(fs, ts.fields[i].data(), static_cast<std::size_t>(ts.fields[i].size()));
  }
}

/// Streaming generation: fields go to disk chunk by chunk instead of being
/// held in memory.
inline void generate_dataset_dir(const std::filesystem::path& dir, const PriorBox& prior,
                                 std::int64_t n, ModelFamily family, const GridSpec& grid,
                                 std::uint64_t seed, const SimOptions& opts = {},
                                 int n_threads = 1, std::int64_t chunk = 256) {
  if (n < 1) throw DomainError("training set size must be at least 1");
  prior.validate(family);
  grid.validate();
  std::filesystem::create_directories(dir);
  TrainingSet meta;
  meta.grid = grid;
  meta.family = family;
  meta.prior = prior;
  meta.seed = seed;
  meta.params.resize(static_cast<std::size_t>(n));  // manifest needs the count only
  {
    std::ofstream os(dir / "manifest.json");
    os << dataset_manifest(meta, opts).dump(2) << "\n";
  }
  std::ofstream ps(dir / "params.bin", std::ios::binary);
  std::ofstream fs(dir / "fields.bin", std::ios::binary);
  std::vector<ParameterVector> params(static_cast<std::size_t>(chunk));
  std::vector<VectorXd> fields(static_cast<std::size_t>(chunk));
  for (std::int64_t start = 0; start < n; start += chunk) {
    const std::int64_t m = std::min(chunk, n - start);
    parallel_for(m, n_threads, [&](std::int64_t j) {
      const std::int64_t i = start + j;
      Rng prng = substream(seed, static_cast<std::uint64_t>(i), 0);
      const ParameterVector p = prior.sample(family, prng);
      FieldSample f = simulate(p, grid, substream_seed(seed, static_cast<std::uint64_t>(i), 1),
                               opts);
      params[static_cast<std::size_t>(j)] = p;
      fields[static_cast<std::size_t>(j)] = std::move(f.values);
    });
    for (std::int64_t j = 0; j < m; ++j) {
      const double row[2] = {params[static_cast<std::size_t>(j)].lambda,
                             params[static_cast<std::size_t>(j)].nu};
      detail::write_doubles(ps, row, 2);
      detail::write_doubles(fs, fields[static_cast<std::size_t>(j)].data(),
                            static_cast<std::size_t>(fields[static_cast<std::size_t>(j)].size()));
    }
  }
}

inline TrainingSet load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw std::runtime_error("missing manifest.json in " + dir.string());
  json manifest = json::parse(ms);
  if (manifest.value("kind", "") != "maxstable-dataset")
    throw std::runtime_error("not a dataset directory: " + dir.string());
  TrainingSet ts;
  ts.grid = detail::grid_from_json(manifest.at("grid"));
  ts.family = family_from_name(manifest.at("family").get<std::string>());
  const auto& prior = manifest.at("prior");
  ts.prior.lambda_lo = prior.at("lambda").at(0).get<double>();
  ts.prior.lambda_hi = prior.at("lambda").at(1).get<double>();
  ts.prior.nu_lo = prior.at("nu").at(0).get<double>();
  ts.prior.nu_hi = prior.at("nu").at(1).get<double>();
  ts.seed = manifest.at("seed").get<std::uint64_t>();
  ts.validation_fraction = manifest.value("validation_fraction", 0.2);
  const auto n = manifest.at("count").get<std::size_t>();
  const int k = ts.grid.size();
  std::ifstream ps(dir / "params.bin", std::ios::binary);
  std::ifstream fs(dir / "fields.bin", std::ios::binary);
  if (!ps || !fs) throw std::runtime_error("dataset binaries missing in " + dir.string());
  ts.params.resize(n);
  ts.fields.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double row[2];
    detail::read_doubles(ps, row, 2);
    ts.params[i] = ParameterVector{row[0], row[1], ts.family};
    ts.fields[i].resize(k);
    detail::read_doubles(fs, ts.fields[i].data(), static_cast<std::size_t>(k));
  }
  return ts;
}

/// Flat CSV export: one row per sample, header index,lambda,nu,site_0,...
inline void export_dataset_csv(const TrainingSet& ts, const std::filesystem::path& path) {
  std::ofstream os(path);
  os << "index,lambda,nu";
  for (int s = 0; s < ts.grid.size(); ++s) os << ",site_" << s;
  os << "\n";
  os.precision(17);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    os << i << "," << ts.params[i].lambda << "," << ts.params[i].nu;
    for (int s = 0; s < ts.grid.size(); ++s) os << "," << ts.fields[i][s];
    os << "\n";
  }
}

}  // namespace maxstable
