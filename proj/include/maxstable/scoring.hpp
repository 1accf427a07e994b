// Proper scoring rules and error metrics. All reductions run through
// pairwise_sum in index-ascending order so scores are bit-reproducible.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "maxstable/common.hpp"
#include "maxstable/fields.hpp"
#include "maxstable/rng.hpp"
#include "maxstable/spatial.hpp"

namespace maxstable {

/// m draws from an approximate posterior: either parameter pairs on the
/// natural (lambda, nu) scale or discretized theta curves.
struct PosteriorSample {
  enum class Kind { Params, Theta };
  Kind kind = Kind::Params;
  MatrixXd draws;  // m x d; d = 2 for Params, d = grid.count for Theta
  HGrid grid;      // Theta only
  ModelFamily family = ModelFamily::BrownResnick;  // Params only

  Eigen::Index m() const { return draws.rows(); }

  void validate() const {
    if (m() < 2) throw DomainError("posterior sample needs m >= 2");
    if (kind == Kind::Params) {
      if (draws.cols() != 2) throw DomainError("parameter posterior must have two columns");
      for (Eigen::Index i = 0; i < m(); ++i)
        ParameterVector{draws(i, 0), draws(i, 1), family}.validate();
    } else {
      if (draws.cols() != grid.count) throw DomainError("theta posterior does not match its grid");
      if ((draws.array() < 1.0).any() || (draws.array() > 2.0).any())
        throw DomainError("theta posterior values must lie in [1,2]");
    }
  }

  ThetaCurve mean_curve() const {
    if (kind != Kind::Theta) throw DomainError("mean_curve requires a theta posterior");
    ThetaCurve c{grid, std::vector<double>(static_cast<std::size_t>(grid.count))};
    for (int j = 0; j < grid.count; ++j) c.values[static_cast<std::size_t>(j)] = draws.col(j).mean();
    return c;
  }

  ThetaCurve quantile_curve(double q) const {
    if (kind != Kind::Theta) throw DomainError("quantile_curve requires a theta posterior");
    ThetaCurve c{grid, std::vector<double>(static_cast<std::size_t>(grid.count))};
    std::vector<double> col(static_cast<std::size_t>(m()));
    for (int j = 0; j < grid.count; ++j) {
      for (Eigen::Index i = 0; i < m(); ++i) col[static_cast<std::size_t>(i)] = draws(i, j);
      std::sort(col.begin(), col.end());
      c.values[static_cast<std::size_t>(j)] = quantile_sorted(col, q);
    }
    return c;
  }
};

/// Central (1-alpha) interval from the empirical alpha/2 and 1-alpha/2
/// quantiles of a posterior sample.
struct IntervalEstimate {
  double alpha = 0.05;
  double lower = 0.0;
  double upper = 0.0;
  bool covers(double x) const { return x >= lower && x <= upper; }
};

inline IntervalEstimate interval_from_samples(std::vector<double> values, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0,1)");
  std::sort(values.begin(), values.end());
  return {alpha, quantile_sorted(values, alpha / 2.0), quantile_sorted(values, 1.0 - alpha / 2.0)};
}

// ---------------------------------------------------------------------------
// Energy score

/// Unbiased m-sample energy score estimator (beta = 1):
///   (1/m) sum_j ||s_j - y|| - 1/(2m(m-1)) sum_{j != k} ||s_j - s_k||,
/// the double sum running over ordered pairs.
inline double energy_score(const MatrixXd& samples, const VectorXd& truth) {
  const Eigen::Index m = samples.rows();
  if (m < 2) throw DomainError("energy score needs at least two samples");
  if (samples.cols() != truth.size())
    throw DomainError("energy score dimension mismatch: samples have " +
                      std::to_string(samples.cols()) + " columns, truth has " +
                      std::to_string(truth.size()));
  std::vector<double> to_truth(static_cast<std::size_t>(m));
  for (Eigen::Index j = 0; j < m; ++j)
    to_truth[static_cast<std::size_t>(j)] = (samples.row(j).transpose() - truth).norm();
  std::vector<double> between;
  between.reserve(static_cast<std::size_t>(m * (m - 1) / 2));
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index k = j + 1; k < m; ++k)
      between.push_back((samples.row(j) - samples.row(k)).norm());
  const double md = static_cast<double>(m);
  // Each unordered pair appears twice in the ordered double sum.
  return pairwise_sum(to_truth) / md - pairwise_sum(between) / (md * (md - 1.0));
}

/// Energy score on discretized theta curves (plain Euclidean norms on the
/// curve values; no dh weighting).
inline double functional_energy_score(const PosteriorSample& curves, const ThetaCurve& truth) {
  if (curves.kind != PosteriorSample::Kind::Theta)
    throw DomainError("functional energy score expects a theta posterior");
  if (curves.grid != truth.grid) throw DomainError("theta curves live on different grids");
  VectorXd t = Eigen::Map<const VectorXd>(truth.values.data(),
                                          static_cast<Eigen::Index>(truth.values.size()));
  return energy_score(curves.draws, t);
}

// ---------------------------------------------------------------------------
// Interval scores

inline double interval_score(double lower, double upper, double alpha, double x) {
  if (lower > upper) throw DomainError("interval_score requires lower <= upper");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0,1)");
  double s = upper - lower;
  if (x < lower) s += 2.0 / alpha * (lower - x);
  if (x > upper) s += 2.0 / alpha * (x - upper);
  return s;
}

/// Riemann sum of the pointwise interval score over the h-grid, weight dh.
inline double integrated_interval_score(const ThetaCurve& lower, const ThetaCurve& upper,
                                        double alpha, const ThetaCurve& truth) {
  if (lower.grid != truth.grid || upper.grid != truth.grid)
    throw DomainError("interval curves live on different grids");
  std::vector<double> terms(truth.values.size());
  for (std::size_t i = 0; i < truth.values.size(); ++i)
    terms[i] = interval_score(lower.values[i], upper.values[i], alpha, truth.values[i]);
  return pairwise_sum(terms) * truth.grid.dh;
}

// ---------------------------------------------------------------------------
// MSE on theta curves

/// L2 distance between two discretized theta curves: sum_i (a_i - b_i)^2 dh.
inline double mse_theta(const ThetaCurve& estimate, const ThetaCurve& truth) {
  if (estimate.grid != truth.grid) throw DomainError("theta curves live on different grids");
  std::vector<double> terms(truth.values.size());
  for (std::size_t i = 0; i < truth.values.size(); ++i) {
    const double d = estimate.values[i] - truth.values[i];
    terms[i] = d * d;
  }
  return pairwise_sum(terms) * truth.grid.dh;
}

inline double mse_theta(const ThetaCurve& estimate, const ParameterVector& truth) {
  return mse_theta(estimate, theta_curve(truth, estimate.grid));
}

inline double mse_theta(const ParameterVector& estimate, const ParameterVector& truth,
                        const HGrid& grid = {}) {
  return mse_theta(theta_curve(estimate, grid), theta_curve(truth, grid));
}

// ---------------------------------------------------------------------------
// Logarithmic score

struct LogScoreConfig {
  double cutoff = 5.0;            // pairs within this distance enter the score
  std::int64_t max_pairs = 10000; // subsample bound
  std::uint64_t seed = 17;        // subsampling stream
};

struct LogScoreResult {
  double score = 0.0;             // mean negative log bivariate density; lower is better
  std::int64_t n_pairs = 0;
  std::int64_t n_underflow = 0;   // pairs whose density underflowed (counted as +inf)
};

inline std::vector<std::pair<int, int>> site_pairs_within(const GridSpec& grid, double cutoff) {
  std::vector<std::pair<int, int>> pairs;
  const int k = grid.size();
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j)
      if (grid.distance(i, j) <= cutoff) pairs.emplace_back(i, j);
  return pairs;
}

/// Mean of -log f(z1_i, z2_j; p) over site pairs within the cutoff, fields
/// evaluated at the first and second site of each pair respectively. Pass
/// the same field twice for the usual single-observation score.
inline LogScoreResult log_score(const ParameterVector& p, const FieldSample& z1,
                                const FieldSample& z2, const LogScoreConfig& cfg = {}) {
  p.validate();
  if (!(z1.grid == z2.grid)) throw DomainError("log_score requires fields on the same grid");
  auto pairs = site_pairs_within(z1.grid, cfg.cutoff);
  if (static_cast<std::int64_t>(pairs.size()) > cfg.max_pairs) {
    // Deterministic partial Fisher-Yates subsample.
    Rng rng(cfg.seed);
    for (std::int64_t i = 0; i < cfg.max_pairs; ++i) {
      const auto j = i + static_cast<std::int64_t>(
                             rng.integer(static_cast<std::uint64_t>(pairs.size()) -
                                         static_cast<std::uint64_t>(i)));
      std::swap(pairs[static_cast<std::size_t>(i)], pairs[static_cast<std::size_t>(j)]);
    }
    pairs.resize(static_cast<std::size_t>(cfg.max_pairs));
  }
  LogScoreResult r;
  r.n_pairs = static_cast<std::int64_t>(pairs.size());
  if (pairs.empty()) return r;
  std::vector<double> terms;
  terms.reserve(pairs.size());
  for (const auto& [a, b] : pairs) {
    const double f =
        bivariate_density(z1.values[a], z2.values[b], z1.grid.distance(a, b), p);
    if (!(f > 0.0) || !std::isfinite(f)) {
      ++r.n_underflow;
      continue;
    }
    terms.push_back(-std::log(f));
  }
  if (r.n_underflow > 0) {
    r.score = std::numeric_limits<double>::infinity();
    return r;
  }
  r.score = pairwise_sum(terms) / static_cast<double>(terms.size());
  return r;
}

}  // namespace maxstable
