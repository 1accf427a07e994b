// Simulation of max-stable random fields on regular grids with unit Fréchet
// margins.
//
// Schlather families are drawn with the bounded-spectral stopping rule:
// Poisson points xi_1 > xi_2 > ... are consumed until xi * sqrt(2 pi) falls
// below the running pointwise minimum of the field. Brown-Resnick and Smith
// use the extremal-functions algorithm (one extremal function per site on
// average, each requiring one Gaussian-field draw); a finite-replicate
// approximation is selectable through SimOptions.
#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "maxstable/common.hpp"
#include "maxstable/rng.hpp"
#include "maxstable/spatial.hpp"

namespace maxstable {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// One realization of a max-stable process on a grid, unit Fréchet scale.
struct FieldSample {
  GridSpec grid;
  VectorXd values;  // site index iy * nx + ix
  ParameterVector params;
  std::uint64_t seed = 0;
  int spectral_draws = 0;  // Poisson points (Schlather) or extremal functions (BR)

  double at(int ix, int iy) const { return values[iy * grid.nx + ix]; }
};

struct SimOptions {
  bool brown_resnick_exact = true;
  int approx_replicates = 1000;  // spectral replicates for the approximate sampler
  double jitter_start = 1e-10;
  double jitter_max = 1e-6;
  int max_grid_sites = 4096;  // dense Cholesky feasibility bound
};

struct CholFactor {
  MatrixXd lower;
  double jitter = 0.0;
};

/// Cholesky with diagonal jitter escalation jitter_start -> jitter_max
/// (decade steps). Throws CovarianceError, reporting the last jitter tried.
inline CholFactor chol_with_jitter(MatrixXd cov, double jitter_start = 1e-10,
                                   double jitter_max = 1e-6) {
  Eigen::LLT<MatrixXd> llt(cov);
  if (llt.info() == Eigen::Success) return {llt.matrixL(), 0.0};
  for (double j = jitter_start; j <= jitter_max * (1.0 + 1e-12); j *= 10.0) {
    MatrixXd jittered = cov;
    jittered.diagonal().array() += j;
    llt.compute(jittered);
    if (llt.info() == Eigen::Success) return {llt.matrixL(), j};
  }
  throw CovarianceError("covariance not positive definite after jitter up to " +
                        std::to_string(jitter_max));
}

inline MatrixXd correlation_matrix(const GridSpec& grid,
                                   const std::function<double(double)>& corr) {
  const int k = grid.size();
  MatrixXd m(k, k);
  for (int i = 0; i < k; ++i) {
    m(i, i) = corr(0.0);
    for (int j = 0; j < i; ++j) {
      const double v = corr(grid.distance(i, j));
      m(i, j) = v;
      m(j, i) = v;
    }
  }
  return m;
}

/// One centered Gaussian draw with the requested correlation kernel.
inline VectorXd gaussian_field(const GridSpec& grid, const std::function<double(double)>& corr,
                               Rng& rng, const SimOptions& opts = {}) {
  const CholFactor f = chol_with_jitter(correlation_matrix(grid, corr), opts.jitter_start,
                                        opts.jitter_max);
  VectorXd z(grid.size());
  for (int i = 0; i < z.size(); ++i) z[i] = rng.normal();
  return f.lower.triangularView<Eigen::Lower>() * z;
}

namespace detail {

/// Pairwise semivariogram matrix gamma(d_ij) for a Brown-Resnick view.
inline MatrixXd variogram_matrix(const GridSpec& grid, const ParameterVector& br) {
  const int k = grid.size();
  MatrixXd g(k, k);
  for (int i = 0; i < k; ++i) {
    g(i, i) = 0.0;
    for (int j = 0; j < i; ++j) {
      const double v = variogram_powered(grid.distance(i, j), br);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

}  // namespace detail

/// Precomputed factorizations shared across replicates with the same
/// (parameters, grid). Construction does the Cholesky once; simulate_field
/// then only draws.
struct SimContext {
  GridSpec grid;
  ParameterVector params;
  SimOptions options;
  CholFactor chol;      // Schlather: full grid; BR: sites 1..k-1 of the anchored increments
  MatrixXd variogram;   // BR only: gamma(d_ij)

  /// Centered Gaussian increment field W with W[0] = 0 (Brown-Resnick) or a
  /// standard correlated field (Schlather).
  VectorXd draw_gaussian(Rng& rng) const {
    const int k = grid.size();
    if (is_schlather(params.family)) {
      VectorXd z(k);
      for (int i = 0; i < k; ++i) z[i] = rng.normal();
      return chol.lower.triangularView<Eigen::Lower>() * z;
    }
    VectorXd z(k - 1);
    for (int i = 0; i < k - 1; ++i) z[i] = rng.normal();
    VectorXd w(k);
    w[0] = 0.0;
    w.tail(k - 1) = chol.lower.triangularView<Eigen::Lower>() * z;
    return w;
  }
};

inline SimContext make_sim_context(const ParameterVector& p, const GridSpec& grid,
                                   const SimOptions& opts = {}) {
  p.validate();
  grid.validate();
  const int k = grid.size();
  if (k > opts.max_grid_sites)
    throw DomainError("grid has " + std::to_string(k) + " sites, above the Cholesky bound " +
                      std::to_string(opts.max_grid_sites));
  SimContext ctx{grid, p, opts, {}, {}};
  if (is_schlather(p.family)) {
    ctx.chol = chol_with_jitter(
        correlation_matrix(grid, [&](double h) { return correlation(h, p); }),
        opts.jitter_start, opts.jitter_max);
  } else {
    const ParameterVector br = as_brown_resnick(p);
    ctx.variogram = detail::variogram_matrix(grid, br);
    // Increments anchored at site 0: Cov(W_u, W_v) = g(u,0) + g(v,0) - g(u,v).
    MatrixXd cov(k - 1, k - 1);
    for (int i = 1; i < k; ++i)
      for (int j = 1; j <= i; ++j) {
        const double v = ctx.variogram(i, 0) + ctx.variogram(j, 0) - ctx.variogram(i, j);
        cov(i - 1, j - 1) = v;
        cov(j - 1, i - 1) = v;
      }
    ctx.chol = chol_with_jitter(cov, opts.jitter_start, opts.jitter_max);
  }
  return ctx;
}

namespace detail {

inline FieldSample simulate_schlather(const SimContext& ctx, std::uint64_t seed) {
  const int k = ctx.grid.size();
  Rng rng(seed);
  VectorXd z = VectorXd::Zero(k);
  double gamma_cum = rng.exponential();
  int n_points = 0;
  while (true) {
    const double xi = 1.0 / gamma_cum;
    double zmin = z.minCoeff();
    if (zmin > 0.0 && xi * kSqrt2Pi <= zmin) break;
    const VectorXd w = ctx.draw_gaussian(rng);
    for (int i = 0; i < k; ++i)
      z[i] = std::max(z[i], xi * kSqrt2Pi * std::max(0.0, w[i]));
    ++n_points;
    gamma_cum += rng.exponential();
  }
  return {ctx.grid, std::move(z), ctx.params, seed, n_points};
}

inline FieldSample simulate_brown_resnick_exact(const SimContext& ctx, std::uint64_t seed) {
  const int k = ctx.grid.size();
  Rng rng(seed);
  VectorXd z = VectorXd::Zero(k);
  const MatrixXd& g = ctx.variogram;
  int n_draws = 0;
  for (int j = 0; j < k; ++j) {
    double gamma_cum = rng.exponential();
    double zeta = 1.0 / gamma_cum;
    while (zeta > z[j]) {
      const VectorXd w = ctx.draw_gaussian(rng);
      ++n_draws;
      // Spectral function normalized at site j: Y(u) = exp(w_u - w_j - g(u,j)).
      bool extremal = true;
      for (int i = 0; i < j; ++i) {
        if (zeta * std::exp(w[i] - w[j] - g(i, j)) >= z[i]) {
          extremal = false;
          break;
        }
      }
      if (extremal)
        for (int u = 0; u < k; ++u)
          z[u] = std::max(z[u], zeta * std::exp(w[u] - w[j] - g(u, j)));
      gamma_cum += rng.exponential();
      zeta = 1.0 / gamma_cum;
    }
  }
  return {ctx.grid, std::move(z), ctx.params, seed, n_draws};
}

inline FieldSample simulate_brown_resnick_approx(const SimContext& ctx, std::uint64_t seed) {
  const int k = ctx.grid.size();
  Rng rng(seed);
  VectorXd z = VectorXd::Zero(k);
  double gamma_cum = 0.0;
  for (int r = 0; r < ctx.options.approx_replicates; ++r) {
    gamma_cum += rng.exponential();
    const double xi = 1.0 / gamma_cum;
    const VectorXd w = ctx.draw_gaussian(rng);
    for (int u = 0; u < k; ++u)
      z[u] = std::max(z[u], xi * std::exp(w[u] - ctx.variogram(u, 0)));
  }
  return {ctx.grid, std::move(z), ctx.params, seed, ctx.options.approx_replicates};
}

}  // namespace detail

/// One realization for the context's parameters; deterministic under seed.
inline FieldSample simulate_field(const SimContext& ctx, std::uint64_t seed) {
  if (is_schlather(ctx.params.family)) return detail::simulate_schlather(ctx, seed);
  if (ctx.options.brown_resnick_exact) return detail::simulate_brown_resnick_exact(ctx, seed);
  return detail::simulate_brown_resnick_approx(ctx, seed);
}

inline FieldSample simulate(const ParameterVector& p, const GridSpec& grid, std::uint64_t seed,
                            const SimOptions& opts = {}) {
  return simulate_field(make_sim_context(p, grid, opts), seed);
}

// ---------------------------------------------------------------------------
// Augmentation

inline VectorXd flip_horizontal(const VectorXd& v, int nx, int ny) {
  VectorXd out(v.size());
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) out[iy * nx + ix] = v[iy * nx + (nx - 1 - ix)];
  return out;
}

inline VectorXd flip_vertical(const VectorXd& v, int nx, int ny) {
  VectorXd out(v.size());
  for (int iy = 0; iy < ny; ++iy)
    for (int ix = 0; ix < nx; ++ix) out[iy * nx + ix] = v[(ny - 1 - iy) * nx + ix];
  return out;
}

inline VectorXd rotate180(const VectorXd& v, int nx, int ny) {
  return flip_horizontal(flip_vertical(v, nx, ny), nx, ny);
}

struct AugmentMask {
  bool rotate = false;
  bool flip_v = false;
  bool flip_h = false;
};

inline AugmentMask draw_augment_mask(Rng& rng) {
  AugmentMask m;
  m.rotate = rng.bernoulli(0.5);
  m.flip_v = rng.bernoulli(0.3);
  m.flip_h = rng.bernoulli(0.2);
  return m;
}

inline VectorXd apply_augment(const VectorXd& v, int nx, int ny, const AugmentMask& m) {
  VectorXd out = v;
  if (m.rotate) out = rotate180(out, nx, ny);
  if (m.flip_v) out = flip_vertical(out, nx, ny);
  if (m.flip_h) out = flip_horizontal(out, nx, ny);
  return out;
}

/// Lattice-isometry augmentation: 180° rotation and vertical/horizontal
/// flips drawn independently (probabilities 0.5 / 0.3 / 0.2). Distances are
/// preserved exactly, so the parameter label is unchanged.
inline FieldSample augment(const FieldSample& field, std::uint64_t seed) {
  if (!field.grid.square()) throw DomainError("augmentation requires a square grid");
  Rng rng(seed);
  const AugmentMask m = draw_augment_mask(rng);
  FieldSample out = field;
  out.values = apply_augment(field.values, field.grid.nx, field.grid.ny, m);
  return out;
}

}  // namespace maxstable
