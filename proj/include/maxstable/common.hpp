// Core domain types and small numeric helpers shared across the library.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace maxstable {

// ---------------------------------------------------------------------------
// Errors

/// Invalid parameter values (lambda <= 0, nu outside the family's range, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

/// A numerical evaluation failed a built-in cross check.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Covariance matrix could not be factorized even after jitter escalation.
struct CovarianceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Scalar helpers

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kSqrt2Pi = 2.5066282746310005024;

/// Standard normal CDF via erfc (accurate in both tails).
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Standard normal density.
inline double norm_pdf(double x) { return std::exp(-0.5 * x * x) / kSqrt2Pi; }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Sum with a fixed index-ascending pairwise tree so results do not depend on
/// traversal order or thread count.
inline double pairwise_sum(std::span<const double> v) {
  if (v.empty()) return 0.0;
  if (v.size() <= 8) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& v) {
  return pairwise_sum(std::span<const double>(v));
}

/// Empirical quantile with linear interpolation between order statistics
/// (the common "type 7" convention). `sorted` must be ascending.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (q <= 0.0) return sorted.front();
  if (q >= 1.0) return sorted.back();
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> sample, double q) {
  std::sort(sample.begin(), sample.end());
  return quantile_sorted(sample, q);
}

// ---------------------------------------------------------------------------
// Model families and parameters

enum class ModelFamily {
  BrownResnick,
  SchlatherPowExp,
  SchlatherWhittleMatern,
  Smith,
};

inline std::string family_name(ModelFamily f) {
  switch (f) {
    case ModelFamily::BrownResnick: return "brown-resnick";
    case ModelFamily::SchlatherPowExp: return "schlather-powexp";
    case ModelFamily::SchlatherWhittleMatern: return "schlather-whittle-matern";
    case ModelFamily::Smith: return "smith";
  }
  throw std::logic_error("unknown family");
}

inline ModelFamily family_from_name(const std::string& s) {
  if (s == "brown-resnick") return ModelFamily::BrownResnick;
  if (s == "schlather-powexp") return ModelFamily::SchlatherPowExp;
  if (s == "schlather-whittle-matern") return ModelFamily::SchlatherWhittleMatern;
  if (s == "smith") return ModelFamily::Smith;
  throw DomainError("unknown model family: " + s);
}

inline bool is_schlather(ModelFamily f) {
  return f == ModelFamily::SchlatherPowExp || f == ModelFamily::SchlatherWhittleMatern;
}

/// Range/smoothness pair (lambda, nu) tagged with its model family.
/// For Smith, `lambda` holds the scale sigma and nu is fixed at 2.
struct ParameterVector {
  double lambda = 1.0;
  double nu = 1.0;
  ModelFamily family = ModelFamily::BrownResnick;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw DomainError("lambda must be positive, got " + std::to_string(lambda));
    switch (family) {
      case ModelFamily::BrownResnick:
      case ModelFamily::SchlatherPowExp:
        if (!(nu > 0.0 && nu <= 2.0))
          throw DomainError("nu must lie in (0,2], got " + std::to_string(nu));
        break;
      case ModelFamily::SchlatherWhittleMatern:
        if (!(nu > 0.0) || !std::isfinite(nu))
          throw DomainError("nu must be positive, got " + std::to_string(nu));
        break;
      case ModelFamily::Smith:
        if (nu != 2.0) throw DomainError("Smith model requires nu = 2");
        break;
    }
  }
};

// ---------------------------------------------------------------------------
// Discretization of the separation axis

/// Equispaced support points h_i = i * dh, i = 1..count. The default covers
/// (0, 42.5] in steps of 0.1, slightly beyond the diagonal of a [0,30]^2 grid.
struct HGrid {
  double dh = 0.1;
  int count = 425;

  double point(int i) const { return (i + 1) * dh; }
  std::vector<double> points() const {
    std::vector<double> p(count);
    for (int i = 0; i < count; ++i) p[i] = point(i);
    return p;
  }
  bool operator==(const HGrid& o) const { return dh == o.dh && count == o.count; }
  bool operator!=(const HGrid& o) const { return !(*this == o); }

  void validate() const {
    if (!(dh > 0.0) || count < 1) throw DomainError("HGrid requires dh > 0 and count >= 1");
  }
};

/// A pairwise extremal coefficient function discretized on an HGrid; values
/// lie in [1,2] and, once monotone post-processing has run, are nondecreasing.
struct ThetaCurve {
  HGrid grid;
  std::vector<double> values;

  void validate() const {
    grid.validate();
    if (static_cast<int>(values.size()) != grid.count)
      throw DomainError("ThetaCurve length does not match its grid");
    for (double v : values)
      if (!(v >= 1.0 && v <= 2.0))
        throw DomainError("theta values must lie in [1,2], got " + std::to_string(v));
  }

  bool nondecreasing() const {
    for (std::size_t i = 1; i < values.size(); ++i)
      if (values[i] < values[i - 1]) return false;
    return true;
  }
};

// ---------------------------------------------------------------------------
// Spatial grid

/// Regular nx-by-ny lattice of sites spanning the inclusive bounding box
/// [x0,x1] x [y0,y1]. Site index is iy * nx + ix, row-major across x.
struct GridSpec {
  int nx = 30, ny = 30;
  double x0 = 0.0, x1 = 30.0, y0 = 0.0, y1 = 30.0;

  int size() const { return nx * ny; }
  bool square() const { return nx == ny && (x1 - x0) == (y1 - y0); }

  double sx(int ix) const { return nx == 1 ? x0 : x0 + ix * (x1 - x0) / (nx - 1); }
  double sy(int iy) const { return ny == 1 ? y0 : y0 + iy * (y1 - y0) / (ny - 1); }

  double site_x(int idx) const { return sx(idx % nx); }
  double site_y(int idx) const { return sy(idx / nx); }

  double distance(int i, int j) const {
    const double dx = site_x(i) - site_x(j);
    const double dy = site_y(i) - site_y(j);
    return std::sqrt(dx * dx + dy * dy);
  }

  void validate() const {
    if (nx < 1 || ny < 1) throw DomainError("grid must have at least one site per axis");
    if (!(x1 > x0) || !(y1 > y0)) throw DomainError("grid extent must be nonempty");
  }

  /// n-by-n lattice with unit cell spacing (extent [0, n-1]^2).
  static GridSpec unit_spaced(int n) {
    return GridSpec{n, n, 0.0, static_cast<double>(n - 1), 0.0, static_cast<double>(n - 1)};
  }

  bool operator==(const GridSpec& o) const {
    return nx == o.nx && ny == o.ny && x0 == o.x0 && x1 == o.x1 && y0 == o.y0 && y1 == o.y1;
  }
};

}  // namespace maxstable
