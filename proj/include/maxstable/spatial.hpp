// Closed-form spatial dependence machinery: variograms, correlation kernels,
// extremal coefficient functions and bivariate CDFs/densities for the
// supported max-stable families.
//
// Conventions for a pair of sites at separation h, unit Fréchet margins:
//   Brown-Resnick / Smith (Hüsler-Reiss type), a^2 = 2*gamma(h):
//     V(z1,z2)  = Phi(w)/z1 + Phi(v)/z2,
//       w = a/2 + log(z2/z1)/a, v = a/2 + log(z1/z2)/a  (w + v = a)
//     V_1       = -Phi(w)/z1^2
//     V_12      = -phi(w)/(a z1^2 z2)
//     theta(h)  = 2 Phi(a/2)
//   Schlather (extremal Gaussian), rho = rho(h):
//     V(z1,z2)  = ((1/z1 + 1/z2)/2) (1 + A),
//       A = sqrt(1 - 2(1+rho) z1 z2 / (z1+z2)^2)
//     theta(h)  = 1 + sqrt((1-rho)/2)
// Densities are f = exp(-V)(V_1 V_2 - V_12).
#pragma once

#include <cstdio>
#include <limits>
#include <cmath>
#include <cstdint>
#include <string>

#include "maxstable/common.hpp"
#include "maxstable/rng.hpp"

namespace maxstable {

// ---------------------------------------------------------------------------
// Kernels

/// Brown-Resnick semivariogram (h/lambda)^nu.
inline double variogram_powered(double h, const ParameterVector& p) {
  if (p.family != ModelFamily::BrownResnick)
    throw DomainError("variogram_powered expects a Brown-Resnick parameter vector");
  p.validate();
  if (h < 0.0) throw DomainError("separation must be nonnegative");
  if (h == 0.0) return 0.0;
  return std::pow(h / p.lambda, p.nu);
}

/// Powered exponential correlation exp(-(h/lambda)^nu).
inline double corr_powexp(double h, const ParameterVector& p) {
  if (p.family != ModelFamily::SchlatherPowExp)
    throw DomainError("corr_powexp expects a powered-exponential parameter vector");
  p.validate();
  if (h < 0.0) throw DomainError("separation must be nonnegative");
  if (h == 0.0) return 1.0;
  return std::exp(-std::pow(h / p.lambda, p.nu));
}

/// Whittle-Matérn correlation 2^(1-nu)/Gamma(nu) (h/lambda)^nu K_nu(h/lambda),
/// continuously extended to 1 at h = 0.
inline double corr_whittle_matern(double h, const ParameterVector& p) {
  if (p.family != ModelFamily::SchlatherWhittleMatern)
    throw DomainError("corr_whittle_matern expects a Whittle-Matérn parameter vector");
  p.validate();
  if (h < 0.0) throw DomainError("separation must be nonnegative");
  if (h == 0.0) return 1.0;
  const double x = h / p.lambda;
  const double k = std::cyl_bessel_k(p.nu, x);
  if (k == 0.0) return 0.0;  // K_nu underflow at large x; correlation is ~0 there
  const double c = std::pow(2.0, 1.0 - p.nu) / std::tgamma(p.nu);
  const double r = c * std::pow(x, p.nu) * k;
  return std::min(r, 1.0);
}

/// Correlation function of a Schlather family.
inline double correlation(double h, const ParameterVector& p) {
  switch (p.family) {
    case ModelFamily::SchlatherPowExp: return corr_powexp(h, p);
    case ModelFamily::SchlatherWhittleMatern: return corr_whittle_matern(h, p);
    default: throw DomainError("correlation is defined for Schlather families only");
  }
}

/// Smith model with diagonal covariance sigma*I as a Brown-Resnick process.
inline ParameterVector smith_to_brown_resnick(double sigma) {
  if (!(sigma > 0.0)) throw DomainError("Smith scale must be positive");
  return ParameterVector{std::sqrt(2.0 * sigma), 2.0, ModelFamily::BrownResnick};
}

/// Brown-Resnick view of a parameter vector (identity for Brown-Resnick).
inline ParameterVector as_brown_resnick(const ParameterVector& p) {
  p.validate();
  if (p.family == ModelFamily::BrownResnick) return p;
  if (p.family == ModelFamily::Smith) return smith_to_brown_resnick(p.lambda);
  throw DomainError("no Brown-Resnick representation for Schlather families");
}

/// Hüsler-Reiss dependence a(h) = sqrt(2 gamma(h)) for Brown-Resnick/Smith.
inline double hr_a(double h, const ParameterVector& p) {
  const ParameterVector br = as_brown_resnick(p);
  return std::sqrt(2.0 * variogram_powered(h, br));
}

// ---------------------------------------------------------------------------
// Extremal coefficient

inline double theta(double h, const ParameterVector& p) {
  p.validate();
  if (h < 0.0) throw DomainError("separation must be nonnegative");
  if (is_schlather(p.family)) {
    const double rho = correlation(h, p);
    return 1.0 + std::sqrt(std::max(0.0, (1.0 - rho) / 2.0));
  }
  return 2.0 * norm_cdf(hr_a(h, p) / 2.0);
}

/// theta mapped over an HGrid.
inline ThetaCurve theta_curve(const ParameterVector& p, const HGrid& grid) {
  ThetaCurve c{grid, std::vector<double>(grid.count)};
  for (int i = 0; i < grid.count; ++i) c.values[i] = theta(grid.point(i), p);
  return c;
}

struct ThetaMcResult {
  double value = 0.0;
  double se = 0.0;
};

/// Monte Carlo estimate of E[max{Y(x1), Y(x2)}] by sampling the spectral
/// process of the family at two sites a distance h apart. Serves as the
/// oracle gating every closed-form theta above.
inline ThetaMcResult theta_mc(double h, const ParameterVector& p, std::int64_t n_draws,
                              std::uint64_t seed) {
  p.validate();
  if (n_draws < 10000) throw DomainError("theta_mc needs at least 1e4 draws");
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  if (is_schlather(p.family)) {
    // Y = sqrt(2 pi) max(0, W) with (W1, W2) standard bivariate normal.
    const double rho = correlation(h, p);
    const double t = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (std::int64_t i = 0; i < n_draws; ++i) {
      const double n1 = rng.normal();
      const double n2 = rng.normal();
      const double w2 = rho * n1 + t * n2;
      const double v = kSqrt2Pi * std::max(0.0, std::max(n1, w2));
      sum += v;
      sumsq += v * v;
    }
  } else {
    // Y(x1) = 1, Y(x2) = exp(G - gamma) with G ~ N(0, 2 gamma).
    const double g = variogram_powered(h, as_brown_resnick(p));
    const double sd = std::sqrt(2.0 * g);
    for (std::int64_t i = 0; i < n_draws; ++i) {
      const double v = std::max(1.0, std::exp(sd * rng.normal() - g));
      sum += v;
      sumsq += v * v;
    }
  }
  const double n = static_cast<double>(n_draws);
  const double mean = sum / n;
  const double var = std::max(0.0, sumsq / n - mean * mean);
  return {mean, std::sqrt(var / n)};
}

// ---------------------------------------------------------------------------
// Bivariate CDF and density

namespace detail {

// Switch points for the degenerate branches of the Hüsler-Reiss CDF; outside
// (1e-8, 1e8) the Phi arguments are no longer representable.
inline constexpr double kTinyA = 1e-8;
inline constexpr double kHugeA = 1e8;

struct HrParts {
  double V, V1, V2, V12;
};

inline HrParts hr_exponent_parts(double z1, double z2, double a) {
  const double lr = std::log(z2 / z1);
  const double w = 0.5 * a + lr / a;
  const double v = 0.5 * a - lr / a;
  const double Pw = norm_cdf(w), Pv = norm_cdf(v);
  const double pw = norm_pdf(w);
  HrParts r;
  r.V = Pw / z1 + Pv / z2;
  r.V1 = -Pw / (z1 * z1);
  r.V2 = -Pv / (z2 * z2);
  r.V12 = -pw / (a * z1 * z1 * z2);
  return r;
}

struct SchlatherParts {
  double V, V1, V2, V12;
};

inline SchlatherParts schlather_exponent_parts(double z1, double z2, double rho) {
  const double c = 2.0 * (1.0 + rho);
  const double s = z1 + z2;
  const double A = std::sqrt(std::max(0.0, 1.0 - c * z1 * z2 / (s * s)));
  const double sum_inv = 1.0 / z1 + 1.0 / z2;
  SchlatherParts r;
  r.V = 0.5 * sum_inv * (1.0 + A);
  if (A <= 0.0) throw DomainError("Schlather density is degenerate at rho = 1, z1 = z2");
  const double s3 = s * s * s;
  const double A1 = -c * z2 * (z2 - z1) / (2.0 * A * s3);
  const double A2 = -c * z1 * (z1 - z2) / (2.0 * A * s3);
  const double g2 = -c * (-z1 * z1 + 4.0 * z1 * z2 - z2 * z2) / (s3 * s);
  const double A12 = (g2 - 2.0 * A1 * A2) / (2.0 * A);
  r.V1 = 0.5 * (-(1.0 + A) / (z1 * z1) + sum_inv * A1);
  r.V2 = 0.5 * (-(1.0 + A) / (z2 * z2) + sum_inv * A2);
  r.V12 = 0.5 * (-A2 / (z1 * z1) - A1 / (z2 * z2) + sum_inv * A12);
  return r;
}

inline void check_pair(double z1, double z2) {
  if (!(z1 > 0.0) || !(z2 > 0.0)) throw DomainError("field values must be positive");
}

}  // namespace detail

inline double bivariate_cdf(double z1, double z2, double h, const ParameterVector& p) {
  detail::check_pair(z1, z2);
  p.validate();
  if (is_schlather(p.family)) {
    const double rho = correlation(h, p);
    const double c = 2.0 * (1.0 + rho);
    const double s = z1 + z2;
    const double A = std::sqrt(std::max(0.0, 1.0 - c * z1 * z2 / (s * s)));
    return std::exp(-0.5 * (1.0 / z1 + 1.0 / z2) * (1.0 + A));
  }
  const double a = hr_a(h, p);
  if (a < detail::kTinyA) return std::exp(-1.0 / std::min(z1, z2));
  if (a > detail::kHugeA) return std::exp(-1.0 / z1 - 1.0 / z2);
  const auto parts = detail::hr_exponent_parts(z1, z2, a);
  return std::exp(-parts.V);
}

/// Analytic bivariate density f = exp(-V)(V_1 V_2 - V_12).
inline double bivariate_density(double z1, double z2, double h, const ParameterVector& p) {
  detail::check_pair(z1, z2);
  p.validate();
  if (is_schlather(p.family)) {
    const double rho = correlation(h, p);
    const auto parts = detail::schlather_exponent_parts(z1, z2, rho);
    return std::exp(-parts.V) * (parts.V1 * parts.V2 - parts.V12);
  }
  const double a = hr_a(h, p);
  if (a < detail::kTinyA)
    throw DomainError("bivariate density is degenerate at zero separation");
  if (a > detail::kHugeA) {
    // Independence limit: product of unit Fréchet densities.
    return std::exp(-1.0 / z1 - 1.0 / z2) / (z1 * z1 * z2 * z2);
  }
  const auto parts = detail::hr_exponent_parts(z1, z2, a);
  return std::exp(-parts.V) * (parts.V1 * parts.V2 - parts.V12);
}

/// Central finite difference of the CDF, the cross-check oracle for the
/// analytic density (relative step 1e-5 in each coordinate).
inline double bivariate_density_fd(double z1, double z2, double h, const ParameterVector& p,
                                   double rel_step = 1e-5) {
  detail::check_pair(z1, z2);
  const double d1 = rel_step * z1;
  const double d2 = rel_step * z2;
  const double cpp = bivariate_cdf(z1 + d1, z2 + d2, h, p);
  const double cpm = bivariate_cdf(z1 + d1, z2 - d2, h, p);
  const double cmp = bivariate_cdf(z1 - d1, z2 + d2, h, p);
  const double cmm = bivariate_cdf(z1 - d1, z2 - d2, h, p);
  return (cpp - cpm - cmp + cmm) / (4.0 * d1 * d2);
}

/// Analytic density, verified against the finite-difference oracle on the
/// fly. Throws EvaluationError if the two routes disagree beyond 1e-4
/// relative. Differences below the oracle's own cancellation floor
/// (~eps / (4 d1 d2)) are not resolvable and do not count as disagreement.
inline double bivariate_density_checked(double z1, double z2, double h,
                                        const ParameterVector& p,
                                        double rel_tol = 1e-4) {
  const double f = bivariate_density(z1, z2, h, p);
  const double fd = bivariate_density_fd(z1, z2, h, p);
  const double rel_step = 1e-5;
  const double fd_floor = 16.0 * std::numeric_limits<double>::epsilon() /
                          (4.0 * rel_step * rel_step * z1 * z2);
  const double scale = std::max({std::abs(f), std::abs(fd), 1e-300});
  if (std::abs(f - fd) > std::max(rel_tol * scale, fd_floor)) {
    char msg[256];
    std::snprintf(msg, sizeof msg,
                  "bivariate density disagrees with finite-difference oracle at "
                  "z1=%.6g z2=%.6g h=%.6g (analytic %.8e, fd %.8e)",
                  z1, z2, h, f, fd);
    throw EvaluationError(msg);
  }
  return f;
}

}  // namespace maxstable
