// Shared helpers for the test binaries: one-sample Kolmogorov-Smirnov test
// with the asymptotic p-value (Stephens' small-sample correction).
#pragma once

#include <algorithm>
#include <cmath>
#include <array>
#include <functional>
#include <vector>

namespace testutil {

inline double ks_statistic(std::vector<double> values,
                           const std::function<double(double)>& cdf) {
  std::sort(values.begin(), values.end());
  const double n = static_cast<double>(values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double f = cdf(values[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

inline double kolmogorov_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double t = d * (sn + 0.12 + 0.11 / sn);
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * (j % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * j * j * t * t);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double ks_pvalue(const std::vector<double>& values,
                        const std::function<double(double)>& cdf) {
  return kolmogorov_pvalue(ks_statistic(values, cdf), values.size());
}

/// KS p-value against the unit Fréchet law exp(-1/z).
inline double ks_pvalue_frechet(const std::vector<double>& values) {
  return ks_pvalue(values, [](double z) { return z > 0.0 ? std::exp(-1.0 / z) : 0.0; });
}

}  // namespace testutil

namespace testutil {

/// Exact expected energy score of a discrete predictive distribution Q
/// against a discrete truth P (beta = 1), by brute force over all atom
/// pairs: sum_ij q_i p_j |b_i - a_j| - 1/2 sum_ij q_i q_j |b_i - b_j|.
inline double expected_energy_score_discrete(const std::vector<std::array<double, 2>>& q_atoms,
                                             const std::vector<double>& q_w,
                                             const std::vector<std::array<double, 2>>& p_atoms,
                                             const std::vector<double>& p_w) {
  auto dist = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1];
    return std::sqrt(dx * dx + dy * dy);
  };
  double cross = 0.0;
  for (std::size_t i = 0; i < q_atoms.size(); ++i)
    for (std::size_t j = 0; j < p_atoms.size(); ++j)
      cross += q_w[i] * p_w[j] * dist(q_atoms[i], p_atoms[j]);
  double self = 0.0;
  for (std::size_t i = 0; i < q_atoms.size(); ++i)
    for (std::size_t j = 0; j < q_atoms.size(); ++j)
      self += q_w[i] * q_w[j] * dist(q_atoms[i], q_atoms[j]);
  return cross - 0.5 * self;
}

}  // namespace testutil
