// Small dense optimizers: Nelder-Mead simplex, BFGS with backtracking line
// search, and central-difference derivatives.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace maxstable {

using ObjectiveFn = std::function<double(const Eigen::VectorXd&)>;
using GradientFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct OptimResult {
  Eigen::VectorXd x;
  double f = std::numeric_limits<double>::infinity();
  int iterations = 0;
  bool converged = false;
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
};

struct NelderMeadOptions {
  int max_iter = 500;
  double f_tol = 1e-9;
  double x_tol = 1e-8;
  double init_step = 0.5;
};

inline OptimResult nelder_mead(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                               const NelderMeadOptions& opts = {}) {
  const int n = static_cast<int>(x0.size());
  std::vector<Eigen::VectorXd> pts(static_cast<std::size_t>(n + 1), x0);
  std::vector<double> vals(static_cast<std::size_t>(n + 1));
  for (int i = 0; i < n; ++i) pts[static_cast<std::size_t>(i + 1)][i] += opts.init_step;
  for (std::size_t i = 0; i < pts.size(); ++i) vals[i] = f(pts[i]);

  auto order = [&] {
    std::vector<std::size_t> idx(pts.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      return vals[a] < vals[b];
    });
    std::vector<Eigen::VectorXd> p2;
    std::vector<double> v2;
    for (std::size_t i : idx) {
      p2.push_back(pts[i]);
      v2.push_back(vals[i]);
    }
    pts.swap(p2);
    vals.swap(v2);
  };

  OptimResult res;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    order();
    if (std::abs(vals.back() - vals.front()) < opts.f_tol) {
      double spread = 0.0;
      for (std::size_t i = 1; i < pts.size(); ++i)
        spread = std::max(spread, (pts[i] - pts[0]).lpNorm<Eigen::Infinity>());
      if (spread < opts.x_tol) {
        res.converged = true;
        break;
      }
    }
    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) centroid += pts[i];
    centroid /= static_cast<double>(n);

    const Eigen::VectorXd refl = centroid + (centroid - pts.back());
    const double f_refl = f(refl);
    if (f_refl < vals.front()) {
      const Eigen::VectorXd exp_pt = centroid + 2.0 * (centroid - pts.back());
      const double f_exp = f(exp_pt);
      if (f_exp < f_refl) {
        pts.back() = exp_pt;
        vals.back() = f_exp;
      } else {
        pts.back() = refl;
        vals.back() = f_refl;
      }
      continue;
    }
    if (f_refl < vals[vals.size() - 2]) {
      pts.back() = refl;
      vals.back() = f_refl;
      continue;
    }
    const Eigen::VectorXd contr = centroid + 0.5 * (pts.back() - centroid);
    const double f_contr = f(contr);
    if (f_contr < vals.back()) {
      pts.back() = contr;
      vals.back() = f_contr;
      continue;
    }
    for (std::size_t i = 1; i < pts.size(); ++i) {  // shrink
      pts[i] = pts[0] + 0.5 * (pts[i] - pts[0]);
      vals[i] = f(pts[i]);
    }
  }
  order();
  res.x = pts.front();
  res.f = vals.front();
  res.iterations = it;
  return res;
}

/// Central-difference gradient with per-coordinate relative steps.
inline Eigen::VectorXd finite_diff_gradient(const ObjectiveFn& f, const Eigen::VectorXd& x,
                                            double rel_step = 1e-6) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = rel_step * std::max(1.0, std::abs(x[i]));
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

struct BfgsOptions {
  int max_iter = 200;
  double grad_tol = 1e-6;
  double fd_step = 1e-6;
};

/// BFGS minimization with Armijo backtracking. Uses a central-difference
/// gradient unless an analytic one is supplied.
inline OptimResult bfgs_minimize(const ObjectiveFn& f, const Eigen::VectorXd& x0,
                                 const BfgsOptions& opts = {}, const GradientFn& grad_fn = {}) {
  const auto gradient = [&](const Eigen::VectorXd& x) {
    return grad_fn ? grad_fn(x) : finite_diff_gradient(f, x, opts.fd_step);
  };
  const Eigen::Index n = x0.size();
  Eigen::VectorXd x = x0;
  double fx = f(x);
  Eigen::VectorXd g = gradient(x);
  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  OptimResult res;
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    if (g.norm() < opts.grad_tol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd dir = -hinv * g;
    if (dir.dot(g) >= 0.0) {  // lost positive definiteness; restart
      hinv.setIdentity();
      dir = -g;
    }
    double step = 1.0;
    const double slope = g.dot(dir);
    double f_new = fx;
    Eigen::VectorXd x_new = x;
    bool ok = false;
    for (int ls = 0; ls < 50; ++ls) {
      x_new = x + step * dir;
      f_new = f(x_new);
      if (std::isfinite(f_new) && f_new <= fx + 1e-4 * step * slope) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;
    const Eigen::VectorXd g_new = gradient(x_new);
    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12) {
      const Eigen::VectorXd hy = hinv * y;
      const double yhy = y.dot(hy);
      hinv += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
              (hy * s.transpose() + s * hy.transpose()) / sy;
    }
    x = x_new;
    fx = f_new;
    g = g_new;
  }
  res.x = x;
  res.f = fx;
  res.iterations = it;
  res.grad_norm = g.norm();
  return res;
}

/// Central second differences; used for observed-information standard errors.
inline Eigen::MatrixXd numeric_hessian(const ObjectiveFn& f, const Eigen::VectorXd& x,
                                       double rel_step = 1e-4) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd h(n);
  for (Eigen::Index i = 0; i < n; ++i) h[i] = rel_step * std::max(1.0, std::abs(x[i]));
  Eigen::MatrixXd hess(n, n);
  const double f0 = f(x);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd xp = x, xm = x;
    xp[i] += h[i];
    xm[i] -= h[i];
    hess(i, i) = (f(xp) - 2.0 * f0 + f(xm)) / (h[i] * h[i]);
    for (Eigen::Index j = 0; j < i; ++j) {
      Eigen::VectorXd xpp = x, xpm = x, xmp = x, xmm = x;
      xpp[i] += h[i]; xpp[j] += h[j];
      xpm[i] += h[i]; xpm[j] -= h[j];
      xmp[i] -= h[i]; xmp[j] += h[j];
      xmm[i] -= h[i]; xmm[j] -= h[j];
      const double v = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * h[i] * h[j]);
      hess(i, j) = v;
      hess(j, i) = v;
    }
  }
  return hess;
}

}  // namespace maxstable
