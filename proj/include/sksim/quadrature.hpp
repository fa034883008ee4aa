// 1D Gauss-Legendre rules (nodes generated by Newton iteration on P_n) and
// an adaptive bisection integrator that compares two rule orders per panel.
#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <stdexcept>
#include <vector>

namespace sksim {

struct GaussRule {
  std::vector<double> x;  // nodes on [-1, 1]
  std::vector<double> w;
};

// Legendre P_n(x) and derivative by the three-term recurrence.
inline void legendre_eval(int n, double x, double& p, double& dp) {
  double p0 = 1.0, p1 = x;
  if (n == 0) { p = p0; dp = 0.0; return; }
  for (int k = 2; k <= n; ++k) {
    double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
    p0 = p1;
    p1 = p2;
  }
  p = p1;
  dp = n * (x * p1 - p0) / (x * x - 1.0);
}

inline const GaussRule& gauss_rule(int n) {
  static std::map<int, GaussRule> cache;
  static std::mutex mtx;
  std::lock_guard<std::mutex> lock(mtx);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  GaussRule rule;
  rule.x.resize(n);
  rule.w.resize(n);
  for (int k = 0; k < n; ++k) {
    double x = std::cos(M_PI * (k + 0.75) / (n + 0.5));
    double p, dp;
    for (int iter = 0; iter < 100; ++iter) {
      legendre_eval(n, x, p, dp);
      double dx = -p / dp;
      x += dx;
      if (std::abs(dx) < 1e-15) break;
    }
    legendre_eval(n, x, p, dp);
    rule.x[k] = x;
    rule.w[k] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return cache.emplace(n, std::move(rule)).first->second;
}

template <typename F>
inline double gauss_integrate(const F& f, double a, double b, int n) {
  const GaussRule& rule = gauss_rule(n);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  double s = 0.0;
  for (int k = 0; k < n; ++k) s += rule.w[k] * f(mid + half * rule.x[k]);
  return half * s;
}

struct QuadratureResult {
  double value = 0.0;
  double error_estimate = 0.0;
  bool converged = true;
};

// Adaptive bisection: each panel estimated with GL-10 vs GL-21. Panels whose
// discrepancy exceeds the proportional share of the tolerance are split.
template <typename F>
inline QuadratureResult adaptive_integrate(const F& f, double a, double b,
                                           double rel_tol = 1e-10,
                                           double abs_tol = 0.0,
                                           int max_depth = 48) {
  struct Panel {
    double a, b, coarse;
    int depth;
  };
  double total = gauss_integrate(f, a, b, 21);
  std::vector<Panel> stack{{a, b, gauss_integrate(f, a, b, 10), 0}};
  double value = 0.0, err = 0.0;
  bool converged = true;
  while (!stack.empty()) {
    Panel p = stack.back();
    stack.pop_back();
    double fine = gauss_integrate(f, p.a, p.b, 21);
    double diff = std::abs(fine - p.coarse);
    double tol = std::max(abs_tol, rel_tol * std::abs(total)) *
                 std::abs(p.b - p.a) / std::abs(b - a);
    if (diff <= tol || p.depth >= max_depth) {
      if (diff > tol) converged = false;
      value += fine;
      err += diff;
      continue;
    }
    double m = 0.5 * (p.a + p.b);
    stack.push_back({p.a, m, gauss_integrate(f, p.a, m, 10), p.depth + 1});
    stack.push_back({m, p.b, gauss_integrate(f, m, p.b, 10), p.depth + 1});
  }
  return {value, err, converged};
}

}  // namespace sksim
