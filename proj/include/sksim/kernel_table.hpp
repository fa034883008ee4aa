// Radial lookup table for the mollified interaction force
//   grad G_eps(x) = (psi_eps * grad G)(x) = F(|x|) x/|x|.
//
// Construction splits G = Phi + Psi (Newtonian part + bounded residual):
//  - the Phi contribution has the closed shell form
//        Phi_eps'(r) = -m(r) / (omega_d r^{d-1}),
//    with m(r) the mollifier mass enclosed in radius r (a 1D quadrature);
//  - the Psi contribution is a 2D adaptive quadrature of a bounded integrand.
// For r >= 4 eps the mollifier support stays away from the singularity and
// the full gradient is integrated directly with a tensor Gauss rule (the
// split becomes ill-conditioned there: two algebraic tails cancel to an
// exponentially small force).
//
// F is negative for this kernel (aggregation pulls particles together).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "sksim/bessel.hpp"
#include "sksim/mollifier.hpp"
#include "sksim/quadrature.hpp"
#include "sksim/vec.hpp"

namespace sksim {

struct KernelBuildError : std::runtime_error {
  double worst_residual;
  KernelBuildError(const std::string& msg, double residual)
      : std::runtime_error(msg), worst_residual(residual) {}
};

// Fritsch-Carlson monotone cubic (PCHIP) knot derivatives.
inline std::vector<double> pchip_slopes(const std::vector<double>& x,
                                        const std::vector<double>& y) {
  const std::size_t n = x.size();
  std::vector<double> d(n, 0.0);
  if (n < 2) return d;
  std::vector<double> h(n - 1), delta(n - 1);
  for (std::size_t k = 0; k + 1 < n; ++k) {
    h[k] = x[k + 1] - x[k];
    delta[k] = (y[k + 1] - y[k]) / h[k];
  }
  for (std::size_t k = 1; k + 1 < n; ++k) {
    if (delta[k - 1] * delta[k] <= 0.0) {
      d[k] = 0.0;
    } else {
      const double w1 = 2.0 * h[k] + h[k - 1];
      const double w2 = h[k] + 2.0 * h[k - 1];
      d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
  }
  auto endpoint = [](double h0, double h1, double d0, double d1) {
    double s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (s * d0 <= 0.0) return 0.0;
    if (d0 * d1 <= 0.0 && std::abs(s) > 3.0 * std::abs(d0)) return 3.0 * d0;
    return s;
  };
  if (n == 2) {
    d[0] = d[1] = delta[0];
  } else {
    d[0] = endpoint(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
  }
  return d;
}

struct KernelTable {
  double epsilon = 0.0;
  int dim = 0;
  std::vector<double> r_samples;
  std::vector<double> f_samples;
  std::vector<double> slopes;  // PCHIP derivatives at the knots
  double r_cut = 0.0;
  double tail_bound = 0.0;
  double max_abs_force = 0.0;
  double scaling_constant = 0.0;  // max|F| * eps^{d-1}

  void finalize() {
    slopes = pchip_slopes(r_samples, f_samples);
    max_abs_force = 0.0;
    for (double f : f_samples) max_abs_force = std::max(max_abs_force, std::abs(f));
    scaling_constant = max_abs_force * std::pow(epsilon, dim - 1);
  }

  // Signed radial force by cubic Hermite interpolation; exact at the knots.
  double radial_force(double r) const {
    if (r <= 0.0 || r >= r_cut) return 0.0;
    auto it = std::upper_bound(r_samples.begin(), r_samples.end(), r);
    std::size_t k = static_cast<std::size_t>(it - r_samples.begin());
    if (k == 0) return f_samples.front();
    if (k >= r_samples.size()) return 0.0;
    --k;
    if (r == r_samples[k]) return f_samples[k];
    const double h = r_samples[k + 1] - r_samples[k];
    const double t = (r - r_samples[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2.0 * t3 - 3.0 * t2 + 1.0) * f_samples[k] +
           (t3 - 2.0 * t2 + t) * h * slopes[k] +
           (-2.0 * t3 + 3.0 * t2) * f_samples[k + 1] +
           (t3 - t2) * h * slopes[k + 1];
  }
};

template <int D>
inline Vec<D> eval_force(const KernelTable& table, const Vec<D>& x) {
  if (table.dim != D) throw std::invalid_argument("eval_force: dimension mismatch");
  const double r = norm<D>(x);
  Vec<D> out = zero_vec<D>();
  if (r <= 0.0 || r >= table.r_cut) return out;
  const double g = table.radial_force(r) / r;
  for (int i = 0; i < D; ++i) out[i] = g * x[i];
  return out;
}

// Cubic Hermite interpolant of a 1D radial function on a fixed knot set.
// Used to amortize special-function evaluations inside quadrature loops.
struct RadialInterpolant {
  std::vector<double> r, y, d;

  template <typename F>
  static RadialInterpolant build(const F& f, double r_min, double r_max, int n) {
    RadialInterpolant out;
    out.r.push_back(0.0);
    out.y.push_back(f(0.0));
    const double ratio = std::log(r_max / r_min) / (n - 1);
    for (int k = 0; k < n; ++k) {
      out.r.push_back(r_min * std::exp(ratio * k));
      out.y.push_back(f(out.r.back()));
    }
    out.d = pchip_slopes(out.r, out.y);
    return out;
  }

  double operator()(double x) const {
    if (x <= 0.0) return y.front();
    if (x >= r.back()) return y.back();
    auto it = std::upper_bound(r.begin(), r.end(), x);
    std::size_t k = static_cast<std::size_t>(it - r.begin()) - 1;
    const double h = r[k + 1] - r[k];
    const double t = (x - r[k]) / h;
    const double t2 = t * t, t3 = t2 * t;
    return (2.0 * t3 - 3.0 * t2 + 1.0) * y[k] + (t3 - 2.0 * t2 + t) * h * d[k] +
           (-2.0 * t3 + 3.0 * t2) * y[k + 1] + (t3 - t2) * h * d[k + 1];
  }
};

namespace detail {

// Radial component of the mollified field of a radial kernel with radial
// derivative gp(R), at distance r from the origin:
//   d = 2:  2      int_0^eps psi(s) s   int_0^pi gp(R) (r - s c)/R        dth ds
//   d = 3:  2 pi   int_0^eps psi(s) s^2 int_0^pi gp(R) (r - s c)/R sin th dth ds
// with c = cos th, R = sqrt(r^2 + s^2 - 2 r s c).
template <typename Gp>
inline QuadratureResult mollified_radial_component(double r, const MollifierSpec& spec,
                                                   const Gp& gp, double tol,
                                                   double scale) {
  const double eps = spec.epsilon;
  const int d = spec.dim;
  bool ok = true;
  double worst = 0.0;
  // The angular integral nearly cancels for r << eps, so tolerances are
  // anchored to the magnitude of gp on the sampled radii, not to the result.
  const double inner_abs = tol * scale * M_PI;
  auto outer = [&](double s) {
    auto inner = [&](double th) {
      const double c = std::cos(th);
      const double R2 = r * r + s * s - 2.0 * r * s * c;
      if (R2 < 1e-280) return 0.0;  // measure-zero coincidence point
      const double R = std::sqrt(R2);
      double v = gp(R) * (r - s * c) / R;
      if (d == 3) v *= std::sin(th);
      return v;
    };
    QuadratureResult in = adaptive_integrate(inner, 0.0, M_PI, 0.0, inner_abs, 30);
    if (!in.converged) { ok = false; worst = std::max(worst, in.error_estimate); }
    const double w = mollifier_radial(s, spec) * (d == 3 ? s * s : s);
    return w * in.value;
  };
  // Outer weight integrates to ~1/omega_d against the angular result.
  QuadratureResult out = adaptive_integrate(outer, 0.0, eps, 0.0, tol * scale, 30);
  if (!out.converged) { ok = false; worst = std::max(worst, out.error_estimate); }
  out.value *= (d == 3 ? kTwoPi : 2.0);
  out.converged = ok && out.converged;
  out.error_estimate = std::max(out.error_estimate, worst);
  return out;
}

// Same integral with a fixed tensor Gauss rule; valid when the integrand is
// smooth on the whole ball (r well outside the mollifier support).
template <typename Gp>
inline double mollified_radial_component_tensor(double r, const MollifierSpec& spec,
                                                const Gp& gp, int order) {
  const GaussRule& rule = gauss_rule(order);
  const double eps = spec.epsilon;
  const int d = spec.dim;
  double sum = 0.0;
  for (int a = 0; a < order; ++a) {
    const double s = 0.5 * eps * (1.0 + rule.x[a]);
    const double ws = 0.5 * eps * rule.w[a];
    const double w = mollifier_radial(s, spec) * (d == 3 ? s * s : s) * ws;
    double th_sum = 0.0;
    for (int b = 0; b < order; ++b) {
      const double th = 0.5 * M_PI * (1.0 + rule.x[b]);
      const double wt = 0.5 * M_PI * rule.w[b];
      const double c = std::cos(th);
      const double R = std::sqrt(r * r + s * s - 2.0 * r * s * c);
      double v = gp(R) * (r - s * c) / R;
      if (d == 3) v *= std::sin(th);
      th_sum += wt * v;
    }
    sum += w * th_sum;
  }
  return sum * (d == 3 ? kTwoPi : 2.0);
}

}  // namespace detail

// Smallest radius at which |G'| drops below the given bound.
inline double force_envelope_radius(int d, double bound) {
  double lo = 1.0, hi = 60.0;
  while (std::abs(bessel_radial_derivative(lo, d)) < bound) lo *= 0.5;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (std::abs(bessel_radial_derivative(mid, d)) > bound)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-12) break;
  }
  return hi;
}

inline KernelTable build_kernel_table(double epsilon, int d, int resolution = 512) {
  require_dim(d);
  if (!(epsilon > 0.0)) throw std::invalid_argument("build_kernel_table: epsilon must be positive");
  if (resolution < 64) throw std::invalid_argument("build_kernel_table: resolution must be >= 64");

  const MollifierSpec spec = make_mollifier(epsilon, d);
  constexpr double kTailLevel = 1e-10;
  const double r_star = force_envelope_radius(d, kTailLevel);

  KernelTable table;
  table.epsilon = epsilon;
  table.dim = d;
  table.r_cut = r_star + epsilon;
  table.tail_bound = std::abs(bessel_radial_derivative(r_star, d));

  // Knots: dense geometric coverage of (0, 4 eps] where F varies on the eps
  // scale, then a uniform far grid out to the cutoff.
  const double split = std::min(4.0 * epsilon, table.r_cut);
  const int n_dense = (3 * resolution) / 2;
  std::vector<double>& rs = table.r_samples;
  rs.push_back(0.0);
  {
    const double r0 = 1e-3 * epsilon;
    const double ratio = std::log(split / r0) / (n_dense - 1);
    for (int k = 0; k < n_dense; ++k) rs.push_back(r0 * std::exp(ratio * k));
  }
  const double far_h = 0.01;
  for (double r = split + far_h; r < table.r_cut - 0.5 * far_h; r += far_h) rs.push_back(r);
  rs.push_back(table.r_cut);

  // Enclosed mollifier mass at the dense knots, accumulated panel by panel.
  std::vector<double> enclosed(rs.size(), 0.0);
  {
    double acc = 0.0, prev = 0.0;
    for (std::size_t k = 1; k < rs.size(); ++k) {
      const double hi = std::min(rs[k], epsilon);
      if (hi > prev) {
        auto f = [&](double s) {
          return mollifier_radial(s, spec) * std::pow(s, d - 1);
        };
        acc += gauss_integrate(f, prev, hi, 24);
        prev = hi;
      }
      enclosed[k] = sphere_area(d) * acc;
    }
  }

  bool converged = true;
  double worst = 0.0;
  table.f_samples.assign(rs.size(), 0.0);
  // Interpolated Psi' for the inner quadrature loops; direct evaluation of
  // the series/Bessel branches would dominate the build time.
  const RadialInterpolant psi_prime = RadialInterpolant::build(
      [d](double R) { return psi_residual_derivative(R, d); }, 1e-6 * split,
      split + epsilon + 1e-9, 3000);
  auto g_prime = [d](double R) { return bessel_radial_derivative(R, d); };

  for (std::size_t k = 1; k < rs.size(); ++k) {
    const double r = rs[k];
    if (r <= split) {
      const double newton = -enclosed[k] / (sphere_area(d) * std::pow(r, d - 1));
      double scale = 0.0;
      for (double probe : {0.5 * epsilon, epsilon, r, r + epsilon})
        scale = std::max(scale, std::abs(psi_prime(probe)));
      QuadratureResult res =
          detail::mollified_radial_component(r, spec, psi_prime, 3e-9, scale);
      if (!res.converged) { converged = false; worst = std::max(worst, res.error_estimate); }
      table.f_samples[k] = newton + res.value;
    } else {
      table.f_samples[k] = detail::mollified_radial_component_tensor(r, spec, g_prime, 24);
    }
  }

  if (!converged)
    throw KernelBuildError("build_kernel_table: quadrature did not converge", worst);

  table.finalize();
  return table;
}

}  // namespace sksim
