// Radial bump mollifier psi_eps(x) = c_psi eps^-d exp(-1/(1 - |x/eps|^2)),
// supported in B(0, eps), unit mass. The normalization c_psi is computed
// once per dimension by quadrature.
#pragma once

#include <cmath>
#include <stdexcept>

#include "sksim/quadrature.hpp"
#include "sksim/vec.hpp"

namespace sksim {

// exp(-1/(1-s^2)) for |s| < 1, zero outside (the unit bump before scaling).
inline double unit_bump(double s) {
  const double s2 = s * s;
  if (s2 >= 1.0) return 0.0;
  return std::exp(-1.0 / (1.0 - s2));
}

// Surface area of the unit sphere in R^d (d = 2: circle length 2 pi).
inline double sphere_area(int d) {
  return d == 2 ? kTwoPi : kFourPi;
}

// 1 / int_{B(0,1)} exp(-1/(1-|y|^2)) dy, cached per dimension.
inline double bump_normalization(int d) {
  require_dim(d);
  static const double c2 = [] {
    auto f = [](double s) { return unit_bump(s) * s; };
    return 1.0 / (kTwoPi * adaptive_integrate(f, 0.0, 1.0, 1e-14).value);
  }();
  static const double c3 = [] {
    auto f = [](double s) { return unit_bump(s) * s * s; };
    return 1.0 / (kFourPi * adaptive_integrate(f, 0.0, 1.0, 1e-14).value);
  }();
  return d == 2 ? c2 : c3;
}

struct MollifierSpec {
  double epsilon = 0.1;
  double normalization = 0.0;  // c_psi
  int dim = 2;
};

inline MollifierSpec make_mollifier(double epsilon, int d) {
  require_dim(d);
  if (!(epsilon > 0.0)) throw std::invalid_argument("mollifier: epsilon must be positive");
  return {epsilon, bump_normalization(d), d};
}

inline double mollifier_radial(double r, const MollifierSpec& spec) {
  const double s = r / spec.epsilon;
  return spec.normalization * std::pow(spec.epsilon, -spec.dim) * unit_bump(s);
}

template <int D>
inline double mollifier_value(const Vec<D>& x, const MollifierSpec& spec) {
  return mollifier_radial(norm<D>(x), spec);
}

// Numerical mass of psi_eps over B(0, eps); equals 1 up to quadrature error.
inline double mollifier_mass(const MollifierSpec& spec) {
  const int d = spec.dim;
  auto f = [&](double r) { return mollifier_radial(r, spec) * std::pow(r, d - 1); };
  return sphere_area(d) * adaptive_integrate(f, 0.0, spec.epsilon, 1e-13).value;
}

// Mass of psi_eps inside radius r (enclosed mass, saturates at 1).
inline double mollifier_enclosed_mass(double r, const MollifierSpec& spec) {
  if (r <= 0.0) return 0.0;
  const double upper = std::min(r, spec.epsilon);
  const int d = spec.dim;
  auto f = [&](double s) { return mollifier_radial(s, spec) * std::pow(s, d - 1); };
  return sphere_area(d) * adaptive_integrate(f, 0.0, upper, 1e-12).value;
}

}  // namespace sksim
