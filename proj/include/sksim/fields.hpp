// Diffusion coefficient fields nu_t(x), sigma_t(x) (d x d' matrices) and
// numerical validation of the standing assumptions: uniform ellipticity of
// nu nu^T, C^m bounds, and divergence-free sigma columns.
//
// Shipped kinds:
//   constant      nu = nu_scale I, sigma = sigma_scale I (truncated to d x d')
//   time_varying  spatially invariant, sigma(t) = sigma_scale (1 + mod sin(omega t)) I
//   shear         divergence-free spatial shear: sigma^{kk}(x) = A sin(pi m x_{k+1} / L)
//   tabulated     per-entry grids on the box, linearly interpolated
#pragma once

#include <array>
#include <cmath>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sksim/bessel.hpp"  // require_dim
#include "sksim/vec.hpp"

namespace sksim {

enum class FieldKind { constant, time_varying, shear, tabulated };

inline const char* field_kind_name(FieldKind k) {
  switch (k) {
    case FieldKind::constant: return "constant";
    case FieldKind::time_varying: return "time-varying";
    case FieldKind::shear: return "shear";
    case FieldKind::tabulated: return "tabulated";
  }
  return "?";
}

inline FieldKind field_kind_from_name(const std::string& s) {
  if (s == "constant") return FieldKind::constant;
  if (s == "time-varying") return FieldKind::time_varying;
  if (s == "shear") return FieldKind::shear;
  if (s == "tabulated") return FieldKind::tabulated;
  throw std::invalid_argument("unknown field kind: " + s);
}

// Scalar component grid for the tabulated kind (values on an n^d node grid
// over [-L, L)^d, periodic).
struct ComponentGrid {
  int n = 0;
  std::vector<double> values;  // n^d, row-major, index = x-major

  double sample(const double* x, int d, double L) const {
    const double h = 2.0 * L / n;
    auto node = [&](int ix, int iy, int iz) {
      ix = ((ix % n) + n) % n;
      iy = ((iy % n) + n) % n;
      iz = ((iz % n) + n) % n;
      return d == 2 ? values[static_cast<std::size_t>(ix) * n + iy]
                    : values[(static_cast<std::size_t>(ix) * n + iy) * n + iz];
    };
    double u[3] = {0, 0, 0};
    int i0[3] = {0, 0, 0};
    for (int a = 0; a < d; ++a) {
      const double s = (x[a] + L) / h;
      const double f = std::floor(s);
      i0[a] = static_cast<int>(f);
      u[a] = s - f;
    }
    if (d == 2) {
      return (1 - u[0]) * ((1 - u[1]) * node(i0[0], i0[1], 0) + u[1] * node(i0[0], i0[1] + 1, 0)) +
             u[0] * ((1 - u[1]) * node(i0[0] + 1, i0[1], 0) + u[1] * node(i0[0] + 1, i0[1] + 1, 0));
    }
    double acc = 0.0;
    for (int dx = 0; dx <= 1; ++dx)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dz = 0; dz <= 1; ++dz) {
          const double w = (dx ? u[0] : 1 - u[0]) * (dy ? u[1] : 1 - u[1]) * (dz ? u[2] : 1 - u[2]);
          acc += w * node(i0[0] + dx, i0[1] + dy, i0[2] + dz);
        }
    return acc;
  }
};

struct FieldSpec {
  FieldKind kind = FieldKind::constant;
  int dim = 2;
  int dprime = 2;
  double box_half_width = 8.0;
  double nu_scale = M_SQRT2;
  double sigma_scale = 0.0;
  double sigma_mod = 0.0;    // time_varying: relative modulation amplitude
  double sigma_omega = 0.0;  // time_varying: modulation frequency
  double shear_amplitude = 0.1;
  int shear_mode = 1;
  double horizon = 1.0;  // time range sampled by the validators
  // tabulated: entry (i,k) at index i * dprime + k; empty grid = zero entry
  std::vector<ComponentGrid> nu_entries, sigma_entries;
};

struct FieldValidationError : std::runtime_error {
  std::string assumption;     // which condition failed, e.g. "(iii) divergence-free"
  std::array<double, 4> worst_point;  // (t, x...)
  FieldValidationError(const std::string& msg, std::string which, std::array<double, 4> at)
      : std::runtime_error(msg), assumption(std::move(which)), worst_point(at) {}
};

class CoefficientField {
 public:
  explicit CoefficientField(FieldSpec spec) : spec_(std::move(spec)) {
    require_dim(spec_.dim);
    if (spec_.dprime < 1 || spec_.dprime > 3)
      throw std::invalid_argument("field: d' must be in {1,2,3}");
  }

  int dim() const { return spec_.dim; }
  int dprime() const { return spec_.dprime; }
  const FieldSpec& spec() const { return spec_; }

  // out is row-major d x d'.
  void nu(double t, const double* x, double* out) const { matrix(true, t, x, out); }
  void sigma(double t, const double* x, double* out) const { matrix(false, t, x, out); }

  // True when sigma does not depend on x, enabling the rigid common-noise
  // translation in the particle integrator.
  bool sigma_spatially_uniform() const {
    return spec_.kind == FieldKind::constant || spec_.kind == FieldKind::time_varying;
  }

  bool divergence_free_by_construction() const { return spec_.kind != FieldKind::tabulated; }

  double lambda_check = 0.0;   // cached ellipticity floor estimate
  double Lambda_check = 0.0;   // cached C^m bound estimate
  int validated_order = 0;     // m used during validation

 private:
  void matrix(bool is_nu, double t, const double* x, double* out) const {
    const int d = spec_.dim, dp = spec_.dprime;
    for (int i = 0; i < d * dp; ++i) out[i] = 0.0;
    switch (spec_.kind) {
      case FieldKind::constant: {
        const double c = is_nu ? spec_.nu_scale : spec_.sigma_scale;
        for (int i = 0; i < std::min(d, dp); ++i) out[i * dp + i] = c;
        return;
      }
      case FieldKind::time_varying: {
        double c = is_nu ? spec_.nu_scale : spec_.sigma_scale;
        if (!is_nu) c *= 1.0 + spec_.sigma_mod * std::sin(spec_.sigma_omega * t);
        for (int i = 0; i < std::min(d, dp); ++i) out[i * dp + i] = c;
        return;
      }
      case FieldKind::shear: {
        if (is_nu) {
          for (int i = 0; i < std::min(d, dp); ++i) out[i * dp + i] = spec_.nu_scale;
          return;
        }
        // Column k loads direction k with a profile depending only on the
        // next coordinate, so D_k sigma^{kk} vanishes identically.
        const double w = M_PI * spec_.shear_mode / spec_.box_half_width;
        for (int k = 0; k < std::min(d, dp); ++k)
          out[k * dp + k] = spec_.shear_amplitude * std::sin(w * x[(k + 1) % d]);
        return;
      }
      case FieldKind::tabulated: {
        const auto& entries = is_nu ? spec_.nu_entries : spec_.sigma_entries;
        for (int i = 0; i < d; ++i)
          for (int k = 0; k < dp; ++k) {
            const std::size_t idx = static_cast<std::size_t>(i) * dp + k;
            if (idx < entries.size() && entries[idx].n > 0)
              out[i * dp + k] = entries[idx].sample(x, d, spec_.box_half_width);
          }
        return;
      }
    }
  }

  FieldSpec spec_;
};

struct Assumption1Report {
  double lambda_est = 0.0;
  double Lambda_est = 0.0;
  double max_divergence = 0.0;
  bool pass = false;
  int order = 0;
  int samples = 0;
  std::array<double, 4> worst_ellipticity_point{};
  std::array<double, 4> worst_divergence_point{};
};

namespace detail {

inline double halton(uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  for (uint64_t n = i + 1; n > 0; n /= base) {
    f /= base;
    r += f * (n % base);
  }
  return r;
}

// Iterated central difference of axis-aligned order p with spacing h.
template <typename F>
inline double axis_derivative(const F& f, std::array<double, 3> x, int axis, int p, double h) {
  double acc = 0.0;
  double binom = 1.0;
  for (int i = 0; i <= p; ++i) {
    std::array<double, 3> y = x;
    y[axis] += (0.5 * p - i) * h;
    acc += ((i % 2) ? -binom : binom) * f(y);
    binom = binom * (p - i) / (i + 1.0);
  }
  return acc / std::pow(h, p);
}

}  // namespace detail

// Quasi-random scan of (t, x, xi) estimating the assumption constants.
// pass=false is data, not an error.
inline Assumption1Report assumption1_report(const CoefficientField& field, int order,
                                            int samples) {
  if (samples < 1000) throw std::invalid_argument("assumption1_report: samples must be >= 1e3");
  const int d = field.dim(), dp = field.dprime();
  const double L = field.spec().box_half_width;
  const double T = field.spec().horizon;
  constexpr double kStencil = 1e-3;

  Assumption1Report rep;
  rep.order = order;
  rep.samples = samples;
  rep.lambda_est = HUGE_VAL;

  double nu_mat[9], sig_mat[9];
  for (int s = 0; s < samples; ++s) {
    const double t = T * detail::halton(s, 2);
    std::array<double, 3> x{0, 0, 0};
    for (int a = 0; a < d; ++a)
      x[a] = L * (2.0 * detail::halton(s, a == 0 ? 3 : (a == 1 ? 5 : 7)) - 1.0);

    // (i) ellipticity of nu nu^T against a quasi-random unit direction
    field.nu(t, x.data(), nu_mat);
    double xi[3] = {0, 0, 0};
    {
      double norm2 = 0.0;
      for (int a = 0; a < d; ++a) {
        xi[a] = 2.0 * detail::halton(s, a == 0 ? 11 : (a == 1 ? 13 : 17)) - 1.0;
        norm2 += xi[a] * xi[a];
      }
      if (norm2 < 1e-12) { xi[0] = 1.0; norm2 = 1.0; }
      const double inv = 1.0 / std::sqrt(norm2);
      for (int a = 0; a < d; ++a) xi[a] *= inv;
    }
    double quad = 0.0;
    for (int k = 0; k < dp; ++k) {
      double proj = 0.0;
      for (int i = 0; i < d; ++i) proj += nu_mat[i * dp + k] * xi[i];
      quad += proj * proj;
    }
    if (quad < rep.lambda_est) {
      rep.lambda_est = quad;
      rep.worst_ellipticity_point = {t, x[0], x[1], x[2]};
    }

    // (iii) divergence of each sigma column
    field.sigma(t, x.data(), sig_mat);
    for (int k = 0; k < dp; ++k) {
      double div = 0.0;
      for (int i = 0; i < d; ++i) {
        auto entry = [&](std::array<double, 3> y) {
          double m[9];
          field.sigma(t, y.data(), m);
          return m[i * dp + k];
        };
        div += detail::axis_derivative(entry, x, i, 1, kStencil);
      }
      if (std::abs(div) > rep.max_divergence) {
        rep.max_divergence = std::abs(div);
        rep.worst_divergence_point = {t, x[0], x[1], x[2]};
      }
    }

    // (ii) C^m bound: entries plus axis-aligned derivatives up to the order
    if (s % 16 == 0) {  // derivative probing is the expensive part
      double cm = 0.0;
      for (int i = 0; i < d; ++i)
        for (int k = 0; k < dp; ++k)
          for (int which = 0; which < 2; ++which) {
            auto entry = [&](std::array<double, 3> y) {
              double m[9];
              if (which == 0)
                field.nu(t, y.data(), m);
              else
                field.sigma(t, y.data(), m);
              return m[i * dp + k];
            };
            cm += std::abs(entry(x));
            for (int a = 0; a < d; ++a)
              for (int p = 1; p <= order; ++p)
                cm = std::max(cm, std::abs(detail::axis_derivative(entry, x, a, p, kStencil)));
          }
      rep.Lambda_est = std::max(rep.Lambda_est, cm);
    }
  }

  rep.pass = rep.lambda_est > 0.0 && rep.max_divergence <= 1e-8 && std::isfinite(rep.Lambda_est);
  return rep;
}

// Build and validate a field; rejects with the violated assumption label.
inline CoefficientField make_field(const FieldSpec& spec, int order = 3, int samples = 2000) {
  CoefficientField field(spec);
  Assumption1Report rep = assumption1_report(field, order, samples);
  if (rep.lambda_est <= 0.0) {
    std::ostringstream os;
    os << "field rejected: Assumption 1(i) ellipticity fails, min xi'(nu nu')xi = "
       << rep.lambda_est;
    throw FieldValidationError(os.str(), "(i) ellipticity", rep.worst_ellipticity_point);
  }
  if (rep.max_divergence > 1e-8) {
    std::ostringstream os;
    os << "field rejected: Assumption 1(iii) divergence-free fails, max |div sigma^k| = "
       << rep.max_divergence;
    throw FieldValidationError(os.str(), "(iii) divergence-free", rep.worst_divergence_point);
  }
  if (!std::isfinite(rep.Lambda_est)) {
    throw FieldValidationError("field rejected: Assumption 1(ii) C^m bound not finite",
                               "(ii) boundedness", {});
  }
  field.lambda_check = rep.lambda_est;
  field.Lambda_check = rep.Lambda_est;
  field.validated_order = order;
  return field;
}

}  // namespace sksim
