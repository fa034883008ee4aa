// Finite-volume / pseudo-spectral solver for the stochastic aggregation-
// diffusion equation on the periodic box, driven by a given common-noise
// path:
//
//   d rho = 1/2 sum_ij D_ij(rho a_ij) dt - div(rho u) dt
//           - sum_i D_i(rho sum_k sigma^{ik} dW^k),     a = nu nu' + sigma sigma'
//
// with u = chi grad((I - Lap)^{-1} rho)            (exact mode)
//      u = chi grad(G_eps * rho)                   (regularized mode).
//
// Discretization: the spatially uniform part of the diffusion is handled
// semi-implicitly in Fourier space; the variable part, the aggregation flux
// (MUSCL upwind with minmod limiter) and the noise transport (centered, with
// sigma evaluated at cell faces) are explicit conservative flux differences,
// so mass is conserved to roundoff every step. Negative values are clipped
// and the field renormalized, both recorded.
#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <stdexcept>
#include <vector>

#include "sksim/fft.hpp"
#include "sksim/fields.hpp"
#include "sksim/grid.hpp"
#include "sksim/kernel_table.hpp"
#include "sksim/rng.hpp"

namespace sksim {

enum class DriftMode { exact, regularized };

struct NormTraceRow {
  double t = 0.0;
  double l1_mass = 0.0;
  double l4_norm = 0.0;
  double w14_seminorm = 0.0;
  double c_sup = 0.0;
  double clipped_mass = 0.0;
  double renorm_factor = 1.0;
};

struct NormTrace {
  std::vector<NormTraceRow> rows;
  double max_step_mass_drift = 0.0;  // pre-renormalization, worst step
  double max_clipped_mass = 0.0;
  bool blew_up = false;
  double blowup_time = 0.0;
};

namespace detail {

inline double minmod(double a, double b) {
  if (a * b <= 0.0) return 0.0;
  return std::abs(a) < std::abs(b) ? a : b;
}

}  // namespace detail

template <int D>
class SpdeSolver {
 public:
  SpdeSolver(GridSpec<D> grid, const CoefficientField* field, double chi, DriftMode mode,
             const KernelTable* table = nullptr)
      : grid_(grid), field_(field), chi_(chi), mode_(mode), fft_(grid) {
    if (field->dim() != D) throw std::invalid_argument("spde: field dimension mismatch");
    if (mode == DriftMode::regularized) {
      if (!table || table->dim != D)
        throw std::invalid_argument("spde: regularized mode needs a matching kernel table");
      if (table->epsilon < 2.0 * grid.dx())
        throw std::invalid_argument("spde: epsilon < 2 dx, kernel unresolvable on the grid");
      build_kernel_spectrum(*table);
    }
    drift_ = VectorField<D>(grid);
    scratch_.assign(grid.size(), 0.0);
    incr_.assign(grid.size(), 0.0);
    flux_.assign(grid.size(), 0.0);
    gmat_.assign(grid.size(), 0.0);
    rho_hat_.resize(fft_.spectrum().size());
  }

  const GridSpec<D>& grid() const { return grid_; }
  DriftMode mode() const { return mode_; }
  double chi() const { return chi_; }

  // c = (I - Lap)^{-1} rho, spectral.
  DensityField<D> resolvent(const DensityField<D>& rho) {
    fft_.forward(rho.values);
    fft_.for_each_mode([](const std::array<double, D>& k, std::complex<double>& v) {
      double k2 = 0.0;
      for (int a = 0; a < D; ++a) k2 += k[a] * k[a];
      v /= 1.0 + k2;
    });
    DensityField<D> c(grid_, rho.t);
    fft_.backward(c.values);
    return c;
  }

  // u = chi grad c (exact) or chi grad(G_eps * rho) (regularized), into drift_.
  const VectorField<D>& compute_drift(const DensityField<D>& rho) {
    fft_.forward(rho.values);
    rho_hat_ = fft_.spectrum();
    const double kmax = M_PI / grid_.half_width * (grid_.n / 2);
    for (int a = 0; a < D; ++a) {
      auto& spec = fft_.spectrum();
      if (mode_ == DriftMode::exact) {
        std::size_t idx = 0;
        fft_.for_each_mode([&](const std::array<double, D>& k, std::complex<double>& v) {
          double k2 = 0.0;
          for (int b = 0; b < D; ++b) k2 += k[b] * k[b];
          const double ka = (std::abs(k[a]) >= kmax) ? 0.0 : k[a];  // drop Nyquist derivative
          v = rho_hat_[idx] * std::complex<double>(0.0, chi_ * ka / (1.0 + k2));
          ++idx;
        });
      } else {
        for (std::size_t i = 0; i < spec.size(); ++i)
          spec[i] = rho_hat_[i] * kernel_hat_[a][i] * chi_;
      }
      fft_.backward(drift_.comp[a]);
    }
    return drift_;
  }

  const VectorField<D>& last_drift() const { return drift_; }

  // One Euler-Maruyama step along the given common-noise increment (d' wide).
  // Returns false when the field went non-finite (blow-up flag, not a crash).
  bool step(DensityField<D>& rho, const double* dW, double dt) {
    const double t = rho.t;
    const double h = grid_.dx();
    const std::size_t size = grid_.size();
    const int dp = field_->dprime();

    compute_drift(rho);
    std::fill(incr_.begin(), incr_.end(), 0.0);

    // aggregation flux, one axis at a time
    for (int a = 0; a < D; ++a) {
      muscl_flux(rho.values, drift_.comp[a], a);
      accumulate_divergence(a, dt / h);
    }

    // noise transport: flux_i = rho_face * sum_k sigma^{ik}(face) dW^k
    if (has_noise(t)) {
      for (int a = 0; a < D; ++a) {
        noise_flux(rho.values, t, dW, dp, a);
        accumulate_divergence(a, 1.0 / h);
      }
    }

    // spatially varying diffusion remainder, explicit flux form
    if (!uniform_coefficients()) {
      for (int a = 0; a < D; ++a) {
        variable_diffusion_flux(rho.values, t, a);
        accumulate_divergence(a, -dt / h);
      }
    }

    const double mass_before = rho.mass();
    for (std::size_t i = 0; i < size; ++i) scratch_[i] = rho.values[i] + incr_[i];

    // semi-implicit uniform diffusion in Fourier space
    double a0[9];
    uniform_diffusion_matrix(t, a0);
    fft_.forward(scratch_);
    fft_.for_each_mode([&](const std::array<double, D>& k, std::complex<double>& v) {
      double quad = 0.0;
      for (int i = 0; i < D; ++i)
        for (int j = 0; j < D; ++j) quad += k[i] * a0[i * D + j] * k[j];
      v /= 1.0 + 0.5 * dt * quad;
    });
    fft_.backward(rho.values);

    const double mass_after = rho.mass();
    last_mass_drift_ = std::abs(mass_after - mass_before);

    // clip negatives, renormalize, record
    double clipped = 0.0;
    for (double& v : rho.values) {
      if (v < 0.0) {
        clipped -= v;
        v = 0.0;
      }
    }
    last_clipped_mass_ = clipped * grid_.cell_volume();
    const double mass_now = rho.mass();
    last_renorm_factor_ = mass_before / mass_now;
    if (!std::isfinite(last_renorm_factor_)) return false;
    rho.scale(last_renorm_factor_);

    rho.t = t + dt;
    for (double v : rho.values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  NormTraceRow trace_row(const DensityField<D>& rho) {
    NormTraceRow row;
    row.t = rho.t;
    row.l1_mass = rho.mass();
    row.l4_norm = rho.lp_norm(4.0);
    row.w14_seminorm = gradient_l4(rho);
    DensityField<D> c = resolvent(rho);
    row.c_sup = c.max_value();
    row.clipped_mass = last_clipped_mass_;
    row.renorm_factor = last_renorm_factor_;
    return row;
  }

  double last_mass_drift() const { return last_mass_drift_; }

 private:
  void build_kernel_spectrum(const KernelTable& table) {
    const int n = grid_.n;
    const double h = grid_.dx();
    std::vector<double> buf(grid_.size());
    for (int a = 0; a < D; ++a) {
      for (std::size_t idx = 0; idx < grid_.size(); ++idx) {
        std::array<int, D> mi{};
        std::size_t rest = idx;
        for (int b = D - 1; b >= 0; --b) {
          mi[b] = static_cast<int>(rest % n);
          rest /= n;
        }
        Vec<D> z;
        for (int b = 0; b < D; ++b) {
          const int f = (mi[b] <= n / 2) ? mi[b] : mi[b] - n;
          z[b] = f * h;
        }
        buf[idx] = eval_force<D>(table, z)[a];
      }
      fft_.forward(buf);
      kernel_hat_[a] = fft_.spectrum();
      const double w = grid_.cell_volume();  // convolution quadrature weight
      for (auto& v : kernel_hat_[a]) v *= w;
    }
  }

  bool has_noise(double t) const {
    double s[9];
    Vec<D> origin = zero_vec<D>();
    field_->sigma(t, origin.data(), s);
    if (!field_->sigma_spatially_uniform()) return true;
    for (int i = 0; i < D * field_->dprime(); ++i)
      if (s[i] != 0.0) return true;
    return false;
  }

  bool uniform_coefficients() const {
    return field_->sigma_spatially_uniform() &&
           field_->spec().kind != FieldKind::tabulated;
  }

  // a0 = nu nu' + sigma sigma' for the uniform kinds; nu nu' only for shear
  // (its sigma varies in space and goes through the explicit path); zero for
  // tabulated fields.
  void uniform_diffusion_matrix(double t, double* a0) const {
    for (int i = 0; i < D * D; ++i) a0[i] = 0.0;
    const FieldKind kind = field_->spec().kind;
    if (kind == FieldKind::tabulated) return;
    const int dp = field_->dprime();
    double nu[9], sg[9];
    Vec<D> origin = zero_vec<D>();
    field_->nu(t, origin.data(), nu);
    field_->sigma(t, origin.data(), sg);
    const bool include_sigma = uniform_coefficients();
    for (int i = 0; i < D; ++i)
      for (int j = 0; j < D; ++j) {
        double s = 0.0;
        for (int k = 0; k < dp; ++k) {
          s += nu[i * dp + k] * nu[j * dp + k];
          if (include_sigma) s += sg[i * dp + k] * sg[j * dp + k];
        }
        a0[i * D + j] = s;
      }
  }

  // --- index helpers -------------------------------------------------------
  std::size_t shift_index(std::size_t idx, int axis, int offset) const {
    const int n = grid_.n;
    // strides: axis D-1 is contiguous
    std::size_t stride = 1;
    for (int b = D - 1; b > axis; --b) stride *= static_cast<std::size_t>(n);
    const std::size_t block = stride * static_cast<std::size_t>(n);
    const std::size_t base = idx - idx % block + (idx % block) % stride;
    const int pos = static_cast<int>((idx % block) / stride);
    int q = (pos + offset) % n;
    if (q < 0) q += n;
    return base + static_cast<std::size_t>(q) * stride;
  }

  // flux_[idx] = flux through the face between idx and idx+e_axis.
  void muscl_flux(const std::vector<double>& rho, const std::vector<double>& u, int axis) {
    const std::size_t size = grid_.size();
    for (std::size_t m = 0; m < size; ++m) {
      const std::size_t mp = shift_index(m, axis, 1);
      const double uf = 0.5 * (u[m] + u[mp]);
      double rf;
      if (uf >= 0.0) {
        const std::size_t mm = shift_index(m, axis, -1);
        rf = rho[m] + 0.5 * detail::minmod(rho[m] - rho[mm], rho[mp] - rho[m]);
      } else {
        const std::size_t mpp = shift_index(m, axis, 2);
        rf = rho[mp] - 0.5 * detail::minmod(rho[mp] - rho[m], rho[mpp] - rho[mp]);
      }
      flux_[m] = uf * rf;
    }
  }

  void noise_flux(const std::vector<double>& rho, double t, const double* dW, int dp,
                  int axis) {
    const std::size_t size = grid_.size();
    const bool uniform = field_->sigma_spatially_uniform();
    double sg[9];
    double w_uniform = 0.0;
    if (uniform) {
      Vec<D> origin = zero_vec<D>();
      field_->sigma(t, origin.data(), sg);
      for (int k = 0; k < dp; ++k) w_uniform += sg[axis * dp + k] * dW[k];
      if (w_uniform == 0.0) {
        std::fill(flux_.begin(), flux_.end(), 0.0);
        return;
      }
    }
    const int n = grid_.n;
    const double h = grid_.dx();
    for (std::size_t m = 0; m < size; ++m) {
      const std::size_t mp = shift_index(m, axis, 1);
      double w = w_uniform;
      if (!uniform) {
        // face midpoint coordinates
        Vec<D> x;
        std::size_t rest = m;
        std::array<int, D> mi{};
        for (int b = D - 1; b >= 0; --b) {
          mi[b] = static_cast<int>(rest % n);
          rest /= n;
        }
        for (int b = 0; b < D; ++b) x[b] = grid_.coord(mi[b]);
        x[axis] += 0.5 * h;
        field_->sigma(t, x.data(), sg);
        w = 0.0;
        for (int k = 0; k < dp; ++k) w += sg[axis * dp + k] * dW[k];
      }
      flux_[m] = w * 0.5 * (rho[m] + rho[mp]);
    }
  }

  // F_axis(face) = 1/2 sum_j d_j(rho a1_{axis j}) at the face, a1 the
  // spatially varying diffusion remainder (sigma sigma' for shear, the full
  // a for tabulated fields).
  void variable_diffusion_flux(const std::vector<double>& rho, double t, int axis) {
    const std::size_t size = grid_.size();
    const int n = grid_.n;
    const int dp = field_->dprime();
    const double h = grid_.dx();
    const bool full = field_->spec().kind == FieldKind::tabulated;
    std::fill(flux_.begin(), flux_.end(), 0.0);
    for (int j = 0; j < D; ++j) {
      // gmat_ = rho * a1_{axis j} at the nodes
      for (std::size_t m = 0; m < size; ++m) {
        Vec<D> x;
        std::size_t rest = m;
        std::array<int, D> mi{};
        for (int b = D - 1; b >= 0; --b) {
          mi[b] = static_cast<int>(rest % n);
          rest /= n;
        }
        for (int b = 0; b < D; ++b) x[b] = grid_.coord(mi[b]);
        double sg[9], nu[9];
        field_->sigma(t, x.data(), sg);
        double aij = 0.0;
        for (int k = 0; k < dp; ++k) aij += sg[axis * dp + k] * sg[j * dp + k];
        if (full) {
          field_->nu(t, x.data(), nu);
          for (int k = 0; k < dp; ++k) aij += nu[axis * dp + k] * nu[j * dp + k];
        }
        gmat_[m] = rho[m] * aij;
      }
      if (j == axis) {
        for (std::size_t m = 0; m < size; ++m) {
          const std::size_t mp = shift_index(m, axis, 1);
          flux_[m] += 0.5 * (gmat_[mp] - gmat_[m]) / h;
        }
      } else {
        for (std::size_t m = 0; m < size; ++m) {
          const std::size_t jp = shift_index(m, j, 1), jm = shift_index(m, j, -1);
          scratch_[m] = (gmat_[jp] - gmat_[jm]) / (2.0 * h);
        }
        for (std::size_t m = 0; m < size; ++m) {
          const std::size_t mp = shift_index(m, axis, 1);
          flux_[m] += 0.5 * 0.5 * (scratch_[m] + scratch_[mp]);
        }
      }
    }
  }

  // incr -= coeff * (flux[m] - flux[m - e_axis])
  void accumulate_divergence(int axis, double coeff) {
    const std::size_t size = grid_.size();
    for (std::size_t m = 0; m < size; ++m) {
      const std::size_t mm = shift_index(m, axis, -1);
      incr_[m] -= coeff * (flux_[m] - flux_[mm]);
    }
  }

  double gradient_l4(const DensityField<D>& rho) {
    const std::size_t size = grid_.size();
    const double inv2h = 1.0 / (2.0 * grid_.dx());
    double acc = 0.0;
    for (std::size_t m = 0; m < size; ++m) {
      double g2 = 0.0;
      for (int a = 0; a < D; ++a) {
        const double g =
            (rho.values[shift_index(m, a, 1)] - rho.values[shift_index(m, a, -1)]) * inv2h;
        g2 += g * g;
      }
      acc += g2 * g2;
    }
    return std::pow(acc * grid_.cell_volume(), 0.25);
  }

  GridSpec<D> grid_;
  const CoefficientField* field_;
  double chi_;
  DriftMode mode_;
  Fft<D> fft_;
  std::array<std::vector<std::complex<double>>, D> kernel_hat_;
  std::vector<std::complex<double>> rho_hat_;
  VectorField<D> drift_;
  std::vector<double> scratch_, incr_, flux_, gmat_;
  double last_clipped_mass_ = 0.0;
  double last_renorm_factor_ = 1.0;
  double last_mass_drift_ = 0.0;
};

// Convenience wrappers used by tests and by callers that do not keep a
// solver alive.
template <int D>
inline DensityField<D> resolvent_solve(const DensityField<D>& rho) {
  FieldSpec fs;
  fs.dim = D;
  fs.dprime = D;
  fs.box_half_width = rho.grid.half_width;
  CoefficientField dummy(fs);
  SpdeSolver<D> solver(rho.grid, &dummy, 0.0, DriftMode::exact);
  return solver.resolvent(rho);
}

template <int D>
inline VectorField<D> drift_field(const DensityField<D>& rho, DriftMode mode, double chi,
                                  const KernelTable* table = nullptr) {
  FieldSpec fs;
  fs.dim = D;
  fs.dprime = D;
  fs.box_half_width = rho.grid.half_width;
  CoefficientField dummy(fs);
  SpdeSolver<D> solver(rho.grid, &dummy, chi, mode, table);
  return solver.compute_drift(rho);
}

struct SpdePathResult {
  NormTrace trace;
  std::vector<int> snapshot_steps;
};

// Iterate spde steps along a Wiener path; NormTrace recorded every
// trace_stride steps, snapshots handed to the observer.
template <int D, typename SnapshotObserver>
inline NormTrace solve_path(SpdeSolver<D>& solver, DensityField<D>& rho,
                            const WienerPath& w, double T, double dt,
                            SnapshotObserver&& on_snapshot, int snapshot_stride,
                            int trace_stride = 1) {
  const int n_steps = static_cast<int>(std::lround(T / dt));
  if (std::abs(n_steps * dt - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("solve_path: T/dt must be integral");
  if (w.n_steps < n_steps) throw std::invalid_argument("solve_path: Wiener path too short");

  NormTrace trace;
  trace.rows.push_back(solver.trace_row(rho));
  if (snapshot_stride > 0) on_snapshot(rho, 0);
  for (int k = 0; k < n_steps; ++k) {
    const bool ok = solver.step(rho, w.row(k), dt);
    trace.max_step_mass_drift = std::max(trace.max_step_mass_drift, solver.last_mass_drift());
    if (!ok || !std::isfinite(rho.lp_norm(4.0))) {
      trace.blew_up = true;
      trace.blowup_time = rho.t;
      return trace;
    }
    if ((k + 1) % trace_stride == 0 || k + 1 == n_steps) {
      NormTraceRow row = solver.trace_row(rho);
      trace.max_clipped_mass = std::max(trace.max_clipped_mass, row.clipped_mass);
      if (row.l4_norm > 1e6) {
        trace.blew_up = true;
        trace.blowup_time = rho.t;
        trace.rows.push_back(row);
        return trace;
      }
      trace.rows.push_back(row);
    }
    if (snapshot_stride > 0 && ((k + 1) % snapshot_stride == 0 || k + 1 == n_steps))
      on_snapshot(rho, k + 1);
  }
  return trace;
}

// sup over shared sample times of ||rho_eps - rho||_4 on the grid.
template <int D>
inline double regularization_gap(const std::vector<DensityField<D>>& rho_eps,
                                 const std::vector<DensityField<D>>& rho) {
  if (rho_eps.size() != rho.size())
    throw std::invalid_argument("regularization_gap: path lengths differ");
  double sup = 0.0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (!(rho_eps[i].grid == rho[i].grid))
      throw std::invalid_argument("regularization_gap: grid mismatch");
    double acc = 0.0;
    for (std::size_t m = 0; m < rho[i].values.size(); ++m) {
      const double d = rho_eps[i].values[m] - rho[i].values[m];
      acc += d * d * d * d;
    }
    sup = std::max(sup, std::pow(acc * rho[i].grid.cell_volume(), 0.25));
  }
  return sup;
}

}  // namespace sksim
