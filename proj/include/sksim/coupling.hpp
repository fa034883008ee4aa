// Synchronous coupling of the interacting particle system X with the
// mean-field reference dynamics Y driven by the regularized SPDE density:
//
//   dY^i = chi grad(G_eps * rho_eps)(Y^i) dt + nu_t(Y^i) dB^i + sigma_t(Y^i) dW,
//
// where X and Y consume identical (B^i, W) increments step-for-step and the
// SPDE solutions follow the same W. Error functionals estimate the mean-field
// convergence quantities.
#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sksim/particles.hpp"
#include "sksim/spde.hpp"

namespace sksim {

// Y-side Euler-Maruyama step: drift is the grid drift field (already
// including chi) interpolated at each particle, noise identical in form to
// the X-side em_step.
template <int D>
inline void mean_field_step(ParticleEnsemble<D>& ens, const VectorField<D>* drift_grid,
                            const CoefficientField& field, const double* dW,
                            const double* dB, double dt, bool cubic_interp = false) {
  const int N = ens.size();
  const int dp = field.dprime();
  const bool rigid = field.sigma_spatially_uniform();
  const double t = ens.t;

  double sg_uniform[9];
  if (rigid) {
    Vec<D> origin = zero_vec<D>();
    field.sigma(t, origin.data(), sg_uniform);
  }

  for (int i = 0; i < N; ++i) {
    const Vec<D> x_abs = ens.absolute(i);
    Vec<D> yd = zero_vec<D>();
    if (drift_grid) {
      for (int a = 0; a < D; ++a)
        yd[a] = cubic_interp
                    ? sample_cubic<D>(drift_grid->grid, drift_grid->comp[a], x_abs)
                    : sample_linear<D>(drift_grid->grid, drift_grid->comp[a], x_abs);
    }
    double nu_mat[9];
    field.nu(t, x_abs.data(), nu_mat);
    Vec<D> dx = dt * yd;
    const double* dB_i = dB + static_cast<std::size_t>(i) * dp;
    for (int a = 0; a < D; ++a)
      for (int k = 0; k < dp; ++k) dx[a] += nu_mat[a * dp + k] * dB_i[k];
    if (!rigid) {
      double sg[9];
      field.sigma(t, x_abs.data(), sg);
      for (int a = 0; a < D; ++a)
        for (int k = 0; k < dp; ++k) dx[a] += sg[a * dp + k] * dW[k];
    }
    for (int a = 0; a < D; ++a) {
      ens.pos[i][a] = ens.box.wrap_coord(ens.pos[i][a] + dx[a]);
      if (!std::isfinite(ens.pos[i][a])) throw IntegrationFailure(i, t);
    }
  }
  if (rigid) {
    for (int a = 0; a < D; ++a)
      for (int k = 0; k < dp; ++k) ens.common_shift[a] += sg_uniform[a * dp + k] * dW[k];
  }
  ens.t = t + dt;
}

// (1/N) sum_i |X^i - Y^i|^2 with minimum-image distances. The estimator is
// meaningless without synchronous coupling, so seed or stream mismatch is a
// refusal, not a number.
template <int D>
inline double coupling_error(const ParticleEnsemble<D>& x, const ParticleEnsemble<D>& y) {
  if (x.seed_root != y.seed_root || x.stream_ids != y.stream_ids)
    throw std::invalid_argument("coupling_error: ensembles are not synchronously coupled");
  if (x.size() != y.size() || std::abs(x.t - y.t) > 1e-12)
    throw std::invalid_argument("coupling_error: ensemble shape or time mismatch");
  double acc = 0.0;
  for (int i = 0; i < x.size(); ++i)
    acc += x.box.min_image_dist2(x.box.wrap(x.pos[i] + x.common_shift),
                                 y.box.wrap(y.pos[i] + y.common_shift));
  return acc / x.size();
}

// |<rho^{eps,N}, phi> - <rho_t, phi>|^2: empirical measure vs grid quadrature.
template <int D, typename Phi>
inline double weak_error(const ParticleEnsemble<D>& ens, const DensityField<D>& rho,
                         const Phi& phi) {
  const double particle_side = test_functional(ens, phi);
  double grid_side = 0.0;
  const GridSpec<D>& g = rho.grid;
  const int n = g.n;
  std::array<int, D> idx{};
  for (std::size_t m = 0; m < rho.values.size(); ++m) {
    std::size_t rest = m;
    for (int b = D - 1; b >= 0; --b) {
      idx[b] = static_cast<int>(rest % n);
      rest /= n;
    }
    Vec<D> x;
    for (int b = 0; b < D; ++b) x[b] = g.coord(idx[b]);
    grid_side += phi(x) * rho.values[m];
  }
  grid_side *= g.cell_volume();
  const double diff = particle_side - grid_side;
  return diff * diff;
}

// Pools conditionally-i.i.d. mean-field ensembles that share one W path and
// compares their KDE against the RSPDE density: the numerical face of the
// conditional-density property.
template <int D>
inline double conditional_density_check(const std::vector<const ParticleEnsemble<D>*>& replicas,
                                        const DensityField<D>& rho_eps, double bandwidth) {
  if (replicas.size() < 10)
    throw std::invalid_argument("conditional_density_check: need >= 10 replicas");
  std::size_t pooled = 0;
  for (const auto* r : replicas) pooled += static_cast<std::size_t>(r->size());
  if (pooled < 10000)
    throw std::invalid_argument("conditional_density_check: pooled count must be >= 1e4");
  for (const auto* r : replicas) {
    if (r->seed_root != replicas.front()->seed_root)
      throw std::invalid_argument("conditional_density_check: replicas do not share W");
    if (std::abs(r->t - rho_eps.t) > 1e-9)
      throw std::invalid_argument("conditional_density_check: time mismatch");
  }
  ParticleEnsemble<D> pool;
  pool.box = replicas.front()->box;
  pool.t = replicas.front()->t;
  pool.seed_root = replicas.front()->seed_root;
  uint32_t next_stream = 1;
  for (const auto* r : replicas)
    for (int i = 0; i < r->size(); ++i) {
      pool.pos.push_back(r->absolute(i));
      pool.stream_ids.push_back(next_stream++);
    }
  DensityField<D> kde = kde_density(pool, bandwidth, rho_eps.grid);
  return l1_distance(kde, rho_eps);
}

// Shipped weak-convergence test functions, all C^1 with compact support on
// the box: a boundary window with vanishing value and derivative at +-L
// multiplies smooth profiles.
template <int D>
struct TestFunction {
  std::string name;
  std::function<double(const Vec<D>&)> f;
};

template <int D>
inline std::vector<TestFunction<D>> shipped_test_functions(double L) {
  auto window = [L](const Vec<D>& x) {
    double w = 1.0;
    for (int a = 0; a < D; ++a) {
      const double c = std::cos(0.5 * M_PI * x[a] / L);
      w *= c * c;
    }
    return w;
  };
  std::vector<TestFunction<D>> out;
  out.push_back({"gauss_bump", [window, L](const Vec<D>& x) {
                   const double s = 0.25 * L;
                   return std::exp(-0.5 * norm2<D>(x) / (s * s)) * window(x);
                 }});
  out.push_back({"coord_window", [window](const Vec<D>& x) { return x[0] * window(x); }});
  out.push_back({"radial_window", [window, L](const Vec<D>& x) {
                   return norm2<D>(x) / (L * L) * window(x);
                 }});
  return out;
}

// One full coupled run: X (interacting), Y (mean-field), rho_eps (RSPDE) and
// rho (SPDE) along one W path; errors sampled at a fixed stride.
struct CoupledTimeSeries {
  std::vector<double> times;
  std::vector<double> coupling_err;               // (1/N) sum |X-Y|^2
  std::vector<std::vector<double>> weak_err;      // [phi][time]
  std::vector<double> reg_gap;                    // ||rho_eps - rho||_4
  std::vector<double> density_l1;                 // X-cloud KDE vs rho_eps
  double sup_coupling_err = 0.0;
  double sup_reg_gap = 0.0;
  std::vector<double> sup_weak_err;
  bool blew_up = false;
  double blowup_time = 0.0;
};

template <int D>
struct CoupledRunParams {
  int N = 256;
  double chi = 1.0;
  double T = 0.5;
  double dt = 2.5e-4;
  int error_stride = 10;
  int density_checkpoints = 0;  // sample the KDE diagnostic this many times
  bool cubic_interp = false;
  uint64_t seed = 1;
  uint32_t stream_offset = 1;
  double kde_bandwidth = 0.0;  // <= 0: Silverman
  bool solve_exact_spde = true;
};

template <int D>
inline CoupledTimeSeries run_coupled(const CoupledRunParams<D>& p,
                                     const InitialDensity<D>& init,
                                     const CoefficientField& field,
                                     const KernelTable& table, const GridSpec<D>& grid) {
  PeriodicBox<D> box{grid.half_width};
  ParticleEnsemble<D> X =
      sample_initial<D>(init, p.N, p.seed, box, table.epsilon, p.stream_offset);
  ParticleEnsemble<D> Y = X;

  DensityField<D> rho_eps(grid);
  {
    const int n = grid.n;
    std::array<int, D> idx{};
    for (std::size_t m = 0; m < rho_eps.values.size(); ++m) {
      std::size_t rest = m;
      for (int b = D - 1; b >= 0; --b) {
        idx[b] = static_cast<int>(rest % n);
        rest /= n;
      }
      Vec<D> x;
      for (int b = 0; b < D; ++b) x[b] = grid.coord(idx[b]);
      rho_eps.values[m] = init.density(x);
    }
    rho_eps.scale(1.0 / rho_eps.mass());
  }
  DensityField<D> rho = rho_eps;

  SpdeSolver<D> solver_eps(grid, &field, p.chi, DriftMode::regularized, &table);
  std::unique_ptr<SpdeSolver<D>> solver_exact;
  if (p.solve_exact_spde)
    solver_exact = std::make_unique<SpdeSolver<D>>(grid, &field, p.chi, DriftMode::exact);

  const int n_steps = static_cast<int>(std::lround(p.T / p.dt));
  if (std::abs(n_steps * p.dt - p.T) > 1e-9 * std::max(1.0, p.T))
    throw std::invalid_argument("run_coupled: T/dt must be integral");
  const int dp = field.dprime();
  WienerPath w = sample_increments(p.seed, 0, n_steps, p.dt, dp);

  auto phis = shipped_test_functions<D>(grid.half_width);
  CoupledTimeSeries out;
  out.weak_err.resize(phis.size());
  out.sup_weak_err.assign(phis.size(), 0.0);

  const int density_stride =
      p.density_checkpoints > 0 ? std::max(1, n_steps / p.density_checkpoints) : 0;

  auto record = [&](int step) {
    out.times.push_back(X.t);
    const double ce = coupling_error(X, Y);
    out.coupling_err.push_back(ce);
    out.sup_coupling_err = std::max(out.sup_coupling_err, ce);
    for (std::size_t q = 0; q < phis.size(); ++q) {
      const double we =
          p.solve_exact_spde ? weak_error(X, rho, phis[q].f) : weak_error(X, rho_eps, phis[q].f);
      out.weak_err[q].push_back(we);
      out.sup_weak_err[q] = std::max(out.sup_weak_err[q], we);
    }
    double gap = 0.0;
    if (p.solve_exact_spde) {
      double acc = 0.0;
      for (std::size_t m = 0; m < rho.values.size(); ++m) {
        const double d = rho_eps.values[m] - rho.values[m];
        acc += d * d * d * d;
      }
      gap = std::pow(acc * grid.cell_volume(), 0.25);
    }
    out.reg_gap.push_back(gap);
    out.sup_reg_gap = std::max(out.sup_reg_gap, gap);
    if (density_stride > 0 && (step % density_stride == 0 || step == n_steps)) {
      DensityField<D> kde = kde_density(X, p.kde_bandwidth, grid);
      out.density_l1.push_back(l1_distance(kde, rho_eps));
    }
  };

  record(0);
  std::vector<double> dB;
  for (int k = 0; k < n_steps; ++k) {
    draw_idiosyncratic(X, dp, static_cast<uint64_t>(k), p.dt, dB);
    em_step(X, table, field, w.row(k), dB.data(), p.dt, p.chi);
    if (!solver_eps.step(rho_eps, w.row(k), p.dt)) {
      out.blew_up = true;
      out.blowup_time = rho_eps.t;
      return out;
    }
    // solver_eps.last_drift() is chi grad(G_eps * rho_eps) at the step's
    // start time, exactly what Y consumes over [t, t+dt].
    mean_field_step(Y, p.chi != 0.0 ? &solver_eps.last_drift() : nullptr, field, w.row(k),
                    dB.data(), p.dt, p.cubic_interp);
    if (solver_exact && !solver_exact->step(rho, w.row(k), p.dt)) {
      out.blew_up = true;
      out.blowup_time = rho.t;
      return out;
    }
    if ((k + 1) % p.error_stride == 0 || k + 1 == n_steps) record(k + 1);
  }
  return out;
}

}  // namespace sksim
