// Euler-Maruyama integrator for the regularized interacting particle system
//
//   dX^i = chi/(N-1) sum_{j != i} grad G_eps(X^i - X^j) dt
//          + nu_t(X^i) dB^i + sigma_t(X^i) dW,
//
// with an O(N)-per-step cell-list force sweep exploiting the kernel cutoff,
// plus empirical-measure utilities (test functionals, KDE).
//
// Determinism contract: noise is indexed by (stream_id, step) and force sums
// run in stream-id order inside a fixed geometric cell sweep, so permuting
// particles together with their streams permutes trajectories bit-exactly,
// independent of thread count.
//
// When sigma is spatially uniform the common-noise term is a rigid
// translation; it is accumulated in a shared shift vector instead of being
// added to every particle, which keeps inter-particle displacements exactly
// invariant under the common noise.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "sksim/fields.hpp"
#include "sksim/grid.hpp"
#include "sksim/initial.hpp"
#include "sksim/kernel_table.hpp"
#include "sksim/rng.hpp"
#include "sksim/vec.hpp"

namespace sksim {

struct IntegrationFailure : std::runtime_error {
  int particle;
  double time;
  IntegrationFailure(int i, double t)
      : std::runtime_error("non-finite particle state"), particle(i), time(t) {}
};

template <int D>
struct ParticleEnsemble {
  std::vector<Vec<D>> pos;            // shift-free positions, folded into the box
  std::vector<uint32_t> stream_ids;   // distinct noise stream per particle
  Vec<D> common_shift = zero_vec<D>();  // accumulated rigid common-noise translation
  double t = 0.0;
  double epsilon = 0.0;
  uint64_t seed_root = 0;
  PeriodicBox<D> box;

  int size() const { return static_cast<int>(pos.size()); }

  Vec<D> absolute(int i) const { return box.wrap(pos[i] + common_shift); }

  void validate() const {
    if (size() < 2) throw std::invalid_argument("ensemble: N must be >= 2");
    if (stream_ids.size() != pos.size())
      throw std::invalid_argument("ensemble: stream id count mismatch");
    std::vector<uint32_t> ids = stream_ids;
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end())
      throw std::invalid_argument("ensemble: stream ids must be distinct");
    for (int i = 0; i < size(); ++i)
      for (int a = 0; a < D; ++a)
        if (!std::isfinite(pos[i][a])) throw IntegrationFailure(i, t);
  }
};

// i.i.d. initial ensemble; particle i draws from stream i+1 (stream 0 is W).
template <int D>
inline ParticleEnsemble<D> sample_initial(const InitialDensity<D>& density, int N,
                                          uint64_t seed, const PeriodicBox<D>& box,
                                          double epsilon = 0.0,
                                          uint32_t stream_offset = 1) {
  if (N < 2) throw std::invalid_argument("sample_initial: N must be >= 2");
  ParticleEnsemble<D> ens;
  ens.box = box;
  ens.seed_root = seed;
  ens.epsilon = epsilon;
  ens.pos.resize(N);
  ens.stream_ids.resize(N);
  for (int i = 0; i < N; ++i) {
    ens.stream_ids[i] = stream_offset + static_cast<uint32_t>(i);
    ens.pos[i] = draw_initial_position(density, seed, ens.stream_ids[i], box);
  }
  ens.validate();
  return ens;
}

// Cell list over the periodic box with contents sorted by stream id, so that
// force accumulation order is a function of geometry and streams only.
template <int D>
class CellList {
 public:
  CellList(const ParticleEnsemble<D>& ens, double cutoff) : cutoff_(cutoff) {
    const double period = ens.box.period();
    n_cells_ = std::max(1, static_cast<int>(std::floor(period / cutoff)));
    usable_ = n_cells_ >= 4;
    if (!usable_) return;
    edge_ = period / n_cells_;
    std::size_t total = 1;
    for (int a = 0; a < D; ++a) total *= static_cast<std::size_t>(n_cells_);
    cells_.assign(total, {});
    for (int i = 0; i < ens.size(); ++i) cells_[cell_of(ens, i)].push_back(i);
    for (auto& cell : cells_)
      std::sort(cell.begin(), cell.end(), [&](int a, int b) {
        return ens.stream_ids[a] < ens.stream_ids[b];
      });
  }

  bool usable() const { return usable_; }

  // Visit neighbors of particle i (3^D cell block) in deterministic order.
  template <typename Visit>
  void for_neighbors(const ParticleEnsemble<D>& ens, int i, const Visit& visit) const {
    std::array<int, D> home = cell_index(ens, i);
    std::array<int, D> off{};
    off.fill(-1);
    while (true) {
      std::array<int, D> c;
      for (int a = 0; a < D; ++a) {
        c[a] = (home[a] + off[a]) % n_cells_;
        if (c[a] < 0) c[a] += n_cells_;
      }
      std::size_t idx = 0;
      for (int a = 0; a < D; ++a) idx = idx * n_cells_ + static_cast<std::size_t>(c[a]);
      for (int j : cells_[idx])
        if (j != i) visit(j);
      int a = D - 1;
      while (a >= 0 && off[a] == 1) off[a--] = -1;
      if (a < 0) break;
      ++off[a];
    }
  }

 private:
  std::size_t cell_of(const ParticleEnsemble<D>& ens, int i) const {
    std::array<int, D> c = cell_index(ens, i);
    std::size_t idx = 0;
    for (int a = 0; a < D; ++a) idx = idx * n_cells_ + static_cast<std::size_t>(c[a]);
    return idx;
  }

  std::array<int, D> cell_index(const ParticleEnsemble<D>& ens, int i) const {
    std::array<int, D> c;
    for (int a = 0; a < D; ++a) {
      const double s = (ens.box.wrap_coord(ens.pos[i][a]) + ens.box.half_width) / edge_;
      int q = static_cast<int>(s);
      if (q >= n_cells_) q = n_cells_ - 1;
      if (q < 0) q = 0;
      c[a] = q;
    }
    return c;
  }

  double cutoff_, edge_ = 0.0;
  int n_cells_ = 0;
  bool usable_ = false;
  std::vector<std::vector<int>> cells_;
};

// Interaction cutoff: the table cutoff capped at L/2 so the cell sweep stays
// valid under the minimum-image convention.
template <int D>
inline double interaction_cutoff(const KernelTable& table, const PeriodicBox<D>& box) {
  return std::min(table.r_cut, 0.5 * box.half_width);
}

// drift[i] = chi/(N-1) sum_{j != i, |x_i - x_j| < r_int} F(|x_i-x_j|) unit_ij
template <int D>
inline std::vector<Vec<D>> pairwise_drift(const ParticleEnsemble<D>& ens,
                                          const KernelTable& table, double chi,
                                          bool force_brute = false) {
  if (table.dim != D) throw std::invalid_argument("pairwise_drift: dimension mismatch");
  const int N = ens.size();
  const double r_int = interaction_cutoff(table, ens.box);
  const double r_int2 = r_int * r_int;
  const double scale = chi / (N - 1);
  std::vector<Vec<D>> drift(N, zero_vec<D>());
  if (chi == 0.0) return drift;

  CellList<D> cells(ens, r_int);
  const bool use_cells = cells.usable() && !force_brute;

  std::vector<int> order;
  if (!use_cells) {
    order.resize(N);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return ens.stream_ids[a] < ens.stream_ids[b];
    });
  }

  auto accumulate = [&](int i, int j, Vec<D>& acc) {
    const Vec<D> dx = ens.box.min_image(ens.pos[i] - ens.pos[j]);
    const double r2 = norm2<D>(dx);
    if (r2 >= r_int2 || r2 == 0.0) return;
    const Vec<D> f = eval_force<D>(table, dx);
    for (int a = 0; a < D; ++a) acc[a] += f[a];
  };

#pragma omp parallel for schedule(static)
  for (int i = 0; i < N; ++i) {
    Vec<D> acc = zero_vec<D>();
    if (use_cells) {
      cells.for_neighbors(ens, i, [&](int j) { accumulate(i, j, acc); });
    } else {
      for (int j : order)
        if (j != i) accumulate(i, j, acc);
    }
    drift[i] = scale * acc;
  }
  return drift;
}

// One Euler-Maruyama step. dW has d' entries (common noise), dB is N x d'
// row-major (idiosyncratic).
template <int D>
inline void em_step(ParticleEnsemble<D>& ens, const KernelTable& table,
                    const CoefficientField& field, const double* dW, const double* dB,
                    double dt, double chi) {
  const int N = ens.size();
  const int dp = field.dprime();
  const std::vector<Vec<D>> drift = pairwise_drift(ens, table, chi);
  const bool rigid = field.sigma_spatially_uniform();
  const double t = ens.t;

  double sg_uniform[9];
  if (rigid) {
    Vec<D> origin = zero_vec<D>();
    field.sigma(t, origin.data(), sg_uniform);
  }

  for (int i = 0; i < N; ++i) {
    const Vec<D> x_abs = ens.absolute(i);
    double nu_mat[9];
    field.nu(t, x_abs.data(), nu_mat);
    Vec<D> dx = dt * drift[i];
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

// Fill the N x d' idiosyncratic increment block for one step.
template <int D>
inline void draw_idiosyncratic(const ParticleEnsemble<D>& ens, int dp, uint64_t step,
                               double dt, std::vector<double>& dB) {
  const int N = ens.size();
  dB.resize(static_cast<std::size_t>(N) * dp);
  const double s = std::sqrt(dt);
#pragma omp parallel for schedule(static)
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < dp; ++k)
      dB[static_cast<std::size_t>(i) * dp + k] =
          s * gaussian(ens.seed_root, ens.stream_ids[i], step, NoisePurpose::wiener,
                       static_cast<uint32_t>(k));
}

// <rho^{eps,N}, phi> = (1/N) sum phi(X^i)
template <int D, typename Phi>
inline double test_functional(const ParticleEnsemble<D>& ens, const Phi& phi) {
  double acc = 0.0;
  for (int i = 0; i < ens.size(); ++i) acc += phi(ens.absolute(i));
  return acc / ens.size();
}

template <int D>
struct ParticleSeriesRow {
  double t = 0.0;
  Vec<D> mean;
  Vec<D> second_moment;
  double min_pair_distance = 0.0;
  double mass_outside_radius = 0.0;  // fraction beyond 0.75 L
};

template <int D>
inline ParticleSeriesRow<D> ensemble_moments(const ParticleEnsemble<D>& ens) {
  ParticleSeriesRow<D> row;
  row.t = ens.t;
  row.mean = zero_vec<D>();
  row.second_moment = zero_vec<D>();
  const int N = ens.size();
  int outside = 0;
  const double r_diag = 0.75 * ens.box.half_width;
  for (int i = 0; i < N; ++i) {
    const Vec<D> x = ens.absolute(i);
    for (int a = 0; a < D; ++a) {
      row.mean[a] += x[a];
      row.second_moment[a] += x[a] * x[a];
    }
    if (norm<D>(x) > r_diag) ++outside;
  }
  for (int a = 0; a < D; ++a) {
    row.mean[a] /= N;
    row.second_moment[a] /= N;
  }
  row.mass_outside_radius = static_cast<double>(outside) / N;
  double min2 = HUGE_VAL;
  for (int i = 0; i < N; ++i)
    for (int j = i + 1; j < N; ++j)
      min2 = std::min(min2, ens.box.min_image_dist2(ens.pos[i], ens.pos[j]));
  row.min_pair_distance = std::sqrt(min2);
  return row;
}

struct ObserverStrides {
  int series = 10;
  int snapshot = 0;  // 0 = no snapshots
};

// Time loop: ceil(T/dt) em steps with observer callbacks at the strides.
// on_series(row), on_snapshot(ens, step).
template <int D, typename SeriesFn, typename SnapshotFn>
inline void integrate(ParticleEnsemble<D>& ens, const KernelTable& table,
                      const CoefficientField& field, const WienerPath& w, double T,
                      double dt, double chi, const ObserverStrides& strides,
                      SeriesFn&& on_series, SnapshotFn&& on_snapshot) {
  const int n_steps = static_cast<int>(std::lround(T / dt));
  if (std::abs(n_steps * dt - T) > 1e-9 * std::max(1.0, T))
    throw std::invalid_argument("integrate: T/dt must be integral");
  if (w.n_steps < n_steps) throw std::invalid_argument("integrate: Wiener path too short");
  const int dp = field.dprime();

  on_series(ensemble_moments(ens));
  if (strides.snapshot > 0) on_snapshot(ens, 0);
  std::vector<double> dB;
  for (int k = 0; k < n_steps; ++k) {
    draw_idiosyncratic(ens, dp, static_cast<uint64_t>(k), dt, dB);
    em_step(ens, table, field, w.row(k), dB.data(), dt, chi);
    const bool last = (k + 1 == n_steps);
    if ((k + 1) % strides.series == 0 || last) on_series(ensemble_moments(ens));
    if (strides.snapshot > 0 && ((k + 1) % strides.snapshot == 0 || last))
      on_snapshot(ens, k + 1);
  }
}

// Gaussian-kernel density estimate on the grid, periodic, normalized to unit
// mass. Bandwidth h per axis; pass h <= 0 for Silverman's rule.
template <int D>
inline DensityField<D> kde_density(const ParticleEnsemble<D>& ens, double bandwidth,
                                   const GridSpec<D>& grid) {
  const int N = ens.size();
  Vec<D> h;
  if (bandwidth > 0.0) {
    h.fill(bandwidth);
  } else {
    // Silverman per axis
    Vec<D> mean = zero_vec<D>(), var = zero_vec<D>();
    for (int i = 0; i < N; ++i) {
      const Vec<D> x = ens.absolute(i);
      for (int a = 0; a < D; ++a) mean[a] += x[a];
    }
    for (int a = 0; a < D; ++a) mean[a] /= N;
    for (int i = 0; i < N; ++i) {
      const Vec<D> x = ens.absolute(i);
      for (int a = 0; a < D; ++a) var[a] += (x[a] - mean[a]) * (x[a] - mean[a]);
    }
    const double rate = std::pow(4.0 / ((D + 2.0) * N), 1.0 / (D + 4.0));
    for (int a = 0; a < D; ++a) h[a] = std::sqrt(var[a] / (N - 1)) * rate;
  }

  DensityField<D> out(grid, ens.t);
  const double dx = grid.dx();
  const int n = grid.n;
  for (int i = 0; i < N; ++i) {
    const Vec<D> x = ens.absolute(i);
    std::array<int, D> lo, hi;
    for (int a = 0; a < D; ++a) {
      const int reach = static_cast<int>(std::ceil(5.0 * h[a] / dx)) + 1;
      const int center = static_cast<int>(std::floor((x[a] + grid.half_width) / dx));
      lo[a] = center - reach;
      hi[a] = std::min(center + reach, center - reach + n - 1);
    }
    std::array<int, D> idx = lo;
    while (true) {
      double q = 0.0;
      for (int a = 0; a < D; ++a) {
        double dxa = grid.coord(((idx[a] % n) + n) % n) - x[a];
        const double p = ens.box.period();
        dxa -= p * std::nearbyint(dxa / p);
        q += (dxa / h[a]) * (dxa / h[a]);
      }
      if (q < 50.0) {
        std::array<int, D> wrapped;
        for (int a = 0; a < D; ++a) wrapped[a] = ((idx[a] % n) + n) % n;
        out.values[grid_index(grid, wrapped)] += std::exp(-0.5 * q);
      }
      int a = D - 1;
      while (a >= 0 && idx[a] == hi[a]) { idx[a] = lo[a]; --a; }
      if (a < 0) break;
      ++idx[a];
    }
  }
  const double mass = out.mass();
  if (mass > 0.0) out.scale(1.0 / mass);
  return out;
}

}  // namespace sksim
