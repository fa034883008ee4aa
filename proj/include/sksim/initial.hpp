// Initial particle laws rho_0: isotropic Gaussians, mixtures, and densities
// tabulated on the grid (sampled by rejection).
#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sksim/grid.hpp"
#include "sksim/rng.hpp"
#include "sksim/vec.hpp"

namespace sksim {

enum class InitialKind { gaussian, gaussian_mixture, grid_tabulated };

template <int D>
struct GaussianComponent {
  Vec<D> mean = zero_vec<D>();
  Vec<D> sigma;  // per-axis standard deviations
  double weight = 1.0;
};

template <int D>
struct InitialDensity {
  InitialKind kind = InitialKind::gaussian;
  std::vector<GaussianComponent<D>> components;
  DensityField<D> table;  // grid_tabulated only
  double table_max = 0.0;

  static InitialDensity isotropic_gaussian(const Vec<D>& mean, double sigma) {
    InitialDensity d;
    GaussianComponent<D> c;
    c.mean = mean;
    c.sigma.fill(sigma);
    d.components = {c};
    return d;
  }

  static InitialDensity mixture(std::vector<GaussianComponent<D>> comps) {
    double total = 0.0;
    for (const auto& c : comps) {
      if (c.weight < 0.0) throw std::invalid_argument("initial density: negative weight");
      total += c.weight;
    }
    if (total <= 0.0) throw std::invalid_argument("initial density: weights sum to zero");
    for (auto& c : comps) c.weight /= total;
    InitialDensity d;
    d.kind = InitialKind::gaussian_mixture;
    d.components = std::move(comps);
    return d;
  }

  static InitialDensity tabulated(DensityField<D> field) {
    InitialDensity d;
    d.kind = InitialKind::grid_tabulated;
    if (field.min_value() < 0.0)
      throw std::invalid_argument("initial density: tabulated values must be nonnegative");
    const double mass = field.mass();
    if (!(mass > 0.0)) throw std::invalid_argument("initial density: zero mass");
    field.scale(1.0 / mass);
    d.table_max = field.max_value();
    d.table = std::move(field);
    return d;
  }

  double density(const Vec<D>& x) const {
    if (kind == InitialKind::grid_tabulated) return sample_linear(table.grid, table.values, x);
    double acc = 0.0;
    for (const auto& c : components) {
      double q = 0.0, norm = 1.0;
      for (int a = 0; a < D; ++a) {
        const double z = (x[a] - c.mean[a]) / c.sigma[a];
        q += z * z;
        norm *= c.sigma[a] * std::sqrt(2.0 * M_PI);
      }
      acc += c.weight * std::exp(-0.5 * q) / norm;
    }
    return acc;
  }
};

struct SamplingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Draw the position of the particle owning `stream` from rho_0. All draws
// use the init purpose so they never collide with the dynamics noise.
template <int D>
inline Vec<D> draw_initial_position(const InitialDensity<D>& density, uint64_t seed,
                                    uint32_t stream, const PeriodicBox<D>& box) {
  if (density.kind != InitialKind::grid_tabulated) {
    std::size_t comp_idx = 0;
    if (density.components.size() > 1) {
      const double u = uniform_pair(seed, stream, 0, NoisePurpose::init, 0)[0];
      double acc = 0.0;
      for (std::size_t c = 0; c < density.components.size(); ++c) {
        acc += density.components[c].weight;
        if (u <= acc || c + 1 == density.components.size()) {
          comp_idx = c;
          break;
        }
      }
    }
    const auto& comp = density.components[comp_idx];
    Vec<D> x;
    for (int a = 0; a < D; ++a) {
      const double g = gaussian(seed, stream, 1, NoisePurpose::init, static_cast<uint32_t>(a));
      x[a] = comp.mean[a] + comp.sigma[a] * g;
    }
    return box.wrap(x);
  }

  // rejection against the tabulated grid, envelope = table_max
  const double L = density.table.grid.half_width;
  for (uint64_t attempt = 0; attempt < 1000000; ++attempt) {
    Vec<D> x;
    double u_accept = 0.0;
    for (int a = 0; a <= D; ++a) {
      const double u =
          uniform_pair(seed, stream, 2 + attempt, NoisePurpose::init, static_cast<uint32_t>(a / 2))
              [a % 2];
      if (a < D)
        x[a] = L * (2.0 * u - 1.0);
      else
        u_accept = u;
    }
    if (u_accept * density.table_max <= density.density(x)) return x;
  }
  throw SamplingError("sample_initial: rejection sampling exhausted (density too peaked)");
}

}  // namespace sksim
