// Periodic n^D node grid over the box [-L, L]^D, scalar density fields on it,
// and grid interpolation used to evaluate drift fields at particle positions.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "sksim/vec.hpp"

namespace sksim {

template <int D>
struct GridSpec {
  int n = 0;
  double half_width = 8.0;

  double dx() const { return 2.0 * half_width / n; }
  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < D; ++a) s *= static_cast<std::size_t>(n);
    return s;
  }
  double cell_volume() const { return std::pow(dx(), D); }
  double coord(int i) const { return -half_width + i * dx(); }

  bool operator==(const GridSpec& o) const {
    return n == o.n && half_width == o.half_width;
  }
};

template <int D>
inline std::size_t grid_index(const GridSpec<D>& g, const std::array<int, D>& i) {
  std::size_t idx = 0;
  for (int a = 0; a < D; ++a) idx = idx * g.n + static_cast<std::size_t>(i[a]);
  return idx;
}

template <int D>
struct DensityField {
  GridSpec<D> grid;
  double t = 0.0;
  std::vector<double> values;

  DensityField() = default;
  explicit DensityField(GridSpec<D> g, double time = 0.0)
      : grid(g), t(time), values(g.size(), 0.0) {}

  double mass() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s * grid.cell_volume();
  }

  double lp_norm(double p) const {
    double s = 0.0;
    for (double v : values) s += std::pow(std::abs(v), p);
    return std::pow(s * grid.cell_volume(), 1.0 / p);
  }

  double min_value() const { return *std::min_element(values.begin(), values.end()); }
  double max_value() const { return *std::max_element(values.begin(), values.end()); }

  void scale(double c) {
    for (double& v : values) v *= c;
  }
};

template <int D>
struct VectorField {
  GridSpec<D> grid;
  std::array<std::vector<double>, D> comp;

  VectorField() = default;
  explicit VectorField(GridSpec<D> g) : grid(g) {
    for (int a = 0; a < D; ++a) comp[a].assign(g.size(), 0.0);
  }
};

namespace detail {

template <int D>
inline void locate(const GridSpec<D>& g, const Vec<D>& x, std::array<int, D>& i0,
                   std::array<double, D>& frac) {
  const double h = g.dx();
  for (int a = 0; a < D; ++a) {
    const double s = (x[a] + g.half_width) / h;
    double f = std::floor(s);
    i0[a] = static_cast<int>(f) % g.n;
    if (i0[a] < 0) i0[a] += g.n;
    frac[a] = s - f;
  }
}

inline int wrap_index(int i, int n) {
  i %= n;
  return i < 0 ? i + n : i;
}

}  // namespace detail

// Bilinear / trilinear sample of a periodic nodal field.
template <int D>
inline double sample_linear(const GridSpec<D>& g, const std::vector<double>& v, const Vec<D>& x) {
  std::array<int, D> i0;
  std::array<double, D> u;
  detail::locate(g, x, i0, u);
  if constexpr (D == 2) {
    const int n = g.n;
    const int x0 = i0[0], x1 = (i0[0] + 1) % n, y0 = i0[1], y1 = (i0[1] + 1) % n;
    return (1 - u[0]) * ((1 - u[1]) * v[static_cast<std::size_t>(x0) * n + y0] +
                         u[1] * v[static_cast<std::size_t>(x0) * n + y1]) +
           u[0] * ((1 - u[1]) * v[static_cast<std::size_t>(x1) * n + y0] +
                   u[1] * v[static_cast<std::size_t>(x1) * n + y1]);
  } else {
    const int n = g.n;
    double acc = 0.0;
    for (int dx = 0; dx <= 1; ++dx)
      for (int dy = 0; dy <= 1; ++dy)
        for (int dz = 0; dz <= 1; ++dz) {
          const double w =
              (dx ? u[0] : 1 - u[0]) * (dy ? u[1] : 1 - u[1]) * (dz ? u[2] : 1 - u[2]);
          const std::size_t idx =
              (static_cast<std::size_t>((i0[0] + dx) % n) * n + (i0[1] + dy) % n) * n +
              (i0[2] + dz) % n;
          acc += w * v[idx];
        }
    return acc;
  }
}

namespace detail {

inline double catmull_rom(double pm1, double p0, double p1, double p2, double u) {
  return p0 + 0.5 * u * (p1 - pm1 +
         u * (2.0 * pm1 - 5.0 * p0 + 4.0 * p1 - p2 + u * (3.0 * (p0 - p1) + p2 - pm1)));
}

}  // namespace detail

// Separable Catmull-Rom cubic sample (the optional higher-order drift interp).
template <int D>
inline double sample_cubic(const GridSpec<D>& g, const std::vector<double>& v, const Vec<D>& x) {
  std::array<int, D> i0;
  std::array<double, D> u;
  detail::locate(g, x, i0, u);
  const int n = g.n;
  if constexpr (D == 2) {
    double rows[4];
    for (int a = -1; a <= 2; ++a) {
      const int ix = detail::wrap_index(i0[0] + a, n);
      double p[4];
      for (int b = -1; b <= 2; ++b)
        p[b + 1] = v[static_cast<std::size_t>(ix) * n + detail::wrap_index(i0[1] + b, n)];
      rows[a + 1] = detail::catmull_rom(p[0], p[1], p[2], p[3], u[1]);
    }
    return detail::catmull_rom(rows[0], rows[1], rows[2], rows[3], u[0]);
  } else {
    double planes[4];
    for (int a = -1; a <= 2; ++a) {
      const int ix = detail::wrap_index(i0[0] + a, n);
      double rows[4];
      for (int b = -1; b <= 2; ++b) {
        const int iy = detail::wrap_index(i0[1] + b, n);
        double p[4];
        for (int c = -1; c <= 2; ++c) {
          const int iz = detail::wrap_index(i0[2] + c, n);
          p[c + 1] = v[(static_cast<std::size_t>(ix) * n + iy) * n + iz];
        }
        rows[b + 1] = detail::catmull_rom(p[0], p[1], p[2], p[3], u[2]);
      }
      planes[a + 1] = detail::catmull_rom(rows[0], rows[1], rows[2], rows[3], u[1]);
    }
    return detail::catmull_rom(planes[0], planes[1], planes[2], planes[3], u[0]);
  }
}

// L1 distance between two fields on the same grid.
template <int D>
inline double l1_distance(const DensityField<D>& a, const DensityField<D>& b) {
  if (!(a.grid == b.grid)) throw std::invalid_argument("l1_distance: grid mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += std::abs(a.values[i] - b.values[i]);
  return s * a.grid.cell_volume();
}

// Relative L2 distance ||a-b||_2 / ||b||_2.
template <int D>
inline double relative_l2(const DensityField<D>& a, const DensityField<D>& b) {
  if (!(a.grid == b.grid)) throw std::invalid_argument("relative_l2: grid mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    num += d * d;
    den += b.values[i] * b.values[i];
  }
  return std::sqrt(num / den);
}

}  // namespace sksim
