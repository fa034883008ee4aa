// Small fixed-dimension vector helpers and the periodic simulation box.
#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace sksim {

template <int D>
using Vec = std::array<double, D>;

template <int D>
inline Vec<D> zero_vec() {
  Vec<D> v{};
  v.fill(0.0);
  return v;
}

template <int D>
inline double dot(const Vec<D>& a, const Vec<D>& b) {
  double s = 0.0;
  for (int i = 0; i < D; ++i) s += a[i] * b[i];
  return s;
}

template <int D>
inline double norm2(const Vec<D>& a) {
  return dot(a, a);
}

template <int D>
inline double norm(const Vec<D>& a) {
  return std::sqrt(norm2(a));
}

template <int D>
inline Vec<D> operator+(Vec<D> a, const Vec<D>& b) {
  for (int i = 0; i < D; ++i) a[i] += b[i];
  return a;
}

template <int D>
inline Vec<D> operator-(Vec<D> a, const Vec<D>& b) {
  for (int i = 0; i < D; ++i) a[i] -= b[i];
  return a;
}

template <int D>
inline Vec<D> operator*(double c, Vec<D> a) {
  for (int i = 0; i < D; ++i) a[i] *= c;
  return a;
}

// Periodic box [-L, L]^D, period 2L per axis.
template <int D>
struct PeriodicBox {
  double half_width = 8.0;  // L

  double period() const { return 2.0 * half_width; }

  // Fold a coordinate into [-L, L).
  double wrap_coord(double x) const {
    const double p = period();
    double y = x - p * std::floor((x + half_width) / p);
    // floor rounding can land exactly on +L for x barely below the seam
    if (y >= half_width) y -= p;
    return y;
  }

  Vec<D> wrap(Vec<D> x) const {
    for (int i = 0; i < D; ++i) x[i] = wrap_coord(x[i]);
    return x;
  }

  // Nearest-image displacement, each component in [-L, L).
  Vec<D> min_image(Vec<D> dx) const {
    const double p = period();
    for (int i = 0; i < D; ++i) {
      dx[i] -= p * std::nearbyint(dx[i] / p);
    }
    return dx;
  }

  double min_image_dist2(const Vec<D>& a, const Vec<D>& b) const {
    return norm2<D>(min_image(a - b));
  }
};

}  // namespace sksim
