// Counter-based random streams (Philox-4x32-10) and Wiener increment paths.
//
// Every draw is a pure function of (seed, stream, step, purpose, index), so
// noise consumption is independent of scheduling and thread count. Stream 0
// is reserved for the common noise W; streams >= 1 carry the per-particle
// idiosyncratic noises B^i.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace sksim {

namespace philox {

inline constexpr uint32_t kMult0 = 0xD2511F53u;
inline constexpr uint32_t kMult1 = 0xCD9E8D57u;
inline constexpr uint32_t kWeyl0 = 0x9E3779B9u;
inline constexpr uint32_t kWeyl1 = 0xBB67AE85u;

inline std::array<uint32_t, 4> block(uint64_t seed, uint64_t step, uint32_t stream,
                                     uint32_t tag) {
  uint32_t c0 = static_cast<uint32_t>(step);
  uint32_t c1 = static_cast<uint32_t>(step >> 32);
  uint32_t c2 = stream;
  uint32_t c3 = tag;
  uint32_t k0 = static_cast<uint32_t>(seed);
  uint32_t k1 = static_cast<uint32_t>(seed >> 32);
  for (int round = 0; round < 10; ++round) {
    const uint64_t p0 = static_cast<uint64_t>(kMult0) * c0;
    const uint64_t p1 = static_cast<uint64_t>(kMult1) * c2;
    const uint32_t n0 = static_cast<uint32_t>(p1 >> 32) ^ c1 ^ k0;
    const uint32_t n1 = static_cast<uint32_t>(p1);
    const uint32_t n2 = static_cast<uint32_t>(p0 >> 32) ^ c3 ^ k1;
    const uint32_t n3 = static_cast<uint32_t>(p0);
    c0 = n0; c1 = n1; c2 = n2; c3 = n3;
    k0 += kWeyl0;
    k1 += kWeyl1;
  }
  return {c0, c1, c2, c3};
}

}  // namespace philox

// Draw-purpose tag, kept in the top byte of the counter tag word so that
// different uses of the same (stream, step) cell never collide.
enum class NoisePurpose : uint32_t {
  wiener = 0,
  init = 1,
  scratch = 2,
  bridge = 8,  // + refinement level
};

inline uint32_t purpose_tag(NoisePurpose p, uint32_t draw, uint32_t level = 0) {
  const uint32_t code = static_cast<uint32_t>(p) + level;
  if (draw >= (1u << 24)) throw std::invalid_argument("rng: draw index too large");
  return (code << 24) | draw;
}

// Two independent U(0,1) values strictly inside the open interval.
inline std::array<double, 2> uniform_pair(uint64_t seed, uint32_t stream, uint64_t step,
                                          NoisePurpose purpose, uint32_t pair_index,
                                          uint32_t level = 0) {
  const auto b = philox::block(seed, step, stream, purpose_tag(purpose, pair_index, level));
  const uint64_t xa = (static_cast<uint64_t>(b[0]) << 32) | b[1];
  const uint64_t xb = (static_cast<uint64_t>(b[2]) << 32) | b[3];
  constexpr double kScale = 0x1p-53;
  return {(static_cast<double>(xa >> 11) + 0.5) * kScale,
          (static_cast<double>(xb >> 11) + 0.5) * kScale};
}

// Standard normal pair via Box-Muller.
inline std::array<double, 2> gauss_pair(uint64_t seed, uint32_t stream, uint64_t step,
                                        NoisePurpose purpose, uint32_t pair_index,
                                        uint32_t level = 0) {
  const auto u = uniform_pair(seed, stream, step, purpose, pair_index, level);
  const double rad = std::sqrt(-2.0 * std::log(u[0]));
  const double ang = 2.0 * M_PI * u[1];
  return {rad * std::cos(ang), rad * std::sin(ang)};
}

// k-th standard normal of the (stream, step, purpose) cell.
inline double gaussian(uint64_t seed, uint32_t stream, uint64_t step, NoisePurpose purpose,
                       uint32_t k, uint32_t level = 0) {
  const auto g = gauss_pair(seed, stream, step, purpose, k / 2, level);
  return g[k % 2];
}

// Seeded increment path of a d'-dimensional Wiener process: n_steps rows of
// independent N(0, dt I) increments.
struct WienerPath {
  uint64_t seed_root = 0;
  uint32_t stream_id = 0;
  int n_steps = 0;
  double dt = 0.0;
  int dims = 0;
  uint32_t bridge_level = 0;  // number of dyadic refinements applied
  std::vector<double> increments;  // n_steps x dims, row-major

  const double* row(int k) const { return increments.data() + static_cast<std::size_t>(k) * dims; }
  double* row(int k) { return increments.data() + static_cast<std::size_t>(k) * dims; }
};

inline WienerPath sample_increments(uint64_t seed_root, uint32_t stream_id, int n_steps,
                                    double dt, int dims) {
  if (n_steps < 1) throw std::invalid_argument("sample_increments: n_steps must be >= 1");
  if (!(dt > 0.0)) throw std::invalid_argument("sample_increments: dt must be positive");
  if (dims < 1) throw std::invalid_argument("sample_increments: dims must be >= 1");
  WienerPath path{seed_root, stream_id, n_steps, dt, dims, 0, {}};
  path.increments.resize(static_cast<std::size_t>(n_steps) * dims);
  const double scale = std::sqrt(dt);
  for (int k = 0; k < n_steps; ++k) {
    double* r = path.row(k);
    for (int j = 0; j < dims; ++j)
      r[j] = scale * gaussian(seed_root, stream_id, static_cast<uint64_t>(k),
                              NoisePurpose::wiener, static_cast<uint32_t>(j));
  }
  return path;
}

namespace detail {

// Nudge b by ulps until fl(a + b) == target (attainable in all but
// astronomically unlikely cancellation corners; then keep the closest).
inline double match_sum(double a, double b, double target) {
  double s = a + b;
  for (int it = 0; it < 64 && s != target; ++it) {
    const double b2 = std::nextafter(b, s < target ? HUGE_VAL : -HUGE_VAL);
    const double s2 = a + b2;
    if (s2 != target && (s2 > target) != (s > target)) break;  // would jump across
    b = b2;
    s = s2;
  }
  return b;
}

}  // namespace detail

// Brownian-bridge refinement to step dt/2. Pairwise sums of the fine
// increments reproduce the coarse increments bit-exactly, so strong
// convergence studies see one common path across resolutions.
inline WienerPath refine_path(const WienerPath& coarse) {
  WienerPath fine{coarse.seed_root, coarse.stream_id, 2 * coarse.n_steps, 0.5 * coarse.dt,
                  coarse.dims, coarse.bridge_level + 1, {}};
  fine.increments.resize(static_cast<std::size_t>(fine.n_steps) * fine.dims);
  const double half_sd = 0.5 * std::sqrt(coarse.dt);
  for (int k = 0; k < coarse.n_steps; ++k) {
    const double* c = coarse.row(k);
    double* a = fine.row(2 * k);
    double* b = fine.row(2 * k + 1);
    for (int j = 0; j < coarse.dims; ++j) {
      const double mid_noise =
          half_sd * gaussian(coarse.seed_root, coarse.stream_id, static_cast<uint64_t>(k),
                             NoisePurpose::bridge, static_cast<uint32_t>(j),
                             coarse.bridge_level);
      const double d1 = 0.5 * c[j] + mid_noise;
      double d2 = c[j] - d1;
      d2 = detail::match_sum(d1, d2, c[j]);
      a[j] = d1;
      b[j] = d2;
    }
  }
  return fine;
}

}  // namespace sksim
