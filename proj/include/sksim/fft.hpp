// Thin FFTW wrapper: real-to-complex transforms on the periodic grid with
// cached plans. Plans use FFTW_ESTIMATE so results are reproducible across
// runs, and planning is serialized behind a global mutex (FFTW requirement).
#pragma once

#include <fftw3.h>

#include <complex>
#include <mutex>
#include <vector>

#include "sksim/grid.hpp"

namespace sksim {

inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

template <int D>
class Fft {
 public:
  explicit Fft(GridSpec<D> grid) : grid_(grid) {
    const int n = grid.n;
    real_.assign(grid.size(), 0.0);
    std::size_t csize = 1;
    for (int a = 0; a + 1 < D; ++a) csize *= static_cast<std::size_t>(n);
    csize *= static_cast<std::size_t>(n / 2 + 1);
    cplx_.assign(csize, {0.0, 0.0});
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    auto* c = reinterpret_cast<fftw_complex*>(cplx_.data());
    if constexpr (D == 2) {
      fwd_ = fftw_plan_dft_r2c_2d(n, n, real_.data(), c, FFTW_ESTIMATE);
      bwd_ = fftw_plan_dft_c2r_2d(n, n, c, real_.data(), FFTW_ESTIMATE);
    } else {
      fwd_ = fftw_plan_dft_r2c_3d(n, n, n, real_.data(), c, FFTW_ESTIMATE);
      bwd_ = fftw_plan_dft_c2r_3d(n, n, n, c, real_.data(), FFTW_ESTIMATE);
    }
  }

  ~Fft() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
  }

  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  const GridSpec<D>& grid() const { return grid_; }
  std::vector<std::complex<double>>& spectrum() { return cplx_; }

  void forward(const std::vector<double>& in) {
    real_ = in;
    fftw_execute(fwd_);
  }

  // c2r destroys the spectrum; normalization 1/n^D applied here.
  void backward(std::vector<double>& out) {
    fftw_execute(bwd_);
    const double scale = 1.0 / static_cast<double>(grid_.size());
    out.resize(real_.size());
    for (std::size_t i = 0; i < real_.size(); ++i) out[i] = real_[i] * scale;
  }

  // Wave number of mode index m on a full axis (fundamental pi/L).
  double wavenumber(int m) const {
    const int n = grid_.n;
    const int f = (m <= n / 2) ? m : m - n;
    return M_PI / grid_.half_width * f;
  }

  // Apply op(k_vec, coeff) over the half-spectrum layout.
  template <typename Op>
  void for_each_mode(const Op& op) {
    const int n = grid_.n;
    const int nh = n / 2 + 1;
    if constexpr (D == 2) {
      std::size_t idx = 0;
      for (int ix = 0; ix < n; ++ix) {
        const double kx = wavenumber(ix);
        for (int iy = 0; iy < nh; ++iy, ++idx) {
          const double ky = wavenumber(iy);
          op(std::array<double, 2>{kx, ky}, cplx_[idx]);
        }
      }
    } else {
      std::size_t idx = 0;
      for (int ix = 0; ix < n; ++ix) {
        const double kx = wavenumber(ix);
        for (int iy = 0; iy < n; ++iy) {
          const double ky = wavenumber(iy);
          for (int iz = 0; iz < nh; ++iz, ++idx) {
            const double kz = wavenumber(iz);
            op(std::array<double, 3>{kx, ky, kz}, cplx_[idx]);
          }
        }
      }
    }
  }

 private:
  GridSpec<D> grid_;
  std::vector<double> real_;
  std::vector<std::complex<double>> cplx_;
  fftw_plan fwd_ = nullptr, bwd_ = nullptr;
};

}  // namespace sksim
