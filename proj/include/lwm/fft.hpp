#pragma once

#include <complex>
#include <stdexcept>
#include <vector>

#include "lwm/tensor.hpp"

namespace lwm {

inline bool is_power_of_two(Index n) { return n > 0 && (n & (n - 1)) == 0; }

/// In-place iterative radix-2 Cooley-Tukey. n must be a power of two.
template <typename S>
void fft_inplace(std::complex<S>* a, Index n, bool inverse) {
  if (!is_power_of_two(n)) throw std::invalid_argument("fft length must be a power of two");
  for (Index i = 1, j = 0; i < n; ++i) {
    Index bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const double sign = inverse ? 1.0 : -1.0;
  for (Index len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * 3.14159265358979323846 / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (Index i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (Index j = 0; j < len / 2; ++j) {
        std::complex<double> u(a[i + j]);
        std::complex<double> v = std::complex<double>(a[i + j + len / 2]) * w;
        a[i + j] = std::complex<S>(u + v);
        a[i + j + len / 2] = std::complex<S>(u - v);
        w *= wl;
      }
    }
  }
  if (inverse) {
    const S inv_n = static_cast<S>(1.0 / static_cast<double>(n));
    for (Index i = 0; i < n; ++i) a[i] *= inv_n;
  }
}

/// Circular convolution of two length-L real sequences through the
/// frequency domain. y[n] = sum_m x[m] w[(n - m) mod L].
template <typename S>
void circular_convolve_1d(const S* x, const S* w, S* y, Index L) {
  std::vector<std::complex<S>> fx(L), fw(L);
  for (Index i = 0; i < L; ++i) {
    fx[i] = std::complex<S>(x[i], 0);
    fw[i] = std::complex<S>(w[i], 0);
  }
  fft_inplace(fx.data(), L, false);
  fft_inplace(fw.data(), L, false);
  for (Index i = 0; i < L; ++i) fx[i] *= fw[i];
  fft_inplace(fx.data(), L, true);
  for (Index i = 0; i < L; ++i) y[i] = fx[i].real();
}

/// Circular cross-correlation: y[n] = sum_m x[m] w[(m - n) mod L].
/// This is the adjoint of circular_convolve_1d in its first argument.
template <typename S>
void circular_correlate_1d(const S* x, const S* w, S* y, Index L) {
  std::vector<std::complex<S>> fx(L), fw(L);
  for (Index i = 0; i < L; ++i) {
    fx[i] = std::complex<S>(x[i], 0);
    fw[i] = std::complex<S>(w[i], 0);
  }
  fft_inplace(fx.data(), L, false);
  fft_inplace(fw.data(), L, false);
  for (Index i = 0; i < L; ++i) fx[i] *= std::conj(fw[i]);
  fft_inplace(fx.data(), L, true);
  for (Index i = 0; i < L; ++i) y[i] = fx[i].real();
}

/// Per-channel circular convolution of x [C,L] with kernels w [C,L].
template <typename S>
Tensor<S> rfft_circular_convolve(const Tensor<S>& x, const Tensor<S>& w) {
  if (x.shape() != w.shape())
    throw std::invalid_argument("rfft_circular_convolve: shape mismatch");
  if (x.rank() != 2) throw std::invalid_argument("rfft_circular_convolve: expected [C,L]");
  const Index C = x.dim(0), L = x.dim(1);
  if (!is_power_of_two(L))
    throw std::invalid_argument("rfft_circular_convolve: L must be a power of two");
  Tensor<S> y(x.shape());
  for (Index c = 0; c < C; ++c)
    circular_convolve_1d(x.data() + c * L, w.data() + c * L, y.data() + c * L, L);
  return y;
}

}  // namespace lwm
