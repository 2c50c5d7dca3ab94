#include "qnet/fft.hpp"

#include <cmath>
#include <numbers>

namespace qnet {

namespace {

using cplx = std::complex<double>;

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// Iterative radix-2 Cooley-Tukey; n must be a power of two.
void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * std::numbers::pi / static_cast<double>(len) *
                       (inverse ? 1.0 : -1.0);
    const cplx wlen(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cplx w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    for (auto& x : a) x /= static_cast<double>(n);
  }
}

// Bluestein's algorithm: DFT of arbitrary length via a power-of-two
// convolution with a chirp sequence.
void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const std::size_t n = a.size();
  const std::size_t m = next_pow2(2 * n - 1);
  const double sign = inverse ? 1.0 : -1.0;

  std::vector<cplx> chirp(n);
  for (std::size_t k = 0; k < n; ++k) {
    // angle = pi * k^2 / n, with k^2 reduced mod 2n to keep precision
    const std::size_t k2 = (k * k) % (2 * n);
    const double ang = sign * std::numbers::pi * static_cast<double>(k2) /
                       static_cast<double>(n);
    chirp[k] = cplx(std::cos(ang), std::sin(ang));
  }

  std::vector<cplx> x(m, cplx(0.0, 0.0));
  std::vector<cplx> y(m, cplx(0.0, 0.0));
  for (std::size_t k = 0; k < n; ++k) x[k] = a[k] * chirp[k];
  y[0] = std::conj(chirp[0]);
  for (std::size_t k = 1; k < n; ++k) {
    y[k] = std::conj(chirp[k]);
    y[m - k] = std::conj(chirp[k]);
  }

  fft_pow2(x, false);
  fft_pow2(y, false);
  for (std::size_t k = 0; k < m; ++k) x[k] *= y[k];
  fft_pow2(x, true);

  for (std::size_t k = 0; k < n; ++k) a[k] = x[k] * chirp[k];
  if (inverse) {
    for (auto& v : a) v /= static_cast<double>(n);
  }
}

}  // namespace

void fft(std::vector<cplx>& data, bool inverse) {
  if (data.size() <= 1) return;
  if (is_pow2(data.size())) {
    fft_pow2(data, inverse);
  } else {
    fft_bluestein(data, inverse);
  }
}

std::vector<cplx> fft_forward(const std::vector<double>& real) {
  std::vector<cplx> data(real.size());
  for (std::size_t i = 0; i < real.size(); ++i) data[i] = cplx(real[i], 0.0);
  fft(data, false);
  return data;
}

std::vector<double> fft_inverse_real(std::vector<cplx> spectrum) {
  fft(spectrum, true);
  std::vector<double> out(spectrum.size());
  for (std::size_t i = 0; i < spectrum.size(); ++i) out[i] = spectrum[i].real();
  return out;
}

}  // namespace qnet
