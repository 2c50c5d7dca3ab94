#pragma once

#include <complex>
#include <vector>

namespace qnet {

/// In-place forward/inverse discrete Fourier transform for arbitrary length:
/// radix-2 Cooley-Tukey for powers of two, Bluestein's chirp-z algorithm
/// otherwise. Inverse includes the 1/n factor.
void fft(std::vector<std::complex<double>>& data, bool inverse);

std::vector<std::complex<double>> fft_forward(const std::vector<double>& real);
std::vector<double> fft_inverse_real(std::vector<std::complex<double>> spectrum);

}  // namespace qnet
