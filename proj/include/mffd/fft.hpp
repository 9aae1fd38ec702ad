#pragma once

#include <complex>
#include <cstddef>
#include <span>

namespace mffd::fft {

using Complex = std::complex<double>;

bool is_pow2(std::size_t n) noexcept;

/// In-place iterative radix-2 FFT. The inverse applies the 1/n scale.
void fft1d(std::span<Complex> data, bool inverse);

/// In-place 2-D FFT of a row-major h x w plane (rows, then columns).
/// Both sides must be powers of two; the inverse applies 1/(h*w).
void fft2d(std::span<Complex> plane, std::size_t h, std::size_t w, bool inverse);

}  // namespace mffd::fft
