#include "mffd/fft.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <vector>

#include "mffd/error.hpp"

namespace mffd::fft {
namespace {

// Twiddles e^{-2 pi i k / n}, k < n/2, evaluated directly per entry.
const std::vector<Complex>& twiddles(std::size_t n) {
    thread_local std::map<std::size_t, std::vector<Complex>> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;
    std::vector<Complex> t(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        t[k] = Complex(std::cos(a), std::sin(a));
    }
    return cache.emplace(n, std::move(t)).first->second;
}

}  // namespace

bool is_pow2(std::size_t n) noexcept { return n != 0 && (n & (n - 1)) == 0; }

void fft1d(std::span<Complex> a, bool inverse) {
    const std::size_t n = a.size();
    require(is_pow2(n), ErrorCode::InvalidArgument, "FFT length must be a power of two, got " + std::to_string(n));
    if (n == 1) return;
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    const auto& tw = twiddles(n);
    const double sign = inverse ? -1.0 : 1.0;
    // complex products written out: std::complex operator* takes a slow
    // NaN-recovery path
    double* d = reinterpret_cast<double*>(a.data());
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2, step = n / len;
        for (std::size_t i = 0; i < n; i += len)
            for (std::size_t k = 0; k < half; ++k) {
                const double wr = tw[k * step].real(), wi = sign * tw[k * step].imag();
                double* u = d + 2 * (i + k);
                double* v = d + 2 * (i + k + half);
                const double vr = v[0] * wr - v[1] * wi, vi = v[0] * wi + v[1] * wr;
                v[0] = u[0] - vr;
                v[1] = u[1] - vi;
                u[0] += vr;
                u[1] += vi;
            }
    }
    if (inverse) {
        const double s = 1.0 / static_cast<double>(n);
        for (std::size_t i = 0; i < 2 * n; ++i) d[i] *= s;
    }
}

void fft2d(std::span<Complex> plane, std::size_t h, std::size_t w, bool inverse) {
    require(plane.size() == h * w, ErrorCode::ShapeMismatch, "fft2d plane size mismatch");
    require(is_pow2(h) && is_pow2(w), ErrorCode::InvalidArgument,
            "2-D FFT needs power-of-two sides (got " + std::to_string(h) + "x" + std::to_string(w) +
                "); pad with pad_to_pow2 first");
    for (std::size_t r = 0; r < h; ++r) fft1d(plane.subspan(r * w, w), inverse);
    thread_local std::vector<Complex> t;
    t.resize(h * w);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) t[c * h + r] = plane[r * w + c];
    for (std::size_t c = 0; c < w; ++c) fft1d(std::span<Complex>(t).subspan(c * h, h), inverse);
    for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) plane[r * w + c] = t[c * h + r];
}

}  // namespace mffd::fft
