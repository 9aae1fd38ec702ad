#pragma once

#include <cstddef>
#include <vector>

#include "mffd/rng.hpp"
#include "mffd/tensor.hpp"

/// Differentiable tensor operators. Every op records its adjoint on the
/// current thread's Tape when any input requires grad.
namespace mffd::ops {

// Elementwise with numpy-style broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim = false);
/// Max along an axis; the gradient routes to the first maximal element.
Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim = false);

/// Supported forms: [M,K]x[K,N], [B,M,K]x[B,K,N], [M,K]x[B,K,N], [B,M,K]x[K,N].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, std::size_t axis);

// Layout.
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
Tensor broadcast_to(const Tensor& x, const Shape& shape);
/// Zero-pads the last two axes up to the next powers of two (top-left anchored).
Tensor pad_to_pow2(const Tensor& x);

struct Conv2dOptions {
    std::size_t stride = 1;
    double dilation = 1.0;
    std::size_t groups = 1;
};

/// 2-D convolution (cross-correlation) over NCHW input with OIKK weights.
///
/// Taps are centred on the output position: output (oy, ox) reads input
/// (oy*stride + dy*dilation, ox*stride + dx*dilation) for dy, dx in
/// [-(K-1)/2, (K-1)/2], which is "same" padding with zeros outside the image.
/// Output size is ceil(H/stride) x ceil(W/stride). Non-integer dilation
/// fetches taps by bilinear interpolation. `bias` may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dOptions& opts = {});

/// Column matrix for a convolution whose dilation varies per output position.
///
/// x: [N,C,H,W]; dilation: [N,1,Ho,Wo] with values >= 0. Returns
/// [N, C*K*K, Ho*Wo] where row (c*K + ky)*K + kx holds the bilinear sample of
/// channel c at p*stride + (ky - K/2, kx - K/2) * dilation(p). Differentiable
/// in both x and the dilation map.
Tensor dilated_im2col(const Tensor& x, std::size_t kernel, std::size_t stride, const Tensor& dilation);

/// conv2d with a per-position real dilation map, composed from dilated_im2col.
Tensor conv2d_dilation_map(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                           const Tensor& dilation);

/// Batch normalisation over (N, H, W) per channel using fixed statistics.
Tensor batchnorm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                           const Tensor& running_var, double eps = 1e-5);

/// Batch normalisation with batch statistics. Writes the biased batch mean
/// and unbiased batch variance (for running-stat updates) when requested.
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5,
                       std::vector<double>* batch_mean = nullptr, std::vector<double>* batch_var = nullptr);

/// Inverted dropout. Identity when !train; requires p in [0, 1).
Tensor dropout(const Tensor& x, double p, bool train, Rng& rng);

/// 2-D DFT over the last two axes of a real tensor. Output appends a
/// trailing axis of size 2 holding (re, im).
Tensor fft2(const Tensor& x);
/// 2-D DFT of a complex-pair tensor [..., H, W, 2].
Tensor fft2_complex(const Tensor& z);
/// Inverse 2-D DFT (scaled by 1/(H*W)) of a complex-pair tensor.
Tensor ifft2(const Tensor& z);
/// Real or imaginary component of a complex-pair tensor.
Tensor complex_real(const Tensor& z);
Tensor complex_imag(const Tensor& z);

}  // namespace mffd::ops

namespace mffd {
inline Tensor operator+(const Tensor& a, const Tensor& b) { return ops::add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return ops::sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return ops::mul(a, b); }
inline Tensor operator*(double s, const Tensor& x) { return ops::scale(x, s); }
}  // namespace mffd
