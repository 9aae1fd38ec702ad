#pragma once

#include <cstdint>
#include <vector>

#include "mffd/tensor.hpp"

namespace mffd {

struct HaarBands {
    Tensor ll, lh, hl, hh;  // each [N, C, H/2, W/2]
};

/// One-level orthonormal Haar split. For the 2x2 cell [[a, b], [c, d]]:
/// ll = (a+b+c+d)/2, lh = (a-b+c-d)/2, hl = (a+b-c-d)/2, hh = (a-b-c+d)/2.
HaarBands haar_dwt(const Tensor& x);
Tensor haar_idwt(const HaarBands& bands);

/// Binary Fourier-plane masks partitioning an H x W spectrum into B radial
/// annuli of equal width in normalised frequency radius.
class BandSpec {
public:
    BandSpec(std::size_t bands, std::size_t height, std::size_t width);
    /// Custom masks, validated for exact partition and conjugate symmetry.
    BandSpec(std::size_t height, std::size_t width, std::vector<std::vector<std::uint8_t>> masks);

    std::size_t bands() const noexcept { return masks_.size(); }
    std::size_t height() const noexcept { return h_; }
    std::size_t width() const noexcept { return w_; }
    const std::vector<std::uint8_t>& mask(std::size_t b) const { return masks_.at(b); }
    /// Band index owning frequency bin (u, v).
    std::size_t band_of(std::size_t u, std::size_t v) const { return owner_[u * w_ + v]; }

private:
    void validate();
    std::size_t h_, w_;
    std::vector<std::vector<std::uint8_t>> masks_;
    std::vector<std::size_t> owner_;
};

/// X_b = real(F^-1(M_b . F(x))), built from the generic FFT ops. Reference
/// path; band_filter below computes the same thing faster.
std::vector<Tensor> band_decompose(const Tensor& x, const BandSpec& spec);

/// All band components at once: [N, C, H, W] -> [N, B, C, H, W].
Tensor band_filter(const Tensor& x, const BandSpec& spec);

struct FrequencySelectParams {
    Tensor weight;  // [B, C, 1, 1]
    Tensor bias;    // [B]
};

/// Per-position softmax over B logits from a 1x1 conv: [N, B, H, W].
Tensor band_weights(const Tensor& x, const FrequencySelectParams& p);
/// sum_b A_b(p) X_b(p).
Tensor frequency_select(const Tensor& x, const BandSpec& spec, const FrequencySelectParams& p);

struct FadcParams {
    Tensor weight;     // [O, C, K, K]
    Tensor pred_w;     // [C, 1, 3, 3] depthwise dilation predictor
    Tensor pred_b;     // [1]
    Tensor lambda_w;   // [1, C, 1, 1]
    Tensor lambda_b;   // [1]
    double d_base = 1.0;
};

/// Splits each (O, C) kernel into its spatial mean and the residual.
void split_kernel(const Tensor& w, Tensor& w_low, Tensor& w_high);

/// Position-varying convolution: at output p the kernel is
/// w_low + lambda(p) * w_high and tap k reads x at p + offset_k * dilation(p)
/// (bilinear, zero outside). lambda and dilation are [N, 1, H, W].
Tensor fadc_conv(const Tensor& x, const Tensor& weight, const Tensor& lambda, const Tensor& dilation);

/// D(p) = ReLU(f(x)(p)) * d_base, where f is the depthwise 3x3 predictor
/// summed over channels plus a scalar bias.
Tensor fadc_dilation(const Tensor& x, const FadcParams& p);
/// lambda(p) = 2 * sigmoid(1x1 conv), range (0, 2).
Tensor fadc_lambda(const Tensor& x, const FadcParams& p);
Tensor fadc_forward(const Tensor& x, const FadcParams& p);

struct FadcBlockParams {
    FadcParams fadc;
    FrequencySelectParams select;
};

/// ReLU(fadc_forward(x) + x + frequency_select(x)).
Tensor fadc_block(const Tensor& x, const BandSpec& spec, const FadcBlockParams& p);

struct SpatialAttentionParams {
    Tensor weight;  // [1, 2, 7, 7]
    Tensor bias;    // [1]
};

/// Gate sigmoid(conv7x7([mean_c x, max_c x])) multiplied into every channel.
Tensor spatial_attention(const Tensor& x, const SpatialAttentionParams& p);
Tensor spatial_gate(const Tensor& x, const SpatialAttentionParams& p);

FadcBlockParams init_fadc_block(std::size_t channels, std::size_t kernel, double d_base, std::size_t bands, Rng& rng);
SpatialAttentionParams init_spatial_attention(Rng& rng);

}  // namespace mffd
