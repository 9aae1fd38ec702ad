#pragma once

#include <memory>
#include <vector>

#include "mffd/tensor.hpp"

namespace mffd {

struct NprConfig {
    std::size_t l = 2;  // grid side
};

/// Neighbouring-pixel relationships.
///
/// For every non-overlapping l x l grid and colour channel, emits the l*l - 1
/// differences w_i - w_ref, where w_ref is the grid's top-left pixel and i
/// walks the remaining cells in row-major order. Each difference is tiled over
/// the grid's footprint, so the output is [N, 3*(l*l-1), H, W] with channel
/// index c*(l*l-1) + (i-1).
Tensor npr_extract(const Tensor& img, const NprConfig& cfg = {});

std::size_t npr_channels(const NprConfig& cfg, std::size_t colour_channels = 3);

/// Frozen CNN used for input-gradient features. Implementations must not
/// mark their parameters as requiring grad.
class GradientBackbone {
public:
    virtual ~GradientBackbone() = default;
    /// Last-layer activations M_k for a [N, 3, H, W] input.
    virtual Tensor forward(const Tensor& x, bool guided) const = 0;
    virtual std::size_t out_channels() const = 0;
    virtual std::vector<Tensor> parameters() const = 0;
};

/// Seeded-random 3 -> 8 -> 16 -> 16 stack of 3x3 convolutions with ReLU
/// between layers (the last layer's raw output is M).
class FixedBackbone final : public GradientBackbone {
public:
    explicit FixedBackbone(std::uint64_t seed = 1);

    Tensor forward(const Tensor& x, bool guided) const override;
    std::size_t out_channels() const override { return 16; }
    std::vector<Tensor> parameters() const override;

private:
    struct Layer {
        Tensor weight, bias;
    };
    std::vector<Layer> layers_;
};

/// Gradient of sum_k M_k(I) with respect to the input image, same shape as
/// `img`. `guided` switches the ReLU adjoints to guided backpropagation
/// (negative upstream gradients are zeroed as well).
Tensor gradient_extract(const Tensor& img, const GradientBackbone& backbone, bool guided = false);

/// Per-channel Sobel responses with reflect padding: [N, 6, H, W] ordered
/// (d/dx R, G, B, then d/dy R, G, B). Kernel for d/dx is
/// [-1 0 1; -2 0 2; -1 0 1] applied as a correlation.
Tensor sobel_gradient(const Tensor& img);

/// ReLU whose adjoint also drops negative upstream gradients.
Tensor guided_relu(const Tensor& x);

}  // namespace mffd
