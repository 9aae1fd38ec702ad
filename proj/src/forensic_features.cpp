#include "mffd/forensic_features.hpp"

#include <cmath>

#include "border.hpp"
#include "mffd/ops.hpp"

namespace mffd {

std::size_t npr_channels(const NprConfig& cfg, std::size_t colour_channels) {
    return colour_channels * (cfg.l * cfg.l - 1);
}

Tensor npr_extract(const Tensor& img, const NprConfig& cfg) {
    require(cfg.l >= 2, ErrorCode::InvalidArgument, "NPR grid side must be >= 2");
    require(img.dim() == 4, ErrorCode::ShapeMismatch, "npr_extract expects [N,C,H,W], got " + shape_str(img.shape()));
    const std::size_t N = img.shape()[0], C = img.shape()[1], H = img.shape()[2], W = img.shape()[3], l = cfg.l;
    require(H % l == 0 && W % l == 0, ErrorCode::InvalidArgument,
            "image " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by grid side " +
                std::to_string(l));
    const std::size_t per = l * l - 1;
    std::vector<double> out(N * C * per * H * W);
    const auto v = img.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            const double* plane = v.data() + (n * C + c) * H * W;
            for (std::size_t gy = 0; gy < H; gy += l)
                for (std::size_t gx = 0; gx < W; gx += l) {
                    const double ref = plane[gy * W + gx];
                    for (std::size_t i = 1; i <= per; ++i) {
                        const double diff = plane[(gy + i / l) * W + gx + i % l] - ref;
                        double* dst = out.data() + ((n * C + c) * per + (i - 1)) * H * W;
                        for (std::size_t y = gy; y < gy + l; ++y)
                            for (std::size_t x = gx; x < gx + l; ++x) dst[y * W + x] = diff;
                    }
                }
        }
    return Tensor({N, C * per, H, W}, std::move(out));
}

Tensor guided_relu(const Tensor& x) {
    std::vector<double> out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] <= 0.0 ? 0.0 : v[i];  // NaN passes through
    Tensor result(x.shape(), std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result]() mutable {
            const auto g = result.grad();
            const auto xv = x.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv[i] > 0.0 && g[i] > 0.0) gx[i] += g[i];
        });
    }
    return result;
}

FixedBackbone::FixedBackbone(std::uint64_t seed) {
    Rng root = Rng(seed).substream("fixed_backbone");
    const std::size_t widths[] = {3, 8, 16, 16};
    for (std::size_t i = 0; i + 1 < std::size(widths); ++i) {
        Rng rng = root.substream(i);
        const std::size_t fan_in = widths[i] * 9;
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Layer layer;
        layer.weight = Tensor::uniform({widths[i + 1], widths[i], 3, 3}, rng, -bound, bound);
        layer.bias = Tensor::uniform({widths[i + 1]}, rng, -0.1, 0.1);
        layers_.push_back(std::move(layer));
    }
}

Tensor FixedBackbone::forward(const Tensor& x, bool guided) const {
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        h = ops::conv2d(h, layers_[i].weight, layers_[i].bias);
        if (i + 1 < layers_.size()) h = guided ? guided_relu(h) : ops::relu(h);
    }
    return h;
}

std::vector<Tensor> FixedBackbone::parameters() const {
    std::vector<Tensor> out;
    for (const auto& l : layers_) {
        out.push_back(l.weight);
        out.push_back(l.bias);
    }
    return out;
}

Tensor gradient_extract(const Tensor& img, const GradientBackbone& backbone, bool guided) {
    require(img.dim() == 4 && img.shape()[1] == 3, ErrorCode::ShapeMismatch,
            "gradient_extract expects [N,3,H,W], got " + shape_str(img.shape()));
    for (const auto& p : backbone.parameters())
        require(!p.requires_grad(), ErrorCode::AutodiffMisuse, "backbone parameters must be frozen");
    TapeIsolation isolate;
    Tensor input = img.detach();
    input.set_requires_grad(true);
    Tensor total = ops::sum(backbone.forward(input, guided));
    backward(total);
    return Tensor(img.shape(), std::vector<double>(input.grad().begin(), input.grad().end()));
}

Tensor sobel_gradient(const Tensor& img) {
    require(img.dim() == 4 && img.shape()[1] == 3, ErrorCode::ShapeMismatch,
            "sobel_gradient expects [N,3,H,W], got " + shape_str(img.shape()));
    const std::size_t N = img.shape()[0], H = img.shape()[2], W = img.shape()[3];
    const long h = static_cast<long>(H), w = static_cast<long>(W);
    static constexpr double smooth[3] = {1.0, 2.0, 1.0};
    std::vector<double> out(N * 6 * H * W);
    const auto v = img.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < 3; ++c) {
            const double* plane = v.data() + (n * 3 + c) * H * W;
            double* gxp = out.data() + (n * 6 + c) * H * W;
            double* gyp = out.data() + (n * 6 + 3 + c) * H * W;
            for (long y = 0; y < h; ++y)
                for (long x = 0; x < w; ++x) {
                    // differences first, so flat regions give exact zeros
                    auto px = [&](long yy, long xx) {
                        return plane[detail::reflect_index(yy, h) * w + detail::reflect_index(xx, w)];
                    };
                    double sx = 0.0, sy = 0.0;
                    for (long d = -1; d <= 1; ++d) {
                        sx += smooth[d + 1] * (px(y + d, x + 1) - px(y + d, x - 1));
                        sy += smooth[d + 1] * (px(y + 1, x + d) - px(y - 1, x + d));
                    }
                    gxp[y * w + x] = sx;
                    gyp[y * w + x] = sy;
                }
        }
    return Tensor({N, 6, H, W}, std::move(out));
}

}  // namespace mffd
