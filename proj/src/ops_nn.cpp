#include <cmath>

#include "mffd/fft.hpp"
#include "mffd/ops.hpp"

namespace mffd::ops {
namespace {

struct ChannelLayout {
    std::size_t N, C, inner;
};

ChannelLayout channel_layout(const Tensor& x) {
    require(x.dim() >= 2, ErrorCode::ShapeMismatch, "batchnorm expects [N,C,...], got " + shape_str(x.shape()));
    ChannelLayout l{x.shape()[0], x.shape()[1], 1};
    for (std::size_t i = 2; i < x.dim(); ++i) l.inner *= x.shape()[i];
    return l;
}

void check_channel_param(const Tensor& t, std::size_t C, const char* what) {
    require(t.defined() && t.dim() == 1 && t.shape()[0] == C, ErrorCode::ShapeMismatch,
            std::string("batchnorm ") + what + " must have shape [" + std::to_string(C) + "]");
}

using fft::Complex;

// Applies a 2-D transform to each [H, W] plane of a complex-pair buffer.
std::vector<double> transform_planes(std::span<const double> src, std::size_t planes, std::size_t h, std::size_t w,
                                     bool inverse, double post_scale) {
    std::vector<double> out(src.size());
    std::vector<Complex> buf(h * w);
    for (std::size_t p = 0; p < planes; ++p) {
        const double* s = src.data() + p * h * w * 2;
        for (std::size_t i = 0; i < h * w; ++i) buf[i] = Complex(s[2 * i], s[2 * i + 1]);
        fft::fft2d(buf, h, w, inverse);
        double* d = out.data() + p * h * w * 2;
        for (std::size_t i = 0; i < h * w; ++i) {
            d[2 * i] = buf[i].real() * post_scale;
            d[2 * i + 1] = buf[i].imag() * post_scale;
        }
    }
    return out;
}

struct PlaneGeom {
    std::size_t planes, h, w;
};

PlaneGeom complex_geom(const Tensor& z) {
    require(z.dim() >= 3 && z.shape().back() == 2, ErrorCode::ShapeMismatch,
            "complex-pair tensor must end in [H, W, 2], got " + shape_str(z.shape()));
    const std::size_t h = z.shape()[z.dim() - 3], w = z.shape()[z.dim() - 2];
    return {z.numel() / (h * w * 2), h, w};
}

Tensor complex_transform(const Tensor& z, bool inverse, const char* name) {
    const auto g = complex_geom(z);
    const double n = static_cast<double>(g.h * g.w);
    Tensor result(z.shape(), transform_planes(z.data(), g.planes, g.h, g.w, inverse, 1.0));
    check_finite(result, name);
    if (needs_grad({&z})) {
        record_op(result, [z, result, g, inverse, n]() mutable {
            // Adjoint of the forward DFT is n * inverse DFT, and vice versa.
            const auto back = transform_planes(result.grad(), g.planes, g.h, g.w, !inverse, inverse ? 1.0 / n : n);
            auto gz = z.grad_buffer();
            for (std::size_t i = 0; i < back.size(); ++i) gz[i] += back[i];
        });
    }
    return result;
}

Tensor complex_part(const Tensor& z, std::size_t part) {
    require(z.dim() >= 1 && z.shape().back() == 2, ErrorCode::ShapeMismatch, "expected trailing complex axis of 2");
    Shape out_shape(z.shape().begin(), z.shape().end() - 1);
    std::vector<double> out(z.numel() / 2);
    const auto v = z.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[2 * i + part];
    Tensor result(out_shape, std::move(out));
    if (needs_grad({&z})) {
        record_op(result, [z, result, part]() mutable {
            const auto g = result.grad();
            auto gz = z.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gz[2 * i + part] += g[i];
        });
    }
    return result;
}

}  // namespace

Tensor batchnorm_inference(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& running_mean,
                           const Tensor& running_var, double eps) {
    const auto l = channel_layout(x);
    check_channel_param(gamma, l.C, "gamma");
    check_channel_param(beta, l.C, "beta");
    check_channel_param(running_mean, l.C, "running_mean");
    check_channel_param(running_var, l.C, "running_var");
    std::vector<double> scale_c(l.C), shift_c(l.C);
    for (std::size_t c = 0; c < l.C; ++c) {
        scale_c[c] = gamma[c] / std::sqrt(running_var[c] + eps);
        shift_c[c] = beta[c] - running_mean[c] * scale_c[c];
    }
    std::vector<double> out(x.numel());
    const auto v = x.data();
    for (std::size_t n = 0; n < l.N; ++n)
        for (std::size_t c = 0; c < l.C; ++c)
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t idx = (n * l.C + c) * l.inner + i;
                out[idx] = v[idx] * scale_c[c] + shift_c[c];
            }
    Tensor result(x.shape(), std::move(out));
    check_finite(result, "batchnorm_inference");
    if (needs_grad({&x, &gamma, &beta})) {
        record_op(result, [x, gamma, beta, running_mean, running_var, result, l, eps, scale_c]() mutable {
            const auto g = result.grad();
            const auto v = x.data();
            double* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
            double* gg = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
            double* gb = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
            for (std::size_t c = 0; c < l.C; ++c) {
                const double inv_std = 1.0 / std::sqrt(running_var[c] + eps);
                for (std::size_t n = 0; n < l.N; ++n)
                    for (std::size_t i = 0; i < l.inner; ++i) {
                        const std::size_t idx = (n * l.C + c) * l.inner + i;
                        if (gx) gx[idx] += g[idx] * scale_c[c];
                        if (gg) gg[c] += g[idx] * (v[idx] - running_mean[c]) * inv_std;
                        if (gb) gb[c] += g[idx];
                    }
            }
        });
    }
    return result;
}

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       std::vector<double>* batch_mean, std::vector<double>* batch_var) {
    const auto l = channel_layout(x);
    check_channel_param(gamma, l.C, "gamma");
    check_channel_param(beta, l.C, "beta");
    const std::size_t m = l.N * l.inner;
    require(m > 1, ErrorCode::InvalidArgument, "batchnorm_train needs more than one value per channel");
    const auto v = x.data();
    std::vector<double> mu(l.C, 0.0), var(l.C, 0.0), inv_std(l.C);
    for (std::size_t c = 0; c < l.C; ++c) {
        double s = 0.0;
        for (std::size_t n = 0; n < l.N; ++n)
            for (std::size_t i = 0; i < l.inner; ++i) s += v[(n * l.C + c) * l.inner + i];
        mu[c] = s / static_cast<double>(m);
        double q = 0.0;
        for (std::size_t n = 0; n < l.N; ++n)
            for (std::size_t i = 0; i < l.inner; ++i) {
                const double d = v[(n * l.C + c) * l.inner + i] - mu[c];
                q += d * d;
            }
        var[c] = q / static_cast<double>(m);
        inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
    }
    std::vector<double> xhat(x.numel()), out(x.numel());
    for (std::size_t n = 0; n < l.N; ++n)
        for (std::size_t c = 0; c < l.C; ++c)
            for (std::size_t i = 0; i < l.inner; ++i) {
                const std::size_t idx = (n * l.C + c) * l.inner + i;
                xhat[idx] = (v[idx] - mu[c]) * inv_std[c];
                out[idx] = gamma[c] * xhat[idx] + beta[c];
            }
    if (batch_mean) *batch_mean = mu;
    if (batch_var) {
        batch_var->resize(l.C);
        for (std::size_t c = 0; c < l.C; ++c)
            (*batch_var)[c] = var[c] * static_cast<double>(m) / static_cast<double>(m - 1);
    }
    Tensor result(x.shape(), std::move(out));
    check_finite(result, "batchnorm_train");
    if (needs_grad({&x, &gamma, &beta})) {
        record_op(result, [x, gamma, beta, result, l, m, inv_std, xhat = std::move(xhat)]() mutable {
            const auto g = result.grad();
            double* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
            double* gg = gamma.requires_grad() ? gamma.grad_buffer().data() : nullptr;
            double* gb = beta.requires_grad() ? beta.grad_buffer().data() : nullptr;
            for (std::size_t c = 0; c < l.C; ++c) {
                double sg = 0.0, sgx = 0.0;
                for (std::size_t n = 0; n < l.N; ++n)
                    for (std::size_t i = 0; i < l.inner; ++i) {
                        const std::size_t idx = (n * l.C + c) * l.inner + i;
                        sg += g[idx];
                        sgx += g[idx] * xhat[idx];
                    }
                if (gg) gg[c] += sgx;
                if (gb) gb[c] += sg;
                if (!gx) continue;
                const double mg = sg / static_cast<double>(m), mgx = sgx / static_cast<double>(m);
                const double k = gamma[c] * inv_std[c];
                for (std::size_t n = 0; n < l.N; ++n)
                    for (std::size_t i = 0; i < l.inner; ++i) {
                        const std::size_t idx = (n * l.C + c) * l.inner + i;
                        gx[idx] += k * (g[idx] - mg - xhat[idx] * mgx);
                    }
            }
        });
    }
    return result;
}

Tensor dropout(const Tensor& x, double p, bool train, Rng& rng) {
    require(p >= 0.0 && p < 1.0, ErrorCode::InvalidArgument, "dropout p must lie in [0, 1)");
    if (!train || p == 0.0) return x;
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (auto& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
    std::vector<double> out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v[i] * mask[i];
    Tensor result(x.shape(), std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, mask = std::move(mask)]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
        });
    }
    return result;
}

Tensor fft2(const Tensor& x) {
    require(x.dim() >= 2, ErrorCode::ShapeMismatch, "fft2 needs at least two axes");
    const std::size_t h = x.shape()[x.dim() - 2], w = x.shape()[x.dim() - 1];
    require(fft::is_pow2(h) && fft::is_pow2(w), ErrorCode::InvalidArgument,
            "fft2 needs power-of-two spatial sizes, got " + shape_str(x.shape()) + "; use pad_to_pow2");
    const std::size_t planes = x.numel() / (h * w);
    std::vector<double> packed(x.numel() * 2, 0.0);
    const auto v = x.data();
    for (std::size_t i = 0; i < v.size(); ++i) packed[2 * i] = v[i];
    Shape out_shape = x.shape();
    out_shape.push_back(2);
    Tensor result(out_shape, transform_planes(packed, planes, h, w, false, 1.0));
    check_finite(result, "fft2");
    if (needs_grad({&x})) {
        record_op(result, [x, result, planes, h, w]() mutable {
            const auto back =
                transform_planes(result.grad(), planes, h, w, true, static_cast<double>(h * w));
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += back[2 * i];
        });
    }
    return result;
}

Tensor fft2_complex(const Tensor& z) { return complex_transform(z, false, "fft2_complex"); }
Tensor ifft2(const Tensor& z) { return complex_transform(z, true, "ifft2"); }
Tensor complex_real(const Tensor& z) { return complex_part(z, 0); }
Tensor complex_imag(const Tensor& z) { return complex_part(z, 1); }

}  // namespace mffd::ops
