#include "mffd/frequency_blocks.hpp"

#include <cmath>

#include "mffd/fft.hpp"
#include "mffd/ops.hpp"

namespace mffd {

using fft::Complex;

namespace {

void require_even_4d(const Tensor& x, const char* what) {
    require(x.dim() == 4, ErrorCode::ShapeMismatch, std::string(what) + " expects [N,C,H,W], got " + shape_str(x.shape()));
    require(x.shape()[2] % 2 == 0 && x.shape()[3] % 2 == 0, ErrorCode::InvalidArgument,
            std::string(what) + " needs even spatial sizes, got " + shape_str(x.shape()));
}

// Signs of (a, b, c, d) for each Haar band, in ll, lh, hl, hh order.
constexpr double kHaar[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, 1, -1, -1}, {1, -1, -1, 1}};

Tensor haar_band(const Tensor& x, int band) {
    const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::size_t h = H / 2, w = W / 2;
    const double* s = kHaar[band];
    std::vector<double> out(N * C * h * w);
    const auto v = x.data();
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const double* r0 = v.data() + (nc * H + 2 * i) * W + 2 * j;
                const double* r1 = r0 + W;
                out[(nc * h + i) * w + j] = 0.5 * (s[0] * r0[0] + s[1] * r0[1] + s[2] * r1[0] + s[3] * r1[1]);
            }
    Tensor result({N, C, h, w}, std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, band, C, H, W, h, w, N]() {
            const double* s = kHaar[band];
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t nc = 0; nc < N * C; ++nc)
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        const double gv = 0.5 * g[(nc * h + i) * w + j];
                        double* r0 = gx.data() + (nc * H + 2 * i) * W + 2 * j;
                        double* r1 = r0 + W;
                        r0[0] += s[0] * gv;
                        r0[1] += s[1] * gv;
                        r1[0] += s[2] * gv;
                        r1[1] += s[3] * gv;
                    }
        });
    }
    return result;
}

}  // namespace

HaarBands haar_dwt(const Tensor& x) {
    require_even_4d(x, "haar_dwt");
    return {haar_band(x, 0), haar_band(x, 1), haar_band(x, 2), haar_band(x, 3)};
}

Tensor haar_idwt(const HaarBands& b) {
    const Tensor* parts[4] = {&b.ll, &b.lh, &b.hl, &b.hh};
    for (const Tensor* p : parts)
        require(p->dim() == 4 && p->shape() == b.ll.shape(), ErrorCode::ShapeMismatch, "Haar bands must share one shape");
    const std::size_t N = b.ll.shape()[0], C = b.ll.shape()[1], h = b.ll.shape()[2], w = b.ll.shape()[3];
    const std::size_t H = 2 * h, W = 2 * w;
    std::vector<double> out(N * C * H * W);
    for (std::size_t nc = 0; nc < N * C; ++nc)
        for (std::size_t i = 0; i < h; ++i)
            for (std::size_t j = 0; j < w; ++j) {
                const std::size_t k = (nc * h + i) * w + j;
                double* r0 = out.data() + (nc * H + 2 * i) * W + 2 * j;
                double* r1 = r0 + W;
                for (int band = 0; band < 4; ++band) {
                    const double c = 0.5 * (*parts[band])[k];
                    r0[0] += kHaar[band][0] * c;
                    r0[1] += kHaar[band][1] * c;
                    r1[0] += kHaar[band][2] * c;
                    r1[1] += kHaar[band][3] * c;
                }
            }
    Tensor result({N, C, H, W}, std::move(out));
    if (needs_grad({&b.ll, &b.lh, &b.hl, &b.hh})) {
        record_op(result, [ll = b.ll, lh = b.lh, hl = b.hl, hh = b.hh, result, N, C, h, w, W]() {
            const Tensor* in[4] = {&ll, &lh, &hl, &hh};
            const auto g = result.grad();
            for (int band = 0; band < 4; ++band) {
                if (!in[band]->requires_grad()) continue;
                auto gb = in[band]->grad_buffer();
                const double* s = kHaar[band];
                for (std::size_t nc = 0; nc < N * C; ++nc)
                    for (std::size_t i = 0; i < h; ++i)
                        for (std::size_t j = 0; j < w; ++j) {
                            const double* r0 = g.data() + (nc * 2 * h + 2 * i) * W + 2 * j;
                            const double* r1 = r0 + W;
                            gb[(nc * h + i) * w + j] += 0.5 * (s[0] * r0[0] + s[1] * r0[1] + s[2] * r1[0] + s[3] * r1[1]);
                        }
            }
        });
    }
    return result;
}

BandSpec::BandSpec(std::size_t bands, std::size_t height, std::size_t width) : h_(height), w_(width) {
    require(bands >= 1, ErrorCode::InvalidArgument, "need at least one frequency band");
    require(fft::is_pow2(height) && fft::is_pow2(width), ErrorCode::InvalidArgument,
            "band masks need power-of-two sizes");
    masks_.assign(bands, std::vector<std::uint8_t>(h_ * w_, 0));
    // radius of bin (u, v) using the signed frequency min(u, n-u)/n, scaled so the corner is 1
    const double r_max = std::sqrt(0.5);
    for (std::size_t u = 0; u < h_; ++u)
        for (std::size_t v = 0; v < w_; ++v) {
            const double fu = static_cast<double>(std::min(u, h_ - u)) / static_cast<double>(h_);
            const double fv = static_cast<double>(std::min(v, w_ - v)) / static_cast<double>(w_);
            const double r = std::sqrt(fu * fu + fv * fv) / r_max;
            const auto b = std::min(bands - 1, static_cast<std::size_t>(r * static_cast<double>(bands)));
            masks_[b][u * w_ + v] = 1;
        }
    validate();
}

BandSpec::BandSpec(std::size_t height, std::size_t width, std::vector<std::vector<std::uint8_t>> masks)
    : h_(height), w_(width), masks_(std::move(masks)) {
    require(!masks_.empty(), ErrorCode::InvalidArgument, "need at least one frequency band");
    require(fft::is_pow2(height) && fft::is_pow2(width), ErrorCode::InvalidArgument,
            "band masks need power-of-two sizes");
    validate();
}

void BandSpec::validate() {
    owner_.assign(h_ * w_, 0);
    for (std::size_t u = 0; u < h_; ++u)
        for (std::size_t v = 0; v < w_; ++v) {
            std::size_t hits = 0;
            for (std::size_t b = 0; b < masks_.size(); ++b) {
                const auto& m = masks_[b];
                require(m.size() == h_ * w_, ErrorCode::ShapeMismatch, "band mask has the wrong size");
                require(m[u * w_ + v] <= 1, ErrorCode::InvalidArgument, "band masks must be binary");
                require(m[u * w_ + v] == m[((h_ - u) % h_) * w_ + (w_ - v) % w_], ErrorCode::InvalidArgument,
                        "band mask " + std::to_string(b) + " is not symmetric under frequency negation");
                if (m[u * w_ + v]) {
                    ++hits;
                    owner_[u * w_ + v] = b;
                }
            }
            require(hits == 1, ErrorCode::InvalidArgument,
                    "band masks do not partition the spectrum at bin (" + std::to_string(u) + "," + std::to_string(v) + ")");
        }
}

std::vector<Tensor> band_decompose(const Tensor& x, const BandSpec& spec) {
    require(x.dim() >= 2 && x.shape()[x.dim() - 2] == spec.height() && x.shape()[x.dim() - 1] == spec.width(),
            ErrorCode::ShapeMismatch, "band spec does not match " + shape_str(x.shape()));
    const Tensor spectrum = ops::fft2(x);
    std::vector<Tensor> out;
    for (std::size_t b = 0; b < spec.bands(); ++b) {
        std::vector<double> m(spec.mask(b).begin(), spec.mask(b).end());
        const Tensor mask({spec.height(), spec.width(), 1}, std::move(m));
        out.push_back(ops::complex_real(ops::ifft2(ops::mul(spectrum, mask))));
    }
    return out;
}

namespace {

// Applies every band projection to one real plane. Bands are processed in
// pairs: the inverse transform of (M_a + i M_b) X returns x_a in the real part
// and x_b in the imaginary part, because each masked spectrum is Hermitian.
void filter_plane(const double* src, double* const* dst, const BandSpec& spec, std::vector<Complex>& spectrum,
                  std::vector<Complex>& work) {
    const std::size_t H = spec.height(), W = spec.width(), P = H * W, B = spec.bands();
    for (std::size_t i = 0; i < P; ++i) spectrum[i] = Complex(src[i], 0.0);
    fft::fft2d(spectrum, H, W, false);
    for (std::size_t b = 0; b < B; b += 2) {
        const bool pair = b + 1 < B;
        const auto& ma = spec.mask(b);
        for (std::size_t i = 0; i < P; ++i) {
            Complex z = ma[i] ? spectrum[i] : Complex(0.0, 0.0);
            if (pair && spec.mask(b + 1)[i]) z = Complex(-spectrum[i].imag(), spectrum[i].real());  // i * X
            work[i] = z;
        }
        fft::fft2d(work, H, W, true);
        for (std::size_t i = 0; i < P; ++i) dst[b][i] = work[i].real();
        if (pair)
            for (std::size_t i = 0; i < P; ++i) dst[b + 1][i] = work[i].imag();
    }
}

}  // namespace

Tensor band_filter(const Tensor& x, const BandSpec& spec) {
    require(x.dim() == 4 && x.shape()[2] == spec.height() && x.shape()[3] == spec.width(), ErrorCode::ShapeMismatch,
            "band_filter expects [N,C," + std::to_string(spec.height()) + "," + std::to_string(spec.width()) +
                "], got " + shape_str(x.shape()));
    const std::size_t N = x.shape()[0], C = x.shape()[1], P = spec.height() * spec.width(), B = spec.bands();
    std::vector<double> out(N * B * C * P);
    std::vector<Complex> spectrum(P), work(P);
    std::vector<double*> dst(B);
    const auto v = x.data();
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t b = 0; b < B; ++b) dst[b] = out.data() + ((n * B + b) * C + c) * P;
            filter_plane(v.data() + (n * C + c) * P, dst.data(), spec, spectrum, work);
        }
    Tensor result({N, B, C, spec.height(), spec.width()}, std::move(out));
    check_finite(result, "band_filter");
    if (needs_grad({&x})) {
        // Each projection is real and symmetric, so the adjoint is
        // sum_b P_b(g_b) = real(F^-1(sum_b M_b . F(g_b))). One transform per
        // band pair: Z = F(g_a + i g_b) and G_a(k) = (Z(k) + conj Z(-k)) / 2,
        // G_b(k) = (Z(k) - conj Z(-k)) / 2i.
        record_op(result, [x, result, spec, N, C, P, B]() {
            const std::size_t H = spec.height(), W = spec.width();
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            std::vector<Complex> z(P), acc(P);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t c = 0; c < C; ++c) {
                    std::fill(acc.begin(), acc.end(), Complex(0.0, 0.0));
                    for (std::size_t b = 0; b < B; b += 2) {
                        const bool pair = b + 1 < B;
                        const double* ga = g.data() + ((n * B + b) * C + c) * P;
                        const double* gb = pair ? g.data() + ((n * B + b + 1) * C + c) * P : nullptr;
                        for (std::size_t i = 0; i < P; ++i) z[i] = Complex(ga[i], pair ? gb[i] : 0.0);
                        fft::fft2d(z, H, W, false);
                        for (std::size_t u = 0; u < H; ++u)
                            for (std::size_t v = 0; v < W; ++v) {
                                const std::size_t k = u * W + v;
                                const std::size_t owner = spec.band_of(u, v);
                                if (owner != b && owner != b + 1) continue;
                                const Complex mirror = std::conj(z[((H - u) % H) * W + (W - v) % W]);
                                acc[k] = owner == b ? 0.5 * (z[k] + mirror) : Complex(0.0, -0.5) * (z[k] - mirror);
                            }
                    }
                    fft::fft2d(acc, H, W, true);
                    double* dst = gx.data() + (n * C + c) * P;
                    for (std::size_t i = 0; i < P; ++i) dst[i] += acc[i].real();
                }
        });
    }
    return result;
}

Tensor band_weights(const Tensor& x, const FrequencySelectParams& p) {
    return ops::softmax(ops::conv2d(x, p.weight, p.bias), 1);
}

Tensor frequency_select(const Tensor& x, const BandSpec& spec, const FrequencySelectParams& p) {
    require(p.weight.dim() == 4 && p.weight.shape()[0] == spec.bands(), ErrorCode::ShapeMismatch,
            "frequency-select head must emit one logit per band");
    const std::size_t N = x.shape()[0], H = x.shape()[2], W = x.shape()[3];
    const Tensor a = band_weights(x, p);  // [N, B, H, W]
    const Tensor bands = band_filter(x, spec);
    return ops::sum_axis(ops::mul(bands, ops::reshape(a, {N, spec.bands(), 1, H, W})), 1);
}

void split_kernel(const Tensor& w, Tensor& w_low, Tensor& w_high) {
    require(w.dim() == 4, ErrorCode::ShapeMismatch, "kernel must be [O,C,K,K]");
    w_low = ops::broadcast_to(ops::mean_axis(ops::mean_axis(w, 3, true), 2, true), w.shape());
    w_high = ops::sub(w, w_low);
}

Tensor fadc_conv(const Tensor& x, const Tensor& weight, const Tensor& lambda, const Tensor& dilation) {
    require(x.dim() == 4 && weight.dim() == 4 && weight.shape()[1] == x.shape()[1], ErrorCode::ShapeMismatch,
            "fadc_conv: weight " + shape_str(weight.shape()) + " does not match input " + shape_str(x.shape()));
    const std::size_t K = weight.shape()[2];
    require(K % 2 == 1 && weight.shape()[3] == K, ErrorCode::InvalidArgument, "FADC kernel must be square and odd");
    const std::size_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3], O = weight.shape()[0];
    require(lambda.shape() == Shape{N, 1, H, W}, ErrorCode::ShapeMismatch, "lambda map must be [N,1,H,W]");
    Tensor w_low, w_high;
    split_kernel(weight, w_low, w_high);
    const Tensor cols = ops::dilated_im2col(x, K, 1, dilation);  // [N, C*K*K, H*W]
    const Tensor y_low = ops::matmul(ops::reshape(w_low, {O, C * K * K}), cols);
    const Tensor y_high = ops::matmul(ops::reshape(w_high, {O, C * K * K}), cols);
    const Tensor y = ops::add(y_low, ops::mul(y_high, ops::reshape(lambda, {N, 1, H * W})));
    return ops::reshape(y, {N, O, H, W});
}

Tensor fadc_dilation(const Tensor& x, const FadcParams& p) {
    const std::size_t C = x.shape()[1];
    ops::Conv2dOptions depthwise;
    depthwise.groups = C;
    const Tensor f = ops::sum_axis(ops::conv2d(x, p.pred_w, Tensor(), depthwise), 1, true);
    return ops::scale(ops::relu(ops::add(f, ops::reshape(p.pred_b, {1, 1, 1, 1}))), p.d_base);
}

Tensor fadc_lambda(const Tensor& x, const FadcParams& p) {
    return ops::scale(ops::sigmoid(ops::conv2d(x, p.lambda_w, p.lambda_b)), 2.0);
}

Tensor fadc_forward(const Tensor& x, const FadcParams& p) {
    require(p.d_base > 0.0, ErrorCode::InvalidArgument, "D_base must be positive");
    return fadc_conv(x, p.weight, fadc_lambda(x, p), fadc_dilation(x, p));
}

Tensor fadc_block(const Tensor& x, const BandSpec& spec, const FadcBlockParams& p) {
    require(p.fadc.weight.shape()[0] == x.shape()[1], ErrorCode::ShapeMismatch,
            "FADC block must preserve channels: weight has " + std::to_string(p.fadc.weight.shape()[0]) +
                " outputs, input has " + std::to_string(x.shape()[1]));
    return ops::relu(ops::add(ops::add(fadc_forward(x, p.fadc), x), frequency_select(x, spec, p.select)));
}

Tensor spatial_gate(const Tensor& x, const SpatialAttentionParams& p) {
    const Tensor pooled = ops::concat({ops::mean_axis(x, 1, true), ops::max_axis(x, 1, true)}, 1);
    return ops::sigmoid(ops::conv2d(pooled, p.weight, p.bias));
}

Tensor spatial_attention(const Tensor& x, const SpatialAttentionParams& p) {
    return ops::mul(x, spatial_gate(x, p));
}

namespace {

Tensor he_uniform(Shape s, std::size_t fan_in, Rng rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return Tensor::uniform(std::move(s), rng, -bound, bound).set_requires_grad(true);
}

Tensor small_uniform(Shape s, double bound, Rng rng) {
    return Tensor::uniform(std::move(s), rng, -bound, bound).set_requires_grad(true);
}

}  // namespace

FadcBlockParams init_fadc_block(std::size_t channels, std::size_t kernel, double d_base, std::size_t bands, Rng& rng) {
    FadcBlockParams p;
    const std::size_t C = channels;
    p.fadc.weight = he_uniform({C, C, kernel, kernel}, C * kernel * kernel, rng.substream("weight"));
    // heads start near their neutral point: D close to d_base, lambda close to 1, A close to uniform
    p.fadc.pred_w = small_uniform({C, 1, 3, 3}, 0.05, rng.substream("pred_w"));
    p.fadc.pred_b = Tensor::full({1}, 1.0).set_requires_grad(true);
    p.fadc.lambda_w = small_uniform({1, C, 1, 1}, 0.05, rng.substream("lambda_w"));
    p.fadc.lambda_b = Tensor::zeros({1}).set_requires_grad(true);
    p.fadc.d_base = d_base;
    p.select.weight = small_uniform({bands, C, 1, 1}, 0.05, rng.substream("select_w"));
    p.select.bias = Tensor::zeros({bands}).set_requires_grad(true);
    return p;
}

SpatialAttentionParams init_spatial_attention(Rng& rng) {
    return {he_uniform({1, 2, 7, 7}, 2 * 49, rng.substream("weight")), Tensor::zeros({1}).set_requires_grad(true)};
}

}  // namespace mffd
