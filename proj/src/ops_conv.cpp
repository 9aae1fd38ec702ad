#include <Eigen/Core>
#include <cmath>
#include <limits>
#include <memory>

#include "mffd/ops.hpp"

namespace mffd::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

struct ColGeom {
    std::size_t C, H, W, K, stride, Ho, Wo;
    std::size_t positions() const { return Ho * Wo; }
    std::size_t rows() const { return C * K * K; }
    long half() const { return static_cast<long>(K / 2); }
};

ColGeom make_geom(const Tensor& x, std::size_t K, std::size_t stride) {
    require(x.dim() == 4, ErrorCode::ShapeMismatch, "expected NCHW input, got " + shape_str(x.shape()));
    require(K % 2 == 1, ErrorCode::InvalidArgument, "kernel size must be odd");
    require(stride >= 1, ErrorCode::InvalidArgument, "stride must be >= 1");
    const auto& s = x.shape();
    return {s[1], s[2], s[3], K, stride, (s[2] + stride - 1) / stride, (s[3] + stride - 1) / stride};
}

// Integer-dilation gather: exact copies, zero outside.
void im2col_int(const double* x, const ColGeom& g, long dil, double* cols) {
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), h = g.half();
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t ky = 0; ky < g.K; ++ky)
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                double* row = cols + ((c * g.K + ky) * g.K + kx) * P;
                const long oy_off = (static_cast<long>(ky) - h) * dil;
                const long ox_off = (static_cast<long>(kx) - h) * dil;
                const double* plane = x + c * g.H * g.W;
                for (std::size_t oy = 0; oy < g.Ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride) + oy_off;
                    double* dst = row + oy * g.Wo;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst, dst + g.Wo, 0.0);
                        continue;
                    }
                    for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride) + ox_off;
                        dst[ox] = (ix >= 0 && ix < W) ? plane[iy * W + ix] : 0.0;
                    }
                }
            }
}

void col2im_int(const double* dcols, const ColGeom& g, long dil, double* dx) {
    const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), h = g.half();
    const std::size_t P = g.positions();
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t ky = 0; ky < g.K; ++ky)
            for (std::size_t kx = 0; kx < g.K; ++kx) {
                const double* row = dcols + ((c * g.K + ky) * g.K + kx) * P;
                const long oy_off = (static_cast<long>(ky) - h) * dil;
                const long ox_off = (static_cast<long>(kx) - h) * dil;
                double* plane = dx + c * g.H * g.W;
                for (std::size_t oy = 0; oy < g.Ho; ++oy) {
                    const long iy = static_cast<long>(oy * g.stride) + oy_off;
                    if (iy < 0 || iy >= H) continue;
                    for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                        const long ix = static_cast<long>(ox * g.stride) + ox_off;
                        if (ix >= 0 && ix < W) plane[iy * W + ix] += row[oy * g.Wo + ox];
                    }
                }
            }
}

// Bilinear sampling plan for every (tap, position) pair: the four corner
// offsets into a channel plane, their weights, and the weights' derivatives
// with respect to the dilation. Corners outside the image get weight 0.
// The plan depends only on geometry and dilation, so it is shared by all
// channels.
struct TapTable {
    std::vector<std::size_t> idx;  // [K*K, P, 4]
    std::vector<double> w, dw;

    template <class DilFn>
    void build(const ColGeom& g, DilFn dil, bool with_deriv) {
        const long H = static_cast<long>(g.H), W = static_cast<long>(g.W), h = g.half();
        const std::size_t P = g.positions(), taps = g.K * g.K;
        idx.assign(taps * P * 4, 0);
        w.assign(taps * P * 4, 0.0);
        dw.assign(with_deriv ? taps * P * 4 : 0, 0.0);
        for (std::size_t k = 0; k < taps; ++k) {
            const double dy = static_cast<double>(static_cast<long>(k / g.K) - h);
            const double dx = static_cast<double>(static_cast<long>(k % g.K) - h);
            for (std::size_t oy = 0; oy < g.Ho; ++oy)
                for (std::size_t ox = 0; ox < g.Wo; ++ox) {
                    const std::size_t p = oy * g.Wo + ox;
                    const double d = dil(p);
                    const std::size_t base = (k * P + p) * 4;
                    if (!std::isfinite(d)) {
                        // poison the samples instead of indexing with a NaN offset
                        for (int j = 0; j < 4; ++j) {
                            w[base + j] = std::numeric_limits<double>::quiet_NaN();
                            if (with_deriv) dw[base + j] = std::numeric_limits<double>::quiet_NaN();
                        }
                        continue;
                    }
                    const double y = static_cast<double>(oy * g.stride) + dy * d;
                    const double x = static_cast<double>(ox * g.stride) + dx * d;
                    const double fy0 = std::floor(y), fx0 = std::floor(x);
                    const long y0 = static_cast<long>(fy0), x0 = static_cast<long>(fx0);
                    const double fy = y - fy0, fx = x - fx0;
                    const double cw[4] = {(1.0 - fy) * (1.0 - fx), (1.0 - fy) * fx, fy * (1.0 - fx), fy * fx};
                    const double cd[4] = {-dy * (1.0 - fx) - dx * (1.0 - fy), -dy * fx + dx * (1.0 - fy),
                                          dy * (1.0 - fx) - dx * fy, dy * fx + dx * fy};
                    for (int j = 0; j < 4; ++j) {
                        const long yy = y0 + j / 2, xx = x0 + j % 2;
                        if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                        idx[base + j] = static_cast<std::size_t>(yy * W + xx);
                        w[base + j] = cw[j];
                        if (with_deriv) dw[base + j] = cd[j];
                    }
                }
        }
    }
};

void im2col_bilinear(const double* x, const ColGeom& g, const TapTable& t, double* cols) {
    const std::size_t P = g.positions(), taps = g.K * g.K;
    for (std::size_t c = 0; c < g.C; ++c) {
        const double* plane = x + c * g.H * g.W;
        for (std::size_t k = 0; k < taps; ++k) {
            double* row = cols + (c * taps + k) * P;
            const std::size_t* ii = t.idx.data() + k * P * 4;
            const double* ww = t.w.data() + k * P * 4;
            for (std::size_t p = 0; p < P; ++p, ii += 4, ww += 4)
                row[p] = ww[0] * plane[ii[0]] + ww[1] * plane[ii[1]] + ww[2] * plane[ii[2]] + ww[3] * plane[ii[3]];
        }
    }
}

// Adjoint of im2col_bilinear. Accumulates into dx and, when non-null, the
// per-position dilation gradient ddil[p] (needs a table built with derivatives).
void col2im_bilinear(const double* dcols, const double* x, const ColGeom& g, const TapTable& t, double* dx,
                     double* ddil) {
    const std::size_t P = g.positions(), taps = g.K * g.K;
    for (std::size_t c = 0; c < g.C; ++c) {
        const double* plane = x + c * g.H * g.W;
        double* dplane = dx ? dx + c * g.H * g.W : nullptr;
        for (std::size_t k = 0; k < taps; ++k) {
            const double* row = dcols + (c * taps + k) * P;
            const std::size_t* ii = t.idx.data() + k * P * 4;
            const double* ww = t.w.data() + k * P * 4;
            const double* dd = ddil ? t.dw.data() + k * P * 4 : nullptr;
            for (std::size_t p = 0; p < P; ++p) {
                const double gr = row[p];
                const std::size_t* i4 = ii + p * 4;
                if (dplane) {
                    const double* w4 = ww + p * 4;
                    dplane[i4[0]] += gr * w4[0];
                    dplane[i4[1]] += gr * w4[1];
                    dplane[i4[2]] += gr * w4[2];
                    dplane[i4[3]] += gr * w4[3];
                }
                if (dd) {
                    const double* d4 = dd + p * 4;
                    ddil[p] += gr * (d4[0] * plane[i4[0]] + d4[1] * plane[i4[1]] + d4[2] * plane[i4[2]] +
                                     d4[3] * plane[i4[3]]);
                }
            }
        }
    }
}

bool is_integer(double v) { return std::floor(v) == v; }

struct MatmulForm {
    std::size_t batch_a, batch_b, batch, M, K, N;  // batch_x == 0 means broadcast 2-D operand
};

MatmulForm matmul_form(const Tensor& a, const Tensor& b) {
    require((a.dim() == 2 || a.dim() == 3) && (b.dim() == 2 || b.dim() == 3), ErrorCode::ShapeMismatch,
            "matmul expects 2-D or 3-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    MatmulForm f{};
    f.batch_a = a.dim() == 3 ? a.shape()[0] : 0;
    f.batch_b = b.dim() == 3 ? b.shape()[0] : 0;
    require(f.batch_a == 0 || f.batch_b == 0 || f.batch_a == f.batch_b, ErrorCode::ShapeMismatch,
            "matmul batch mismatch");
    f.batch = std::max<std::size_t>({f.batch_a, f.batch_b, 1});
    f.M = a.shape()[a.dim() - 2];
    f.K = a.shape()[a.dim() - 1];
    f.N = b.shape()[b.dim() - 1];
    require(b.shape()[b.dim() - 2] == f.K, ErrorCode::ShapeMismatch,
            "matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    return f;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    const auto f = matmul_form(a, b);
    const bool batched = f.batch_a || f.batch_b;
    Shape out_shape = batched ? Shape{f.batch, f.M, f.N} : Shape{f.M, f.N};
    std::vector<double> out(shape_numel(out_shape));
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    for (std::size_t i = 0; i < f.batch; ++i) {
        MapC A(pa + (f.batch_a ? i * f.M * f.K : 0), static_cast<Eigen::Index>(f.M), static_cast<Eigen::Index>(f.K));
        MapC B(pb + (f.batch_b ? i * f.K * f.N : 0), static_cast<Eigen::Index>(f.K), static_cast<Eigen::Index>(f.N));
        MapM C(out.data() + i * f.M * f.N, static_cast<Eigen::Index>(f.M), static_cast<Eigen::Index>(f.N));
        C.noalias() = A * B;
    }
    Tensor result(out_shape, std::move(out));
    check_finite(result, "matmul");
    if (needs_grad({&a, &b})) {
        record_op(result, [a, b, result, f]() mutable {
            const double* g = result.grad().data();
            const double* pa = a.data().data();
            const double* pb = b.data().data();
            double* ga = a.requires_grad() ? a.grad_buffer().data() : nullptr;
            double* gb = b.requires_grad() ? b.grad_buffer().data() : nullptr;
            const auto M = static_cast<Eigen::Index>(f.M), K = static_cast<Eigen::Index>(f.K),
                       N = static_cast<Eigen::Index>(f.N);
            for (std::size_t i = 0; i < f.batch; ++i) {
                MapC G(g + i * f.M * f.N, M, N);
                if (ga) {
                    MapC B(pb + (f.batch_b ? i * f.K * f.N : 0), K, N);
                    MapM GA(ga + (f.batch_a ? i * f.M * f.K : 0), M, K);
                    GA.noalias() += G * B.transpose();
                }
                if (gb) {
                    MapC A(pa + (f.batch_a ? i * f.M * f.K : 0), M, K);
                    MapM GB(gb + (f.batch_b ? i * f.K * f.N : 0), K, N);
                    GB.noalias() += A.transpose() * G;
                }
            }
        });
    }
    return result;
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, const Conv2dOptions& opts) {
    require(w.dim() == 4, ErrorCode::ShapeMismatch, "conv2d weight must be OIKK, got " + shape_str(w.shape()));
    require(w.shape()[2] == w.shape()[3], ErrorCode::ShapeMismatch, "conv2d kernel must be square");
    require(opts.dilation > 0.0 && std::isfinite(opts.dilation), ErrorCode::InvalidArgument,
            "conv2d dilation must be positive");
    require(opts.groups >= 1, ErrorCode::InvalidArgument, "groups must be >= 1");
    const auto g = make_geom(x, w.shape()[2], opts.stride);
    const std::size_t N = x.shape()[0], O = w.shape()[0], groups = opts.groups;
    require(g.C % groups == 0 && O % groups == 0, ErrorCode::ShapeMismatch, "channels not divisible by groups");
    require(w.shape()[1] * groups == g.C, ErrorCode::ShapeMismatch,
            "conv2d channel mismatch: input has " + std::to_string(g.C) + " channels, weight expects " +
                std::to_string(w.shape()[1] * groups));
    require(!bias.defined() || (bias.dim() == 1 && bias.shape()[0] == O), ErrorCode::ShapeMismatch,
            "conv2d bias must have shape [O]");

    const std::size_t P = g.positions(), rows = g.rows(), rows_g = rows / groups, O_g = O / groups;
    const bool int_dil = is_integer(opts.dilation);
    const long idil = static_cast<long>(opts.dilation);
    const double dil = opts.dilation;
    auto table = std::make_shared<TapTable>();
    if (!int_dil) table->build(g, [dil](std::size_t) { return dil; }, false);
    auto build_cols = [g, int_dil, idil, table](const double* xn, double* cols) {
        if (int_dil)
            im2col_int(xn, g, idil, cols);
        else
            im2col_bilinear(xn, g, *table, cols);
    };

    std::vector<double> out(N * O * P);
    std::vector<double> cols(rows * P);
    const double* px = x.data().data();
    const double* pw = w.data().data();
    for (std::size_t n = 0; n < N; ++n) {
        build_cols(px + n * g.C * g.H * g.W, cols.data());
        for (std::size_t gi = 0; gi < groups; ++gi) {
            MapC Wg(pw + gi * O_g * rows_g, static_cast<Eigen::Index>(O_g), static_cast<Eigen::Index>(rows_g));
            MapC Cg(cols.data() + gi * rows_g * P, static_cast<Eigen::Index>(rows_g), static_cast<Eigen::Index>(P));
            MapM Y(out.data() + (n * O + gi * O_g) * P, static_cast<Eigen::Index>(O_g), static_cast<Eigen::Index>(P));
            Y.noalias() = Wg * Cg;
        }
        if (bias.defined())
            for (std::size_t o = 0; o < O; ++o) {
                const double bv = bias.data()[o];
                double* y = out.data() + (n * O + o) * P;
                for (std::size_t p = 0; p < P; ++p) y[p] += bv;
            }
    }
    Tensor result({N, O, g.Ho, g.Wo}, std::move(out));
    check_finite(result, "conv2d");
    if (needs_grad({&x, &w, &bias})) {
        record_op(result, [x, w, bias, result, g, N, O, groups, build_cols, int_dil, idil, table]() mutable {
            const std::size_t P = g.positions(), rows = g.rows(), rows_g = rows / groups, O_g = O / groups;
            const double* gy = result.grad().data();
            const double* px = x.data().data();
            const double* pw = w.data().data();
            double* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
            double* gw = w.requires_grad() ? w.grad_buffer().data() : nullptr;
            if (bias.defined() && bias.requires_grad()) {
                auto gb = bias.grad_buffer();
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t o = 0; o < O; ++o) {
                        const double* yy = gy + (n * O + o) * P;
                        double s = 0.0;
                        for (std::size_t p = 0; p < P; ++p) s += yy[p];
                        gb[o] += s;
                    }
            }
            if (!gx && !gw) return;
            std::vector<double> cols(rows * P), dcols(gx ? rows * P : 0);
            for (std::size_t n = 0; n < N; ++n) {
                const double* xn = px + n * g.C * g.H * g.W;
                if (gw) build_cols(xn, cols.data());
                for (std::size_t gi = 0; gi < groups; ++gi) {
                    MapC GY(gy + (n * O + gi * O_g) * P, static_cast<Eigen::Index>(O_g), static_cast<Eigen::Index>(P));
                    if (gw) {
                        MapC Cg(cols.data() + gi * rows_g * P, static_cast<Eigen::Index>(rows_g),
                                static_cast<Eigen::Index>(P));
                        MapM GW(gw + gi * O_g * rows_g, static_cast<Eigen::Index>(O_g), static_cast<Eigen::Index>(rows_g));
                        GW.noalias() += GY * Cg.transpose();
                    }
                    if (gx) {
                        MapC Wg(pw + gi * O_g * rows_g, static_cast<Eigen::Index>(O_g), static_cast<Eigen::Index>(rows_g));
                        MapM DC(dcols.data() + gi * rows_g * P, static_cast<Eigen::Index>(rows_g),
                                static_cast<Eigen::Index>(P));
                        DC.noalias() = Wg.transpose() * GY;
                    }
                }
                if (gx) {
                    double* gxn = gx + n * g.C * g.H * g.W;
                    if (int_dil)
                        col2im_int(dcols.data(), g, idil, gxn);
                    else
                        col2im_bilinear(dcols.data(), xn, g, *table, gxn, nullptr);
                }
            }
        });
    }
    return result;
}

Tensor dilated_im2col(const Tensor& x, std::size_t kernel, std::size_t stride, const Tensor& dilation) {
    const auto g = make_geom(x, kernel, stride);
    const std::size_t N = x.shape()[0], P = g.positions(), rows = g.rows();
    require(dilation.dim() == 4 && dilation.shape() == Shape({N, 1, g.Ho, g.Wo}), ErrorCode::ShapeMismatch,
            "dilation map must be [N,1,Ho,Wo], got " + shape_str(dilation.shape()));
    // NaN is let through (its samples come out NaN) so divergence surfaces in the loss
    for (double d : dilation.data())
        require(!(d < 0.0) && d != std::numeric_limits<double>::infinity(), ErrorCode::InvalidArgument,
                "dilation values must be finite and >= 0");
    std::vector<double> out(N * rows * P);
    const double* px = x.data().data();
    const double* pd = dilation.data().data();
    TapTable table;
    for (std::size_t n = 0; n < N; ++n) {
        const double* dn = pd + n * P;
        table.build(g, [dn](std::size_t p) { return dn[p]; }, false);
        im2col_bilinear(px + n * g.C * g.H * g.W, g, table, out.data() + n * rows * P);
    }
    Tensor result({N, rows, P}, std::move(out));
    check_finite(result, "dilated_im2col");
    if (needs_grad({&x, &dilation})) {
        record_op(result, [x, dilation, result, g, N]() mutable {
            const std::size_t P = g.positions(), rows = g.rows();
            const double* gc = result.grad().data();
            const double* px = x.data().data();
            const double* pd = dilation.data().data();
            double* gx = x.requires_grad() ? x.grad_buffer().data() : nullptr;
            double* gd = dilation.requires_grad() ? dilation.grad_buffer().data() : nullptr;
            TapTable table;
            for (std::size_t n = 0; n < N; ++n) {
                const double* dn = pd + n * P;
                table.build(g, [dn](std::size_t p) { return dn[p]; }, gd != nullptr);
                col2im_bilinear(gc + n * rows * P, px + n * g.C * g.H * g.W, g, table,
                                gx ? gx + n * g.C * g.H * g.W : nullptr, gd ? gd + n * P : nullptr);
            }
        });
    }
    return result;
}

Tensor conv2d_dilation_map(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                           const Tensor& dilation) {
    require(w.dim() == 4 && w.shape()[2] == w.shape()[3], ErrorCode::ShapeMismatch,
            "weight must be OIKK with square kernel");
    require(x.dim() == 4 && w.shape()[1] == x.shape()[1], ErrorCode::ShapeMismatch,
            "conv channel mismatch between input and weight");
    const std::size_t N = x.shape()[0], O = w.shape()[0], K = w.shape()[2];
    Tensor cols = dilated_im2col(x, K, stride, dilation);
    Tensor w2 = reshape(w, {O, w.shape()[1] * K * K});
    Tensor y = matmul(w2, cols);  // [N, O, P]
    const std::size_t Ho = dilation.shape()[2], Wo = dilation.shape()[3];
    y = reshape(y, {N, O, Ho, Wo});
    if (bias.defined()) y = add(y, reshape(bias, {1, O, 1, 1}));
    return y;
}

}  // namespace mffd::ops
