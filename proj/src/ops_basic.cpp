#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "mffd/ops.hpp"

namespace mffd::ops {
namespace {

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
};

std::vector<std::size_t> contiguous_strides(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// Strides of `in` viewed as `out`-ranked with zero stride on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    const auto offset = out.size() - in.size();
    const auto cs = contiguous_strides(in);
    std::vector<std::size_t> s(out.size(), 0);
    for (std::size_t i = 0; i < in.size(); ++i) s[offset + i] = (in[i] == 1 && out[offset + i] != 1) ? 0 : cs[i];
    return s;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    const auto rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i + a.size() >= rank ? a[i + a.size() - rank] : 1;
        const std::size_t db = i + b.size() >= rank ? b[i + b.size() - rank] : 1;
        require(da == db || da == 1 || db == 1, ErrorCode::ShapeMismatch,
                "cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        out[i] = std::max(da, db);
    }
    return {out, broadcast_strides(a, out), broadcast_strides(b, out)};
}

// Calls f(out_index, a_offset, b_offset) over every output element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t n = shape_numel(p.out);
    const std::size_t rank = p.out.size();
    if (rank == 0) {
        f(0, 0, 0);
        return;
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    const std::size_t inner = p.out[rank - 1];
    const std::size_t sa = p.stride_a[rank - 1], sb = p.stride_b[rank - 1];
    for (std::size_t i = 0; i < n; i += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(i + j, ia + j * sa, ib + j * sb);
        // Advance the odometer over all axes but the last.
        for (std::size_t ax = rank - 1; ax-- > 0;) {
            ++idx[ax];
            ia += p.stride_a[ax];
            ib += p.stride_b[ax];
            if (idx[ax] < p.out[ax]) break;
            ia -= idx[ax] * p.stride_a[ax];
            ib -= idx[ax] * p.stride_b[ax];
            idx[ax] = 0;
        }
    }
}

enum class BinaryKind { Add, Sub, Mul };

Tensor binary(const Tensor& a, const Tensor& b, BinaryKind kind, const char* name) {
    const auto plan = plan_broadcast(a.shape(), b.shape());
    std::vector<double> out(shape_numel(plan.out));
    const auto da = a.data();
    const auto db = b.data();
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            switch (kind) {
                case BinaryKind::Add: out[i] = da[i] + db[i]; break;
                case BinaryKind::Sub: out[i] = da[i] - db[i]; break;
                case BinaryKind::Mul: out[i] = da[i] * db[i]; break;
            }
        }
    } else {
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (kind) {
                case BinaryKind::Add: out[i] = da[ia] + db[ib]; break;
                case BinaryKind::Sub: out[i] = da[ia] - db[ib]; break;
                case BinaryKind::Mul: out[i] = da[ia] * db[ib]; break;
            }
        });
    }
    Tensor result(plan.out, std::move(out));
    check_finite(result, name);
    if (needs_grad({&a, &b})) {
        record_op(result, [a, b, result, plan, kind]() mutable {
            const auto g = result.grad();
            const bool ga_on = a.requires_grad(), gb_on = b.requires_grad();
            std::span<double> ga, gb;
            if (ga_on) ga = a.grad_buffer();
            if (gb_on) gb = b.grad_buffer();
            const auto va = a.data();
            const auto vb = b.data();
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
                switch (kind) {
                    case BinaryKind::Add:
                        if (ga_on) ga[ia] += g[i];
                        if (gb_on) gb[ib] += g[i];
                        break;
                    case BinaryKind::Sub:
                        if (ga_on) ga[ia] += g[i];
                        if (gb_on) gb[ib] -= g[i];
                        break;
                    case BinaryKind::Mul:
                        if (ga_on) ga[ia] += g[i] * vb[ib];
                        if (gb_on) gb[ib] += g[i] * va[ia];
                        break;
                }
            });
        });
    }
    return result;
}

// y = f(x) with dy/dx expressed through (x, y).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv, const char* name) {
    std::vector<double> out(x.numel());
    const auto v = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(v[i]);
    Tensor result(x.shape(), std::move(out));
    check_finite(result, name);
    if (needs_grad({&x})) {
        record_op(result, [x, result, deriv]() mutable {
            const auto g = result.grad();
            const auto xv = x.data();
            const auto yv = result.data();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i], yv[i]);
        });
    }
    return result;
}

struct AxisSplit {
    std::size_t outer, len, inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
    require(axis < s.size(), ErrorCode::InvalidArgument,
            "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit r{1, s[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

Shape reduced_shape(const Shape& s, std::size_t axis, bool keepdim) {
    Shape out = s;
    if (keepdim)
        out[axis] = 1;
    else
        out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinaryKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double factor) {
    return unary(x, [factor](double v) { return v * factor; }, [factor](double, double) { return factor; }, "scale");
}

Tensor add_scalar(const Tensor& x, double value) {
    return unary(x, [value](double v) { return v + value; }, [](double, double) { return 1.0; }, "add_scalar");
}

Tensor relu(const Tensor& x) {
    // written so NaN passes through
    return unary(x, [](double v) { return v <= 0.0 ? 0.0 : v; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; },
                 "relu");
}

Tensor sigmoid(const Tensor& x) {
    return unary(
        x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            const double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); }, "sigmoid");
}

Tensor exp(const Tensor& x) {
    return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; }, "exp");
}

Tensor log(const Tensor& x) {
    return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; }, "log");
}

Tensor square(const Tensor& x) {
    return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; }, "square");
}

Tensor sum(const Tensor& x) {
    const auto v = x.data();
    Tensor result = Tensor::scalar(std::accumulate(v.begin(), v.end(), 0.0));
    check_finite(result, "sum");
    if (needs_grad({&x})) {
        record_op(result, [x, result]() mutable {
            const double g = result.grad()[0];
            for (auto& gx : x.grad_buffer()) gx += g;
        });
    }
    return result;
}

Tensor mean(const Tensor& x) {
    require(x.numel() > 0, ErrorCode::InvalidArgument, "mean of empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const auto sp = split_axis(x.shape(), axis);
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const auto v = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < sp.len; ++k)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += v[(o * sp.len + k) * sp.inner + i];
    Tensor result(reduced_shape(x.shape(), axis, keepdim), std::move(out));
    check_finite(result, "sum_axis");
    if (needs_grad({&x})) {
        record_op(result, [x, result, sp]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t k = 0; k < sp.len; ++k)
                    for (std::size_t i = 0; i < sp.inner; ++i) gx[(o * sp.len + k) * sp.inner + i] += g[o * sp.inner + i];
        });
    }
    return result;
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const auto len = x.size(axis);
    require(len > 0, ErrorCode::InvalidArgument, "mean over empty axis");
    return scale(sum_axis(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor max_axis(const Tensor& x, std::size_t axis, bool keepdim) {
    const auto sp = split_axis(x.shape(), axis);
    require(sp.len > 0, ErrorCode::InvalidArgument, "max over empty axis");
    std::vector<double> out(sp.outer * sp.inner);
    std::vector<std::size_t> arg(out.size());
    const auto v = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            std::size_t best = (o * sp.len) * sp.inner + i;
            for (std::size_t k = 1; k < sp.len; ++k) {
                const std::size_t idx = (o * sp.len + k) * sp.inner + i;
                if (v[idx] > v[best]) best = idx;
            }
            out[o * sp.inner + i] = v[best];
            arg[o * sp.inner + i] = best;
        }
    Tensor result(reduced_shape(x.shape(), axis, keepdim), std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, arg = std::move(arg)]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
        });
    }
    return result;
}

Tensor softmax(const Tensor& x, std::size_t axis) {
    const auto sp = split_axis(x.shape(), axis);
    std::vector<double> out(x.numel());
    const auto v = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const auto at = [&](std::size_t k) { return (o * sp.len + k) * sp.inner + i; };
            double m = v[at(0)];
            for (std::size_t k = 1; k < sp.len; ++k) m = std::max(m, v[at(k)]);
            double z = 0.0;
            for (std::size_t k = 0; k < sp.len; ++k) {
                out[at(k)] = std::exp(v[at(k)] - m);
                z += out[at(k)];
            }
            for (std::size_t k = 0; k < sp.len; ++k) out[at(k)] /= z;
        }
    Tensor result(x.shape(), std::move(out));
    check_finite(result, "softmax");
    if (needs_grad({&x})) {
        record_op(result, [x, result, sp]() mutable {
            const auto g = result.grad();
            const auto y = result.data();
            auto gx = x.grad_buffer();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t i = 0; i < sp.inner; ++i) {
                    const auto at = [&](std::size_t k) { return (o * sp.len + k) * sp.inner + i; };
                    double dot = 0.0;
                    for (std::size_t k = 0; k < sp.len; ++k) dot += g[at(k)] * y[at(k)];
                    for (std::size_t k = 0; k < sp.len; ++k) gx[at(k)] += y[at(k)] * (g[at(k)] - dot);
                }
        });
    }
    return result;
}

Tensor reshape(const Tensor& x, Shape shape) {
    require(shape_numel(shape) == x.numel(), ErrorCode::ShapeMismatch,
            "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
    Tensor result(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
    if (needs_grad({&x})) {
        record_op(result, [x, result]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        });
    }
    return result;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
    const auto rank = x.dim();
    require(order.size() == rank, ErrorCode::InvalidArgument, "permute order has wrong rank");
    std::vector<bool> seen(rank, false);
    for (auto a : order) {
        require(a < rank && !seen[a], ErrorCode::InvalidArgument, "permute order is not a permutation");
        seen[a] = true;
    }
    const auto in_strides = contiguous_strides(x.shape());
    Shape out_shape(rank);
    std::vector<std::size_t> gather(rank);  // input stride for each output axis
    for (std::size_t i = 0; i < rank; ++i) {
        out_shape[i] = x.shape()[order[i]];
        gather[i] = in_strides[order[i]];
    }
    BroadcastPlan plan{out_shape, gather, std::vector<std::size_t>(rank, 0)};
    std::vector<double> out(x.numel());
    const auto v = x.data();
    if (rank == 0 || x.numel() == 0) {
        std::copy(v.begin(), v.end(), out.begin());
    } else {
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = v[ia]; });
    }
    Tensor result(out_shape, std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, plan]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { gx[ia] += g[i]; });
        });
    }
    return result;
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "concat of zero tensors");
    const Shape& ref = parts.front().shape();
    require(axis < ref.size(), ErrorCode::InvalidArgument, "concat axis out of range");
    Shape out_shape = ref;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        require(p.dim() == ref.size(), ErrorCode::ShapeMismatch, "concat rank mismatch");
        for (std::size_t i = 0; i < ref.size(); ++i)
            require(i == axis || p.shape()[i] == ref[i], ErrorCode::ShapeMismatch,
                    "concat shape mismatch: " + shape_str(p.shape()) + " vs " + shape_str(ref));
        out_shape[axis] += p.shape()[axis];
    }
    const auto sp = split_axis(out_shape, axis);
    std::vector<double> out(shape_numel(out_shape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t len = p.shape()[axis];
        const auto v = p.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner), len * sp.inner,
                        out.begin() + static_cast<std::ptrdiff_t>((o * sp.len + offset) * sp.inner));
        offset += len;
    }
    Tensor result(out_shape, std::move(out));
    bool any = false;
    for (const auto& p : parts) any = any || needs_grad({&p});
    if (any) {
        record_op(result, [parts, result, sp, axis]() mutable {
            const auto g = result.grad();
            std::size_t off = 0;
            for (auto& p : parts) {
                const std::size_t len = p.shape()[axis];
                if (p.requires_grad()) {
                    auto gp = p.grad_buffer();
                    for (std::size_t o = 0; o < sp.outer; ++o)
                        for (std::size_t j = 0; j < len * sp.inner; ++j)
                            gp[o * len * sp.inner + j] += g[(o * sp.len + off) * sp.inner + j];
                }
                off += len;
            }
        });
    }
    return result;
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
    const auto sp = split_axis(x.shape(), axis);
    require(start + length <= sp.len, ErrorCode::InvalidArgument, "narrow range exceeds axis length");
    Shape out_shape = x.shape();
    out_shape[axis] = length;
    std::vector<double> out(shape_numel(out_shape));
    const auto v = x.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((o * sp.len + start) * sp.inner), length * sp.inner,
                    out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
    Tensor result(out_shape, std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, sp, start, length]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t j = 0; j < length * sp.inner; ++j)
                    gx[(o * sp.len + start) * sp.inner + j] += g[o * length * sp.inner + j];
        });
    }
    return result;
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    const auto plan = plan_broadcast(x.shape(), shape);
    require(plan.out == shape, ErrorCode::ShapeMismatch,
            "cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(shape));
    std::vector<double> out(shape_numel(shape));
    const auto v = x.data();
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { out[i] = v[ia]; });
    Tensor result(shape, std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, plan]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t) { gx[ia] += g[i]; });
        });
    }
    return result;
}

Tensor pad_to_pow2(const Tensor& x) {
    require(x.dim() >= 2, ErrorCode::InvalidArgument, "pad_to_pow2 needs at least two axes");
    const std::size_t h = x.shape()[x.dim() - 2], w = x.shape()[x.dim() - 1];
    const std::size_t ph = std::bit_ceil(h), pw = std::bit_ceil(w);
    Shape out_shape = x.shape();
    out_shape[x.dim() - 2] = ph;
    out_shape[x.dim() - 1] = pw;
    const std::size_t planes = x.numel() / (h * w);
    std::vector<double> out(shape_numel(out_shape), 0.0);
    const auto v = x.data();
    for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t r = 0; r < h; ++r)
            std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((p * h + r) * w), w,
                        out.begin() + static_cast<std::ptrdiff_t>((p * ph + r) * pw));
    Tensor result(out_shape, std::move(out));
    if (needs_grad({&x})) {
        record_op(result, [x, result, planes, h, w, ph, pw]() mutable {
            const auto g = result.grad();
            auto gx = x.grad_buffer();
            for (std::size_t p = 0; p < planes; ++p)
                for (std::size_t r = 0; r < h; ++r)
                    for (std::size_t c = 0; c < w; ++c) gx[(p * h + r) * w + c] += g[(p * ph + r) * pw + c];
        });
    }
    return result;
}

}  // namespace mffd::ops
