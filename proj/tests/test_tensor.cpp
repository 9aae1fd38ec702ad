#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gradcheck.hpp"
#include "mffd/ops.hpp"
#include "oracles.hpp"

using namespace mffd;
using mffd::test::gradcheck;
using mffd::test::project;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor::uniform(std::move(s), rng, lo, hi);
}

// Small integers: every summation order is exact in float64.
Tensor integer_tensor(Shape s, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> v(shape_numel(s));
    for (auto& x : v) x = static_cast<double>(static_cast<long>(rng.below(9)) - 4);
    return Tensor(std::move(s), std::move(v));
}

}  // namespace

TEST(Tensor, ConstructionChecksShape) {
    EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0}), Error);
    Tensor t({2, 3}, std::vector<double>(6, 1.0));
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_FALSE(t.has_grad());
}

TEST(Conv2d, AllOnesCenterIsNine) {
    Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor y = ops::conv2d(x, w, Tensor{});
    ASSERT_EQ(y.shape(), Shape({1, 1, 3, 3}));
    EXPECT_DOUBLE_EQ(y[4], 9.0);
    EXPECT_DOUBLE_EQ(y[0], 4.0);  // corner sees a 2x2 overlap
}

TEST(Conv2d, IdentityKernelIsIdentity) {
    Tensor x = random_tensor({2, 3, 5, 7}, 1);
    std::vector<double> wv(3 * 3 * 9, 0.0);
    for (std::size_t c = 0; c < 3; ++c) wv[(c * 3 + c) * 9 + 4] = 1.0;
    Tensor y = ops::conv2d(x, Tensor({3, 3, 3, 3}, wv), Tensor{});
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(y[i], x[i]);
}

TEST(Conv2d, IntegerDilationEqualsNaiveLoopExactly) {
    for (long dil : {1L, 2L, 3L})
        for (std::size_t stride : {1u, 2u}) {
            Tensor x = integer_tensor({2, 3, 9, 8}, 10 + dil);
            Tensor w = integer_tensor({4, 3, 3, 3}, 20 + dil);
            Tensor b = integer_tensor({4}, 30);
            Tensor y = ops::conv2d(x, w, b, {stride, static_cast<double>(dil), 1});
            const auto ref = test::naive_conv2d(x, w, {b.data().begin(), b.data().end()}, stride, dil);
            ASSERT_EQ(y.numel(), ref.size());
            for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_EQ(y[i], ref[i]) << "dil " << dil << " stride " << stride;
        }
    // Real-valued data: summation order differs, agreement to rounding.
    Tensor x = random_tensor({1, 2, 6, 6}, 5);
    Tensor w = random_tensor({3, 2, 5, 5}, 6);
    Tensor y = ops::conv2d(x, w, Tensor{}, {1, 2.0, 1});
    const auto ref = test::naive_conv2d(x, w, {}, 1, 2);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(Conv2d, FractionalDilationMatchesScalarBilinearOracle) {
    std::vector<double> ramp(2 * 8 * 8);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < 8; ++y)
            for (std::size_t x = 0; x < 8; ++x) ramp[(c * 8 + y) * 8 + x] = 0.25 * x + 0.5 * y + c;
    Tensor img({1, 2, 8, 8}, ramp);
    Tensor w = random_tensor({3, 2, 3, 3}, 7);
    Tensor y = ops::conv2d(img, w, Tensor{}, {1, 1.5, 1});
    const auto ref = test::naive_fractional_conv2d(img, w, std::vector<double>(64, 1.5));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);

    // Per-position map through the composed path.
    Rng rng(8);
    Tensor dmap = Tensor::uniform({1, 1, 8, 8}, rng, 0.0, 2.5);
    Tensor y2 = ops::conv2d_dilation_map(img, w, Tensor{}, 1, dmap);
    const auto ref2 = test::naive_fractional_conv2d(img, w, {dmap.data().begin(), dmap.data().end()});
    for (std::size_t i = 0; i < ref2.size(); ++i) EXPECT_NEAR(y2[i], ref2[i], 1e-12);
}

TEST(Conv2d, GroupedMatchesPerGroupConvolution) {
    Tensor x = random_tensor({1, 4, 6, 6}, 11);
    Tensor w = random_tensor({4, 1, 3, 3}, 12);
    Tensor y = ops::conv2d(x, w, Tensor{}, {1, 1.0, 4});
    for (std::size_t c = 0; c < 4; ++c) {
        Tensor xc = ops::narrow(x, 1, c, 1);
        Tensor wc = ops::narrow(w, 0, c, 1);
        Tensor yc = ops::conv2d(xc, wc, Tensor{});
        for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(y[c * 36 + i], yc[i], 1e-14);
    }
}

TEST(Conv2d, Errors) {
    Tensor x = Tensor::zeros({1, 2, 4, 4});
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 3, 3, 3}), Tensor{}), Error);   // channel mismatch
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor{}, {1, 0.0, 1}), Error);
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor{}, {1, -1.0, 1}), Error);
    EXPECT_THROW(ops::conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 2, 3, 3}), Tensor{}), Error);
    EXPECT_THROW(ops::conv2d(x, Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2})), Error);
    EXPECT_THROW(ops::dilated_im2col(x, 3, 1, Tensor::full({1, 1, 4, 4}, -0.5)), Error);
    EXPECT_THROW(ops::dilated_im2col(x, 3, 1, Tensor::full({1, 1, 4, 4}, INFINITY)), Error);
}

TEST(Conv2d, NanDilationPropagates) {
    Tensor x = Tensor::full({1, 1, 4, 4}, 1.0);
    Tensor d = Tensor::full({1, 1, 4, 4}, 1.0);
    d.mutable_data()[5] = std::nan("");
    const Tensor cols = ops::dilated_im2col(x, 3, 1, d);  // [1, 9, 16]
    for (std::size_t k = 0; k < 9; ++k) {
        EXPECT_TRUE(std::isnan(cols[k * 16 + 5]));
        EXPECT_FALSE(std::isnan(cols[k * 16 + 6]));
    }
}

TEST(Ops, BasicValues) {
    Tensor s = ops::softmax(Tensor({3}, {0.0, 0.0, 0.0}), 0);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(s[i], 1.0 / 3.0);
    Tensor r = ops::relu(Tensor({2}, {-2.5, 3.0}));
    EXPECT_EQ(r[0], 0.0);
    EXPECT_EQ(r[1], 3.0);
    EXPECT_THROW(ops::softmax(Tensor::zeros({2, 2}), 2), Error);
}

TEST(Ops, SoftmaxIsADistribution) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Tensor x = random_tensor({3, 7, 4}, seed, -30.0, 30.0);
        for (std::size_t axis = 0; axis < 3; ++axis) {
            Tensor y = ops::softmax(x, axis);
            Tensor sums = ops::sum_axis(y, axis);
            for (double v : y.data()) EXPECT_GE(v, 0.0);
            for (double v : sums.data()) EXPECT_NEAR(v, 1.0, 1e-12);
        }
    }
}

TEST(Ops, DropoutContract) {
    Tensor x = random_tensor({4, 8}, 3);
    Rng rng(1);
    Tensor e = ops::dropout(x, 0.2, false, rng);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(e[i], x[i]);

    Rng r1(5), r2(5);
    Tensor a = ops::dropout(x, 0.2, true, r1);
    Tensor b = ops::dropout(x, 0.2, true, r2);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        EXPECT_EQ(a[i], b[i]);
        EXPECT_TRUE(a[i] == 0.0 || std::abs(a[i] - x[i] / 0.8) < 1e-15);
    }
    EXPECT_THROW(ops::dropout(x, 1.0, true, rng), Error);
    EXPECT_THROW(ops::dropout(x, -0.1, true, rng), Error);
}

TEST(Autodiff, SumOfSquares) {
    Tensor x({3}, {1.0, 2.0, 3.0}, true);
    backward(ops::sum(ops::square(x)));
    ASSERT_TRUE(x.has_grad());
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 4.0);
    EXPECT_EQ(x.grad()[2], 6.0);
    EXPECT_TRUE(Tape::current().empty());  // consumed
}

TEST(Autodiff, Misuse) {
    Tape::current().clear();
    Tensor x({2}, {1.0, 2.0}, true);
    Tensor y = ops::scale(x, 2.0);
    EXPECT_THROW(backward(y), Error);  // not scalar
    Tape::current().clear();
    Tensor c = Tensor::scalar(1.0);
    EXPECT_THROW(backward(c), Error);  // empty tape
}

TEST(Autodiff, NoGradGuardStopsRecording) {
    Tape::current().clear();
    Tensor x({2}, {1.0, 2.0}, true);
    {
        NoGradGuard g;
        Tensor y = ops::sum(x);
        EXPECT_FALSE(y.requires_grad());
    }
    EXPECT_TRUE(Tape::current().empty());
}

TEST(Autodiff, ConvFiniteDifferences) {
    for (double dil : {1.0, 2.0, 1.5}) {
        auto res = gradcheck(
            [dil](std::vector<Tensor>& in) {
                return ops::sum(ops::conv2d(in[0], in[1], in[2], {1, dil, 1}));
            },
            {random_tensor({2, 2, 5, 5}, 1), random_tensor({3, 2, 3, 3}, 2), random_tensor({3}, 3)});
        EXPECT_LT(res.max_rel_error, 1e-4) << "dilation " << dil;
    }
    auto strided = gradcheck(
        [](std::vector<Tensor>& in) { return project(ops::conv2d(in[0], in[1], Tensor{}, {2, 1.0, 2})); },
        {random_tensor({1, 4, 6, 5}, 4), random_tensor({2, 2, 3, 3}, 5)});
    EXPECT_LT(strided.max_rel_error, 1e-4);
}

TEST(Autodiff, DilationMapFiniteDifferences) {
    Rng rng(17);
    Tensor dmap = Tensor::uniform({2, 1, 5, 5}, rng, 0.2, 0.8);
    auto res = gradcheck(
        [](std::vector<Tensor>& in) { return project(ops::dilated_im2col(in[0], 3, 1, in[1])); },
        {random_tensor({2, 2, 5, 5}, 18), dmap});
    EXPECT_LT(res.max_rel_error, 1e-4);
    Tensor dmap2 = Tensor::uniform({1, 1, 3, 3}, rng, 1.1, 1.9);
    auto res2 = gradcheck(
        [](std::vector<Tensor>& in) { return project(ops::conv2d_dilation_map(in[0], in[1], in[2], 2, in[3])); },
        {random_tensor({1, 2, 6, 6}, 19), random_tensor({2, 2, 3, 3}, 20), random_tensor({2}, 21), dmap2});
    EXPECT_LT(res2.max_rel_error, 1e-4);
}

TEST(Autodiff, AttentionStackFiniteDifferences) {
    // softmax(q K^T / sqrt(d)) V over 5 positions
    auto res = gradcheck(
        [](std::vector<Tensor>& in) {
            Tensor q = ops::matmul(in[0], in[1]);           // [1, 4]
            Tensor k = ops::matmul(in[2], in[3]);           // [5, 4]
            Tensor v = ops::matmul(in[2], in[4]);           // [5, 3]
            Tensor scores = ops::scale(ops::matmul(q, ops::permute(k, {1, 0})), 0.5);  // [1, 5]
            Tensor att = ops::softmax(scores, 1);
            return project(ops::matmul(att, v));
        },
        {random_tensor({1, 6}, 1), random_tensor({6, 4}, 2), random_tensor({5, 3}, 3), random_tensor({3, 4}, 4),
         random_tensor({3, 3}, 5)});
    EXPECT_LT(res.max_rel_error, 1e-4);
}

// Property harness: every differentiable op against central differences.
TEST(Autodiff, EveryOpMatchesFiniteDifferences) {
    struct Case {
        const char* name;
        std::function<Tensor(std::vector<Tensor>&)> f;
        std::vector<Tensor> inputs;
    };
    Rng rng(123);
    auto positive = [&](Shape s) { return Tensor::uniform(std::move(s), rng, 0.5, 2.0); };
    auto bnparam = [&](std::size_t c, double lo, double hi) { return Tensor::uniform({c}, rng, lo, hi); };
    std::vector<Case> cases = {
        {"add_broadcast", [](auto& in) { return project(ops::add(in[0], in[1])); },
         {random_tensor({2, 3, 4}, 1), random_tensor({3, 1}, 2)}},
        {"sub_broadcast", [](auto& in) { return project(ops::sub(in[0], in[1])); },
         {random_tensor({4}, 3), random_tensor({2, 3, 4}, 4)}},
        {"mul_broadcast", [](auto& in) { return project(ops::mul(in[0], in[1])); },
         {random_tensor({2, 1, 4}, 5), random_tensor({2, 3, 1}, 6)}},
        {"scale", [](auto& in) { return project(ops::scale(in[0], -1.7)); }, {random_tensor({5}, 7)}},
        {"add_scalar", [](auto& in) { return project(ops::add_scalar(in[0], 0.3)); }, {random_tensor({5}, 8)}},
        {"relu", [](auto& in) { return project(ops::relu(in[0])); }, {random_tensor({3, 5}, 9)}},
        {"sigmoid", [](auto& in) { return project(ops::sigmoid(in[0])); }, {random_tensor({3, 5}, 10, -4, 4)}},
        {"exp", [](auto& in) { return project(ops::exp(in[0])); }, {random_tensor({6}, 11)}},
        {"log", [](auto& in) { return project(ops::log(in[0])); }, {positive({6})}},
        {"square", [](auto& in) { return project(ops::square(in[0])); }, {random_tensor({6}, 12)}},
        {"mean", [](auto& in) { return ops::mean(ops::square(in[0])); }, {random_tensor({2, 3}, 13)}},
        {"sum_axis", [](auto& in) { return project(ops::sum_axis(in[0], 1, true)); }, {random_tensor({2, 3, 4}, 14)}},
        {"mean_axis", [](auto& in) { return project(ops::mean_axis(in[0], 2)); }, {random_tensor({2, 3, 4}, 15)}},
        {"max_axis", [](auto& in) { return project(ops::max_axis(in[0], 1, true)); }, {random_tensor({2, 5, 3}, 16)}},
        {"matmul_2d", [](auto& in) { return project(ops::matmul(in[0], in[1])); },
         {random_tensor({3, 4}, 17), random_tensor({4, 2}, 18)}},
        {"matmul_batched", [](auto& in) { return project(ops::matmul(in[0], in[1])); },
         {random_tensor({2, 3, 4}, 19), random_tensor({2, 4, 2}, 20)}},
        {"matmul_bcast_left", [](auto& in) { return project(ops::matmul(in[0], in[1])); },
         {random_tensor({3, 4}, 21), random_tensor({2, 4, 5}, 22)}},
        {"matmul_bcast_right", [](auto& in) { return project(ops::matmul(in[0], in[1])); },
         {random_tensor({2, 3, 4}, 23), random_tensor({4, 5}, 24)}},
        {"softmax", [](auto& in) { return project(ops::softmax(in[0], 1)); }, {random_tensor({2, 5, 3}, 25, -3, 3)}},
        {"reshape", [](auto& in) { return project(ops::reshape(in[0], {6, 2})); }, {random_tensor({3, 4}, 26)}},
        {"permute", [](auto& in) { return project(ops::permute(in[0], {2, 0, 1})); }, {random_tensor({2, 3, 4}, 27)}},
        {"concat", [](auto& in) { return project(ops::concat({in[0], in[1]}, 1)); },
         {random_tensor({2, 2, 3}, 28), random_tensor({2, 4, 3}, 29)}},
        {"narrow", [](auto& in) { return project(ops::narrow(in[0], 1, 1, 2)); }, {random_tensor({2, 4, 3}, 30)}},
        {"broadcast_to", [](auto& in) { return project(ops::broadcast_to(in[0], {2, 3, 4})); },
         {random_tensor({3, 1}, 31)}},
        {"pad_to_pow2", [](auto& in) { return project(ops::pad_to_pow2(in[0])); }, {random_tensor({2, 3, 5}, 32)}},
        {"conv2d", [](auto& in) { return project(ops::conv2d(in[0], in[1], in[2], {1, 1.0, 1})); },
         {random_tensor({2, 2, 5, 4}, 33), random_tensor({3, 2, 3, 3}, 34), random_tensor({3}, 35)}},
        {"conv2d_depthwise", [](auto& in) { return project(ops::conv2d(in[0], in[1], Tensor{}, {1, 1.0, 3})); },
         {random_tensor({1, 3, 4, 4}, 36), random_tensor({3, 1, 3, 3}, 37)}},
        {"batchnorm_train",
         [](auto& in) { return project(ops::batchnorm_train(in[0], in[1], in[2])); },
         {random_tensor({3, 2, 3, 3}, 38), bnparam(2, 0.5, 1.5), bnparam(2, -0.5, 0.5)}},
        {"batchnorm_inference",
         [&](auto& in) {
             return project(ops::batchnorm_inference(in[0], in[1], in[2], Tensor({2}, {0.1, -0.2}),
                                                     Tensor({2}, {0.9, 1.3})));
         },
         {random_tensor({2, 2, 3, 3}, 39), bnparam(2, 0.5, 1.5), bnparam(2, -0.5, 0.5)}},
        {"dropout",
         [](auto& in) {
             Rng r(4);
             return project(ops::dropout(in[0], 0.3, true, r));
         },
         {random_tensor({4, 5}, 40)}},
        {"fft2", [](auto& in) { return project(ops::fft2(in[0])); }, {random_tensor({2, 4, 8}, 41)}},
        {"fft2_complex", [](auto& in) { return project(ops::fft2_complex(in[0])); }, {random_tensor({4, 4, 2}, 42)}},
        {"ifft2", [](auto& in) { return project(ops::ifft2(in[0])); }, {random_tensor({2, 4, 4, 2}, 43)}},
        {"complex_parts",
         [](auto& in) { return ops::add(project(ops::complex_real(in[0])), project(ops::complex_imag(in[0]), 7)); },
         {random_tensor({3, 2}, 44)}},
    };
    for (auto& c : cases) {
        auto res = gradcheck(c.f, c.inputs);
        EXPECT_LT(res.max_rel_error, 1e-4) << c.name;
        EXPECT_GT(res.checked, 0u) << c.name;
    }
}

TEST(Fft, ConstantImageIsDcOnly) {
    Tensor x = Tensor::full({4, 8}, 2.5);
    Tensor z = ops::fft2(x);
    for (std::size_t i = 0; i < 32; ++i) {
        const double re = z[2 * i], im = z[2 * i + 1];
        if (i == 0) {
            EXPECT_NEAR(re, 2.5 * 32, 1e-12);
        } else {
            EXPECT_NEAR(re, 0.0, 1e-12);
        }
        EXPECT_NEAR(im, 0.0, 1e-12);
    }
}

TEST(Fft, RoundTripParsevalAndLinearity) {
    Tensor x = random_tensor({16, 16}, 3);
    Tensor y = random_tensor({16, 16}, 4);
    Tensor back = ops::complex_real(ops::ifft2(ops::fft2(x)));
    double max_err = 0.0;
    for (std::size_t i = 0; i < x.numel(); ++i) max_err = std::max(max_err, std::abs(back[i] - x[i]));
    EXPECT_LT(max_err, 1e-10);

    Tensor zx = ops::fft2(x);
    double e_space = 0.0, e_freq = 0.0;
    for (double v : x.data()) e_space += v * v;
    for (double v : zx.data()) e_freq += v * v;
    EXPECT_NEAR(e_freq / 256.0, e_space, 1e-9 * e_space);

    const double a = 1.7, b = -0.4;
    Tensor lhs = ops::fft2(ops::add(ops::scale(x, a), ops::scale(y, b)));
    Tensor rhs = ops::add(ops::scale(zx, a), ops::scale(ops::fft2(y), b));
    for (std::size_t i = 0; i < lhs.numel(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-10);
}

TEST(Fft, CosineHasTwoSymmetricBinsMatchingDirectDft) {
    const std::size_t n = 8;
    std::vector<double> v(n * n);
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) v[r * n + c] = std::cos(2.0 * M_PI * static_cast<double>(r) / n);
    Tensor z = ops::fft2(Tensor({n, n}, v));
    std::size_t nonzero = 0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t k = 0; k < n; ++k) {
            // Direct DFT sum.
            double re = 0.0, im = 0.0;
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < n; ++c) {
                    const double ang = -2.0 * M_PI * (static_cast<double>(u * r) / n + static_cast<double>(k * c) / n);
                    re += v[r * n + c] * std::cos(ang);
                    im += v[r * n + c] * std::sin(ang);
                }
            const std::size_t i = u * n + k;
            EXPECT_NEAR(z[2 * i], re, 1e-10);
            EXPECT_NEAR(z[2 * i + 1], im, 1e-10);
            if (std::hypot(z[2 * i], z[2 * i + 1]) > 1e-9) ++nonzero;
        }
    EXPECT_EQ(nonzero, 2u);
    EXPECT_NEAR(z[2 * (1 * n)], 32.0, 1e-10);
    EXPECT_NEAR(z[2 * (7 * n)], 32.0, 1e-10);
}

TEST(Fft, NonPowerOfTwoNeedsPadding) {
    Tensor x = random_tensor({6, 8}, 1);
    EXPECT_THROW(ops::fft2(x), Error);
    Tensor p = ops::pad_to_pow2(x);
    EXPECT_EQ(p.shape(), Shape({8, 8}));
    EXPECT_NO_THROW(ops::fft2(p));
}

TEST(FiniteChecks, RaiseWhenEnabled) {
    set_finite_checks(true);
    EXPECT_THROW(ops::log(Tensor({1}, {-1.0})), Error);
    set_finite_checks(false);
    EXPECT_NO_THROW(ops::log(Tensor({1}, {-1.0})));
}
