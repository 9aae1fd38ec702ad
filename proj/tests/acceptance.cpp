// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
// any criterion fails. Optional arguments restrict the run to the named
// criteria (autodiff, frequency, fadc, npr, focal, metrics, surrogate,
// robustness, serialization).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "gradcheck.hpp"
#include "mffd/experiment.hpp"
#include "mffd/forensic_features.hpp"
#include "mffd/frequency_blocks.hpp"
#include "mffd/surrogate.hpp"
#include "oracles.hpp"

using namespace mffd;
using namespace mffd::test;
namespace fs = std::filesystem;

namespace {

// Tolerances and targets, pinned.
constexpr double kGradTol = 1e-4;
constexpr double kDetectorGradTol = 1e-3;
constexpr double kAutodiffSeconds = 60.0;
constexpr double kDwtTol = 1e-10;
constexpr double kFftTol = 1e-10;
constexpr double kBandSumTol = 1e-9;
constexpr double kFadcTol = 1e-12;
constexpr double kFocalTol = 1e-12;
constexpr double kFocalGradTol = 1e-6;
constexpr int kFuzzCases = 100;
constexpr double kInDistAcc = 0.95;
constexpr double kUnseenAcc = 0.75;
constexpr double kSurrogateSeconds = 600.0;
constexpr double kRobustSigma = 2.0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
    std::ostringstream s;
    s << std::setprecision(prec) << v;
    return s.str();
}

Tensor rnd(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    return Tensor::uniform(std::move(s), rng, lo, hi);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double max_abs_diff(const Tensor& a, const std::vector<double>& b) {
    if (a.numel() != b.size()) return INFINITY;
    double m = 0.0;
    for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void progress(const std::string& msg) { std::fprintf(stderr, "  .. %s\n", msg.c_str()); }

// ---------------------------------------------------------------- autodiff

struct GradCase {
    std::string name;
    std::function<Tensor(std::vector<Tensor>&)> f;
    std::vector<Tensor> inputs;
};

std::vector<GradCase> grad_cases() {
    auto pos = [](Shape s, std::uint64_t seed) { return rnd(std::move(s), seed, 0.5, 2.0); };
    std::vector<GradCase> c = {
        {"add", [](auto& in) { return project(ops::add(in[0], in[1])); }, {rnd({2, 3, 4}, 1), rnd({3, 1}, 2)}},
        {"sub", [](auto& in) { return project(ops::sub(in[0], in[1])); }, {rnd({4}, 3), rnd({2, 3, 4}, 4)}},
        {"mul", [](auto& in) { return project(ops::mul(in[0], in[1])); }, {rnd({2, 1, 4}, 5), rnd({2, 3, 1}, 6)}},
        {"scale", [](auto& in) { return project(ops::scale(in[0], -1.7)); }, {rnd({5}, 7)}},
        {"add_scalar", [](auto& in) { return project(ops::add_scalar(in[0], 0.3)); }, {rnd({5}, 8)}},
        {"relu", [](auto& in) { return project(ops::relu(in[0])); }, {rnd({3, 5}, 9)}},
        {"sigmoid", [](auto& in) { return project(ops::sigmoid(in[0])); }, {rnd({3, 5}, 10, -4, 4)}},
        {"exp", [](auto& in) { return project(ops::exp(in[0])); }, {rnd({6}, 11)}},
        {"log", [](auto& in) { return project(ops::log(in[0])); }, {pos({6}, 12)}},
        {"square", [](auto& in) { return project(ops::square(in[0])); }, {rnd({6}, 13)}},
        {"sum", [](auto& in) { return ops::sum(ops::square(in[0])); }, {rnd({2, 3}, 14)}},
        {"mean", [](auto& in) { return ops::mean(ops::square(in[0])); }, {rnd({2, 3}, 15)}},
        {"sum_axis", [](auto& in) { return project(ops::sum_axis(in[0], 1, true)); }, {rnd({2, 3, 4}, 16)}},
        {"mean_axis", [](auto& in) { return project(ops::mean_axis(in[0], 2)); }, {rnd({2, 3, 4}, 17)}},
        {"max_axis", [](auto& in) { return project(ops::max_axis(in[0], 1, true)); }, {rnd({2, 5, 3}, 18)}},
        {"matmul", [](auto& in) { return project(ops::matmul(in[0], in[1])); }, {rnd({2, 3, 4}, 19), rnd({4, 5}, 20)}},
        {"softmax", [](auto& in) { return project(ops::softmax(in[0], 1)); }, {rnd({2, 5, 3}, 21, -3, 3)}},
        {"reshape", [](auto& in) { return project(ops::reshape(in[0], {6, 2})); }, {rnd({3, 4}, 22)}},
        {"permute", [](auto& in) { return project(ops::permute(in[0], {2, 0, 1})); }, {rnd({2, 3, 4}, 23)}},
        {"concat", [](auto& in) { return project(ops::concat({in[0], in[1]}, 1)); }, {rnd({2, 2, 3}, 24), rnd({2, 4, 3}, 25)}},
        {"narrow", [](auto& in) { return project(ops::narrow(in[0], 1, 1, 2)); }, {rnd({2, 4, 3}, 26)}},
        {"broadcast_to", [](auto& in) { return project(ops::broadcast_to(in[0], {2, 3, 4})); }, {rnd({3, 1}, 27)}},
        {"pad_to_pow2", [](auto& in) { return project(ops::pad_to_pow2(in[0])); }, {rnd({2, 3, 5}, 28)}},
        {"conv2d", [](auto& in) { return project(ops::conv2d(in[0], in[1], in[2], {2, 1.0, 1})); },
         {rnd({2, 2, 5, 4}, 29), rnd({3, 2, 3, 3}, 30), rnd({3}, 31)}},
        {"conv2d_grouped", [](auto& in) { return project(ops::conv2d(in[0], in[1], Tensor{}, {1, 2.0, 3})); },
         {rnd({1, 3, 5, 5}, 32), rnd({3, 1, 3, 3}, 33)}},
        {"conv2d_fractional", [](auto& in) { return project(ops::conv2d(in[0], in[1], Tensor{}, {1, 1.37, 1})); },
         {rnd({1, 2, 5, 5}, 34), rnd({2, 2, 3, 3}, 35)}},
        {"dilated_im2col", [](auto& in) { return project(ops::dilated_im2col(in[0], 3, 1, in[1])); },
         {rnd({1, 2, 4, 4}, 36), rnd({1, 1, 4, 4}, 37, 0.2, 1.8)}},
        {"conv2d_dilation_map", [](auto& in) { return project(ops::conv2d_dilation_map(in[0], in[1], in[2], 1, in[3])); },
         {rnd({1, 2, 4, 4}, 38), rnd({2, 2, 3, 3}, 39), rnd({2}, 40), rnd({1, 1, 4, 4}, 41, 0.2, 1.8)}},
        {"batchnorm_train", [](auto& in) { return project(ops::batchnorm_train(in[0], in[1], in[2])); },
         {rnd({3, 2, 3, 3}, 42), rnd({2}, 43, 0.5, 1.5), rnd({2}, 44)}},
        {"batchnorm_inference",
         [](auto& in) {
             return project(ops::batchnorm_inference(in[0], in[1], in[2], Tensor({2}, {0.1, -0.2}), Tensor({2}, {0.9, 1.3})));
         },
         {rnd({2, 2, 3, 3}, 45), rnd({2}, 46, 0.5, 1.5), rnd({2}, 47)}},
        {"dropout",
         [](auto& in) {
             Rng r(4);
             return project(ops::dropout(in[0], 0.3, true, r));
         },
         {rnd({4, 5}, 48)}},
        {"fft2", [](auto& in) { return project(ops::fft2(in[0])); }, {rnd({2, 4, 8}, 49)}},
        {"fft2_complex", [](auto& in) { return project(ops::fft2_complex(in[0])); }, {rnd({4, 4, 2}, 50)}},
        {"ifft2", [](auto& in) { return project(ops::ifft2(in[0])); }, {rnd({2, 4, 4, 2}, 51)}},
        {"complex_parts",
         [](auto& in) { return ops::add(project(ops::complex_real(in[0])), project(ops::complex_imag(in[0]), 7)); },
         {rnd({3, 2}, 52)}},
        {"haar_dwt_idwt",
         [](auto& in) {
             HaarBands b = haar_dwt(in[0]);
             b.lh = ops::mul(b.lh, in[1]);
             return ops::add(project(haar_idwt(b)), project(b.hh, 3));
         },
         {rnd({1, 2, 4, 4}, 53), rnd({1, 2, 2, 2}, 54)}},
        {"guided_relu", [](auto& in) { return ops::sum(guided_relu(in[0])); }, {rnd({3, 4}, 57)}},
    };

    const BandSpec spec(4, 8, 8);
    c.push_back({"band_filter", [spec](auto& in) { return project(band_filter(in[0], spec)); }, {rnd({1, 2, 8, 8}, 58)}});
    c.push_back({"frequency_select", [spec](auto& in) { return project(frequency_select(in[0], spec, {in[1], in[2]})); },
                 {rnd({1, 2, 8, 8}, 59), rnd({4, 2, 1, 1}, 60), rnd({4}, 61)}});

    Rng frng(62);
    FadcParams fp = init_fadc_block(2, 3, 1.5, 4, frng).fadc;
    fp.pred_w = rnd({2, 1, 3, 3}, 63, -0.6, 0.6);
    fp.lambda_w = rnd({1, 2, 1, 1}, 64);
    c.push_back({"fadc_forward",
                 [fp](auto& in) {
                     FadcParams q = fp;
                     q.weight = in[1];
                     q.pred_w = in[2];
                     q.pred_b = in[3];
                     q.lambda_w = in[4];
                     q.lambda_b = in[5];
                     return project(fadc_forward(in[0], q));
                 },
                 {rnd({1, 2, 6, 6}, 65), fp.weight.detach(), fp.pred_w.detach(), fp.pred_b.detach(), fp.lambda_w.detach(),
                  fp.lambda_b.detach()}});

    Rng srng(66);
    const SpatialAttentionParams sa = init_spatial_attention(srng);
    c.push_back({"spatial_attention", [](auto& in) { return project(spatial_attention(in[0], {in[1], in[2]})); },
                 {rnd({1, 3, 5, 5}, 67), sa.weight.detach(), sa.bias.detach()}});

    Rng arng(68);
    const CrossAttentionParams ap = init_cross_attention(4, 3, 4, 4, 2, arng);
    c.push_back({"cross_attention_fuse",
                 [](auto& in) {
                     CrossAttentionParams q{in[0], in[1], in[2], 2};
                     return project(fuse(in[3], in[4], q));
                 },
                 {ap.w_q.detach(), ap.w_k.detach(), ap.w_v.detach(), rnd({1, 4}, 69), rnd({1, 3, 2, 4}, 70)}});

    const std::vector<int> labels = {1, 0, 0, 1, 1, 0, 1, 0};
    c.push_back({"focal_loss", [labels](auto& in) { return focal_loss(in[0], labels, 2.0, 0.4); }, {rnd({8}, 71, -4, 4)}});
    return c;
}

Outcome check_autodiff() {
    const auto t0 = Clock::now();
    double worst = 0.0;
    std::string worst_name;
    std::size_t checked = 0;
    auto cases = grad_cases();
    for (auto& c : cases) {
        GradCheckResult r;
        try {
            r = gradcheck(c.f, c.inputs);
        } catch (const std::exception& e) {
            throw std::runtime_error(c.name + ": " + e.what());
        }
        checked += r.checked;
        if (r.max_rel_error > worst || r.checked == 0) {
            worst = r.checked == 0 ? INFINITY : r.max_rel_error;
            worst_name = c.name;
        }
    }

    // end-to-end probe through the whole detector
    Detector det(desk_config(), 3);
    Rng rng(11);
    ImageU8 img(64, 64);
    for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
    const auto rec = stub_embed(img, det.config().embed_dim);
    const Tensor phi({rec.vector.size()}, std::vector<double>(rec.vector.begin(), rec.vector.end()));
    const BranchInputs in = det.prepare(std::span(&img, 1), std::span(&phi, 1));
    Tape::current().clear();
    for (auto p : det.parameters()) p.tensor.zero_grad();
    backward(ops::sum(det.predict(in)));
    const std::vector<std::pair<std::string, std::size_t>> probes = {
        {"attn.w_q", 17},      {"attn.w_v", 5},       {"stem.weight", 3},    {"dwt.approx.weight", 40},
        {"fadc0.weight", 100}, {"fadc0.lambda_w", 2}, {"fadc1.select_w", 9}, {"fadc1.pred_w", 13},
        {"spatial_attention.weight", 30}, {"stage1.conv.weight", 77}, {"stage2.bn.gamma", 4}, {"fc.weight", 6},
    };
    double det_worst = 0.0;
    std::size_t found = 0;
    const auto params = det.parameters();
    {
        NoGradGuard no_grad;
        for (const auto& [name, idx] : probes) {
            const auto it = std::find_if(params.begin(), params.end(), [&](const NamedTensor& p) { return p.name == name; });
            if (it == params.end()) continue;
            ++found;
            Tensor t = it->tensor;
            const double analytic = t.grad()[idx];
            auto v = t.mutable_data();
            const double orig = v[idx], h = 1e-6;
            v[idx] = orig + h;
            const double fp = det.predict(in)[0];
            v[idx] = orig - h;
            const double fm = det.predict(in)[0];
            v[idx] = orig;
            det_worst = std::max(det_worst, rel_error(analytic, (fp - fm) / (2 * h)));
        }
    }
    const double secs = seconds_since(t0);
    const bool pass = worst < kGradTol && found == probes.size() && det_worst < kDetectorGradTol && secs < kAutodiffSeconds;
    return {pass, std::to_string(cases.size()) + " ops, " + std::to_string(checked) + " partials, worst rel err " +
                      fmt(worst) + " (" + worst_name + ") < " + fmt(kGradTol) + "; detector " + std::to_string(found) +
                      " probes worst " + fmt(det_worst) + " < " + fmt(kDetectorGradTol) + "; " + fmt(secs, 3) + "s < " +
                      fmt(kAutodiffSeconds, 3) + "s"};
}

// --------------------------------------------------------------- frequency

Outcome check_frequency() {
    double dwt = 0.0, fft = 0.0, bands = 0.0;
    bool masks_exact = true;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const Tensor x = rnd({2, 3, 16, 32}, seed);
        dwt = std::max(dwt, max_abs_diff(haar_idwt(haar_dwt(x)), x));
        fft = std::max(fft, max_abs_diff(ops::complex_real(ops::ifft2(ops::fft2(x))), x));
        fft = std::max(fft, max_abs_diff(ops::complex_imag(ops::ifft2(ops::fft2(x))), Tensor::zeros(x.shape())));
        for (std::size_t B : {2u, 4u, 5u}) {
            const BandSpec spec(B, 16, 32);
            const auto parts = band_decompose(x, spec);
            Tensor total = parts[0];
            for (std::size_t b = 1; b < B; ++b) total = ops::add(total, parts[b]);
            bands = std::max(bands, max_abs_diff(total, x));
            // the fused path must satisfy the same identity
            const Tensor fused = ops::sum_axis(band_filter(x, spec), 1);
            bands = std::max(bands, max_abs_diff(fused, x));
        }
    }
    for (std::size_t B = 1; B <= 8; ++B)
        for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 8}, {64, 64}, {32, 128}}) {
            const BandSpec spec(B, h, w);
            for (std::size_t i = 0; i < h * w; ++i) {
                int total = 0;
                for (std::size_t b = 0; b < B; ++b) total += spec.mask(b)[i];
                masks_exact &= total == 1;
            }
        }
    const bool pass = dwt < kDwtTol && fft < kFftTol && bands < kBandSumTol && masks_exact;
    return {pass, "haar round-trip " + fmt(dwt) + " < " + fmt(kDwtTol) + "; fft round-trip " + fmt(fft) + " < " +
                      fmt(kFftTol) + "; band sum " + fmt(bands) + " < " + fmt(kBandSumTol) +
                      "; masks partition of unity " + (masks_exact ? "exact" : "BROKEN")};
}

// -------------------------------------------------------------------- fadc

Outcome check_fadc() {
    double reduction = 0.0, general = 0.0;
    const Tensor x = rnd({2, 3, 9, 8}, 1);
    Rng rng(2);
    FadcParams p = init_fadc_block(3, 3, 1.0, 4, rng).fadc;
    p.weight = rnd({4, 3, 3, 3}, 3);
    // lambda = 2 sigmoid(0) = 1 and D = ReLU(1) * d_base
    p.pred_w = Tensor::zeros({3, 1, 3, 3});
    p.pred_b = Tensor::full({1}, 1.0);
    p.lambda_w = Tensor::zeros({1, 3, 1, 1});
    p.lambda_b = Tensor::zeros({1});
    for (double d : {1.0, 2.0, 3.0}) {
        p.d_base = d;
        const Tensor y = fadc_forward(x, p);
        reduction = std::max(reduction, max_abs_diff(y, naive_conv2d(x, p.weight, {}, 1, static_cast<long>(d))));
        ops::Conv2dOptions o;
        o.dilation = d;
        reduction = std::max(reduction, max_abs_diff(y, ops::conv2d(x, p.weight, Tensor(), o)));
    }
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        const Tensor w = rnd({2, 3, 3, 3}, seed);
        const Tensor lambda = rnd({2, 1, 9, 8}, seed + 100, 0.0, 2.0);
        const Tensor dil = rnd({2, 1, 9, 8}, seed + 200, 0.0, 3.0);
        general = std::max(general, max_abs_diff(fadc_conv(x, w, lambda, dil), fadc_oracle(x, w, lambda, dil)));
    }
    // the learned heads feeding the oracle
    Rng hr(7);
    FadcParams q = init_fadc_block(3, 3, 1.5, 4, hr).fadc;
    q.pred_w = rnd({3, 1, 3, 3}, 8, -0.6, 0.6);
    q.lambda_w = rnd({1, 3, 1, 1}, 9);
    general = std::max(general, max_abs_diff(fadc_forward(x, q), fadc_oracle(x, q.weight, fadc_lambda(x, q), fadc_dilation(x, q))));
    const bool pass = reduction < kFadcTol && general < kFadcTol;
    return {pass, "unit lambda + integer dilation vs dilated conv " + fmt(reduction) + " < " + fmt(kFadcTol) +
                      "; general case vs scalar loop " + fmt(general) + " < " + fmt(kFadcTol)};
}

// --------------------------------------------------------------------- npr

Outcome check_npr() {
    std::size_t mismatched = 0, images = 0;
    Rng rng(5);
    for (std::size_t l : {2u, 4u})
        for (int trial = 0; trial < 100; ++trial, ++images) {
            ImageU8 img(8, 8);
            for (auto& v : img.data) v = static_cast<std::uint8_t>(rng.below(256));
            const Tensor t = to_tensor_batch(std::span(&img, 1));
            const Tensor got = npr_extract(t, {l});
            const auto want = npr_oracle(t, l);
            if (got.numel() != want.size()) {
                ++mismatched;
                continue;
            }
            for (std::size_t i = 0; i < want.size(); ++i)
                if (got[i] != want[i]) {
                    ++mismatched;
                    break;
                }
        }
    std::size_t nonzero = 0;
    for (std::size_t f : {2u, 4u})
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t low = 4, side = low * f;
            ImageU8 small(low, low), up(side, side);
            for (auto& v : small.data) v = static_cast<std::uint8_t>(rng.below(256));
            for (std::size_t y = 0; y < side; ++y)
                for (std::size_t x = 0; x < side; ++x)
                    for (std::size_t c = 0; c < 3; ++c) up.at(x, y, c) = small.at(x / f, y / f, c);
            const Tensor npr = npr_extract(to_tensor_batch(std::span(&up, 1)), {f});
            const auto& vals = npr.data();
            for (double v : vals) nonzero += v != 0.0;
        }
    const bool pass = mismatched == 0 && nonzero == 0;
    return {pass, std::to_string(images) + " random 8x8 images (l=2,4): " + std::to_string(mismatched) +
                      " differ from the loop oracle (exact); nearest-upsampled l=2,4: " + std::to_string(nonzero) +
                      " non-zero NPR values"};
}

// ------------------------------------------------------------------- focal

Outcome check_focal() {
    Rng rng(3);
    double bce_err = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 5 + rng.below(20);
        Tensor z = Tensor::uniform({n}, rng, -8.0, 8.0);
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng.below(2));
        double bce = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = 1.0 / (1.0 + std::exp(-z[i]));
            bce -= y[i] ? std::log(p) : std::log(1.0 - p);
        }
        bce_err = std::max(bce_err, std::abs(focal_loss(z, y, 0.0, 0.5).item() - 0.5 * bce / static_cast<double>(n)));
    }
    const std::vector<int> one = {1};
    const double worked = focal_loss(Tensor({1}, {0.0}), one, 2.0, 0.5).item();
    const double worked_err = std::abs(worked - 0.5 * 0.25 * std::numbers::ln2);
    double grad = 0.0;
    Tensor z = Tensor::uniform({10}, rng, -4.0, 4.0);
    std::vector<int> y(10);
    for (auto& v : y) v = static_cast<int>(rng.below(2));
    for (double gamma : {0.0, 0.5, 2.0})
        for (double alpha : {0.3, 0.5})
            grad = std::max(grad, gradcheck([&](std::vector<Tensor>& in) { return focal_loss(in[0], y, gamma, alpha); }, {z})
                                      .max_rel_error);
    const bool pass = bce_err < kFocalTol && worked_err < kFocalTol && grad < kFocalGradTol;
    return {pass, "gamma=0 alpha=0.5 vs 0.5*BCE " + fmt(bce_err) + " < " + fmt(kFocalTol) + "; worked value " +
                      fmt(worked, 9) + " (err " + fmt(worked_err) + "); gradient rel err " + fmt(grad) + " < " +
                      fmt(kFocalGradTol)};
}

// ----------------------------------------------------------------- metrics

Outcome check_metrics() {
    Rng rng(21);
    int ap_bad = 0, thr_bad = 0;
    for (int trial = 0; trial < kFuzzCases; ++trial) {
        const std::size_t n = 2 + rng.below(40);
        std::vector<double> s(n);
        for (auto& v : s) v = trial % 2 ? rng.uniform() : static_cast<double>(rng.below(5)) / 4.0;
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng.below(2));
        y[rng.below(n)] = 1;
        ap_bad += average_precision(s, y) != ap_oracle(s, y);
    }
    for (int trial = 0; trial < kFuzzCases; ++trial) {
        const std::size_t n = 2 + rng.below(30);
        std::vector<double> s(n);
        for (auto& v : s) v = trial % 2 ? rng.uniform(-2, 2) : static_cast<double>(rng.below(6));
        std::vector<int> y(n);
        for (auto& v : y) v = static_cast<int>(rng.below(2));
        y[0] = 1;
        y[1] = 0;
        const Choice want = threshold_oracle(s, y);
        const double got = calibrate_threshold(s, y);
        thr_bad += got != want.threshold || balanced_accuracy(s, y, got) != want.ba;
    }
    const bool pass = ap_bad == 0 && thr_bad == 0;
    return {pass, "average_precision: " + std::to_string(kFuzzCases - ap_bad) + "/" + std::to_string(kFuzzCases) +
                      " exact; calibrate_threshold: " + std::to_string(kFuzzCases - thr_bad) + "/" +
                      std::to_string(kFuzzCases) + " exact"};
}

// -------------------------------------------------- surrogate + robustness

struct SurrogateState {
    fs::path dir;
    DatasetManifest manifest;
    std::optional<FittedRun> full;
    LabeledImages test;
};

LabeledImages in_distribution(const LabeledImages& test) { return filter_ids(test, {"real/", "fake_nearest/"}); }

Outcome check_surrogate(SurrogateState& st) {
    const auto t0 = Clock::now();
    st.manifest = read_manifest(write_surrogate(st.dir, SurrogateSpec{}));
    const RunConfig cfg = desk_run_config();
    progress("training full model: " + resolved_line(cfg));
    st.full = fit_run(cfg, st.manifest, progress);
    st.test = load_split(st.manifest, Split::Test, cfg.model.image_size);
    const EvalReport id = evaluate_run(*st.full, in_distribution(st.test));
    const EvalReport unseen = evaluate_run(*st.full, filter_ids(st.test, {"real/", "fake_bilinear/"}));
    const EvalReport full_all = evaluate_run(*st.full, st.test);

    progress("training ablation without NPR");
    const FittedRun nonpr = fit_run(drop_branches(cfg, "npr"), st.manifest, progress);
    const EvalReport nonpr_all = evaluate_run(nonpr, st.test);
    const double secs = seconds_since(t0);
    const bool pass = id.acc >= kInDistAcc && unseen.acc >= kUnseenAcc && nonpr_all.acc < full_all.acc &&
                      secs < kSurrogateSeconds;
    return {pass, "in-distribution acc " + fmt(id.acc) + " >= " + fmt(kInDistAcc) + " (AP " + fmt(id.ap) +
                      "); unseen bilinear acc " + fmt(unseen.acc) + " >= " + fmt(kUnseenAcc) + " (AP " + fmt(unseen.ap) +
                      "); test acc full " + fmt(full_all.acc) + " vs -npr " + fmt(nonpr_all.acc) + " (must be lower); " +
                      fmt(secs, 4) + "s < " + fmt(kSurrogateSeconds, 4) + "s"};
}

double acc_at(const RobustnessReport& r, double sigma) {
    for (const auto& row : r.rows)
        if (row.kind == "blur" && row.level == sigma) return row.acc;
    return NAN;
}

std::string acc_ladder(const RobustnessReport& r) {
    std::string s;
    for (const auto& row : r.rows) s += (s.empty() ? "" : "/") + fmt(row.acc, 3);
    return s;
}

Outcome check_robustness(SurrogateState& st) {
    if (!st.full) {
        st.manifest = read_manifest(write_surrogate(st.dir, SurrogateSpec{}));
        progress("training full model");
        st.full = fit_run(desk_run_config(), st.manifest, progress);
        st.test = load_split(st.manifest, Split::Test, st.full->config.model.image_size);
    }
    const LabeledImages test = in_distribution(st.test);
    const auto specs = parse_specs("blur:0,blur:1,blur:2,blur:3");
    progress("blur sweep of the full model (twice)");
    const RobustnessReport a = robustness_sweep(st.full->detector, test, specs, st.full->threshold);
    const RobustnessReport b = robustness_sweep(st.full->detector, test, specs, st.full->threshold);

    progress("training NPR-only ablation");
    const FittedRun npr_only = fit_run(drop_branches(desk_run_config(), "grad+semantic"), st.manifest, progress);
    const RobustnessReport n = robustness_sweep(npr_only.detector, test, specs, npr_only.threshold);

    const double full_drop = acc_at(a, 0.0) - acc_at(a, kRobustSigma);
    const double npr_drop = acc_at(n, 0.0) - acc_at(n, kRobustSigma);
    const bool reproducible = a.csv() == b.csv();
    const bool pass = full_drop < npr_drop && reproducible;
    return {pass, "blur sigma 0/1/2/3 acc full " + acc_ladder(a) + ", npr-only " + acc_ladder(n) + "; drop at sigma=2 full " +
                      fmt(full_drop) + " vs npr-only " + fmt(npr_drop) + " (must be smaller); sweep " +
                      (reproducible ? "bit-reproducible" : "NOT reproducible")};
}

// ----------------------------------------------------------- serialization

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome check_serialization() {
    const fs::path tmp = fs::temp_directory_path() / "mffd_acceptance_serial";
    fs::create_directories(tmp);
    bool fwts_ok = true, femb_ok = true;

    Detector det(desk_config(), 2);
    save_weights(tmp / "w.fwts", det);
    const auto back = read_tensor_file(tmp / "w.fwts");
    const auto state = det.state();
    fwts_ok &= back.size() == state.size();
    for (std::size_t i = 0; fwts_ok && i < state.size(); ++i) {
        fwts_ok &= back[i].name == state[i].name && back[i].tensor.shape() == state[i].tensor.shape();
        const auto& va = state[i].tensor.data();
        const auto& vb = back[i].tensor.data();
        fwts_ok &= std::memcmp(va.data(), vb.data(), va.size() * sizeof(double)) == 0;
    }
    Detector other(desk_config(), 77);
    load_weights(tmp / "w.fwts", other);
    save_weights(tmp / "w2.fwts", other);
    fwts_ok &= file_bytes(tmp / "w.fwts") == file_bytes(tmp / "w2.fwts");

    const std::vector<NamedTensor> golden_tensors = {{"a", Tensor({2}, {1.0, -2.5})},
                                                     {"conv.w", Tensor({1, 3}, {0.5, 0.0, 1e-300})}};
    const bool fwts_golden = encode_tensors(golden_tensors) == file_bytes(fs::path(MFFD_FIXTURE_DIR) / "two_tensors.fwts");

    EmbeddingTable table(7);
    for (int i = 0; i < 5; ++i) table.add(stub_embed(ImageU8(8, 8, static_cast<std::uint8_t>(40 * i)), 7, "img/" + std::to_string(i)));
    write_embedding_file(tmp / "e.femb", table);
    const EmbeddingTable eback = read_embedding_file(tmp / "e.femb", 7u);
    femb_ok &= eback.records() == table.records();
    write_embedding_file(tmp / "e2.femb", eback);
    femb_ok &= file_bytes(tmp / "e.femb") == file_bytes(tmp / "e2.femb");

    // magic, version 1, D=2, count 2, ("a", [1, -2.5]), ("img/b.ppm", [0.25, 3])
    const std::vector<std::uint8_t> femb_expected = {
        'F', 'E', 'M', 'B', 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0,
        1, 0, 0, 0, 'a', 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0,
        9, 0, 0, 0, 'i', 'm', 'g', '/', 'b', '.', 'p', 'p', 'm', 0x00, 0x00, 0x80, 0x3e, 0x00, 0x00, 0x40, 0x40,
    };
    EmbeddingTable two(2);
    two.add({"a", {1.0f, -2.5f}});
    two.add({"img/b.ppm", {0.25f, 3.0f}});
    const auto femb_golden_file = file_bytes(fs::path(MFFD_FIXTURE_DIR) / "two_records.femb");
    const bool femb_golden = femb_golden_file == femb_expected && encode_embeddings(two) == femb_expected;
    fs::remove_all(tmp);

    const bool pass = fwts_ok && femb_ok && fwts_golden && femb_golden;
    auto word = [](bool b) { return b ? "ok" : "FAILED"; };
    return {pass, std::string("FWTS round-trip ") + word(fwts_ok) + ", golden " + word(fwts_golden) +
                      "; FEMB round-trip " + word(femb_ok) + ", golden " + word(femb_golden)};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only(argv + 1, argv + argc);
    SurrogateState st;
    st.dir = fs::temp_directory_path() / "mffd_acceptance_surrogate";
    fs::remove_all(st.dir);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"autodiff", check_autodiff},
        {"frequency", check_frequency},
        {"fadc", check_fadc},
        {"npr", check_npr},
        {"focal", check_focal},
        {"metrics", check_metrics},
        {"surrogate", [&] { return check_surrogate(st); }},
        {"robustness", [&] { return check_robustness(st); }},
        {"serialization", check_serialization},
    };
    int failed = 0, ran = 0;
    for (const auto& [name, run] : criteria) {
        if (!only.empty() && !only.count(name)) continue;
        ++ran;
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("%s %-13s %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    fs::remove_all(st.dir);
    std::printf("%d/%d criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
