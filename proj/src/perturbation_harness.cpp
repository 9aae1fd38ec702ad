#include "mffd/perturbation_harness.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "border.hpp"

namespace mffd {

const std::array<int, 64> kLumaQuant = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
};

const std::array<int, 64> kChromaQuant = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
};

std::array<int, 64> scaled_quant_table(const std::array<int, 64>& base, int quality) {
    require(quality >= 1 && quality <= 100, ErrorCode::InvalidArgument,
            "JPEG quality must be in [1, 100], got " + std::to_string(quality));
    const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    std::array<int, 64> out{};
    for (std::size_t i = 0; i < 64; ++i) out[i] = std::clamp((base[i] * s + 50) / 100, 1, 255);
    return out;
}

namespace {

// basis[u][x] = c(u)/2 * cos((2x+1) u pi / 16), so the 2-D transform is B f B^T
const std::array<double, 64>& dct_basis() {
    static const std::array<double, 64> b = [] {
        std::array<double, 64> m{};
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x) {
                const double c = u == 0 ? std::sqrt(0.125) : 0.5;
                m[u * 8 + x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
            }
        return m;
    }();
    return b;
}

}  // namespace

void dct8x8(const double* in, double* out) {
    const auto& b = dct_basis();
    double tmp[64];
    for (int u = 0; u < 8; ++u)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int y = 0; y < 8; ++y) acc += b[u * 8 + y] * in[y * 8 + x];
            tmp[u * 8 + x] = acc;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int x = 0; x < 8; ++x) acc += tmp[u * 8 + x] * b[v * 8 + x];
            out[u * 8 + v] = acc;
        }
}

void idct8x8(const double* in, double* out) {
    const auto& b = dct_basis();
    double tmp[64];
    for (int y = 0; y < 8; ++y)
        for (int v = 0; v < 8; ++v) {
            double acc = 0.0;
            for (int u = 0; u < 8; ++u) acc += b[u * 8 + y] * in[u * 8 + v];
            tmp[y * 8 + v] = acc;
        }
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            double acc = 0.0;
            for (int v = 0; v < 8; ++v) acc += tmp[y * 8 + v] * b[v * 8 + x];
            out[y * 8 + x] = acc;
        }
}

namespace {

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0))); }

void require_min_side(const ImageU8& img, const char* what) {
    require(std::min(img.width, img.height) >= kMinImageSide, ErrorCode::InvalidArgument,
            std::string(what) + " needs sides of at least 8 pixels, got " + std::to_string(img.width) + "x" +
                std::to_string(img.height));
}

}  // namespace

ImageU8 jpeg_like(const ImageU8& img, int quality) {
    const auto qy = scaled_quant_table(kLumaQuant, quality);
    const auto qc = scaled_quant_table(kChromaQuant, quality);
    require_min_side(img, "jpeg_like");
    const std::size_t W = img.width, H = img.height;
    const std::size_t PW = (W + 7) / 8 * 8, PH = (H + 7) / 8 * 8;

    std::vector<double> planes[3];
    for (auto& p : planes) p.resize(PW * PH);
    for (std::size_t y = 0; y < PH; ++y)
        for (std::size_t x = 0; x < PW; ++x) {
            const auto sy = static_cast<std::size_t>(detail::reflect_index(static_cast<long>(y), static_cast<long>(H)));
            const auto sx = static_cast<std::size_t>(detail::reflect_index(static_cast<long>(x), static_cast<long>(W)));
            const double r = img.at(sx, sy, 0), g = img.at(sx, sy, 1), b = img.at(sx, sy, 2);
            const std::size_t i = y * PW + x;
            planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b;
            planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b + 128.0;
            planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b + 128.0;
        }

    double block[64], coef[64];
    for (int c = 0; c < 3; ++c) {
        const auto& q = c == 0 ? qy : qc;
        auto& plane = planes[c];
        for (std::size_t by = 0; by < PH; by += 8)
            for (std::size_t bx = 0; bx < PW; bx += 8) {
                for (int k = 0; k < 64; ++k) block[k] = plane[(by + k / 8) * PW + bx + k % 8] - 128.0;
                dct8x8(block, coef);
                for (int k = 0; k < 64; ++k) coef[k] = std::round(coef[k] / q[k]) * q[k];
                idct8x8(coef, block);
                for (int k = 0; k < 64; ++k) plane[(by + k / 8) * PW + bx + k % 8] = block[k] + 128.0;
            }
    }

    ImageU8 out(W, H);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t i = y * PW + x;
            const double Y = planes[0][i], cb = planes[1][i] - 128.0, cr = planes[2][i] - 128.0;
            out.at(x, y, 0) = to_byte(Y + 1.402 * cr);
            out.at(x, y, 1) = to_byte(Y - 0.344136 * cb - 0.714136 * cr);
            out.at(x, y, 2) = to_byte(Y + 1.772 * cb);
        }
    return out;
}

ImageU8 gaussian_blur(const ImageU8& img, double sigma) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::InvalidArgument, "blur sigma must be >= 0");
    if (sigma == 0.0) return img;
    const long radius = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double total = 0.0;
    for (long i = -radius; i <= radius; ++i)
        total += k[static_cast<std::size_t>(i + radius)] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    for (auto& v : k) v /= total;

    const long W = static_cast<long>(img.width), H = static_cast<long>(img.height);
    std::vector<double> tmp(img.data.size());
    for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x)
            for (long c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (long i = -radius; i <= radius; ++i)
                    acc += k[static_cast<std::size_t>(i + radius)] * img.data[static_cast<std::size_t>((y * W + detail::reflect_index(x + i, W)) * 3 + c)];
                tmp[static_cast<std::size_t>((y * W + x) * 3 + c)] = acc;
            }
    ImageU8 out(img.width, img.height);
    for (long y = 0; y < H; ++y)
        for (long x = 0; x < W; ++x)
            for (long c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (long i = -radius; i <= radius; ++i)
                    acc += k[static_cast<std::size_t>(i + radius)] * tmp[static_cast<std::size_t>((detail::reflect_index(y + i, H) * W + x) * 3 + c)];
                out.data[static_cast<std::size_t>((y * W + x) * 3 + c)] = to_byte(acc);
            }
    return out;
}

ImageU8 gaussian_noise(const ImageU8& img, double sigma, std::uint64_t seed) {
    require(sigma >= 0.0 && std::isfinite(sigma), ErrorCode::InvalidArgument, "noise sigma must be >= 0");
    if (sigma == 0.0) return img;
    Rng rng(seed);
    ImageU8 out = img;
    for (auto& v : out.data) v = to_byte(static_cast<double>(v) + sigma * rng.normal());
    return out;
}

void PerturbSpec::validate() const {
    if (kind == PerturbKind::Jpeg)
        require(level >= 1.0 && level <= 100.0 && level == std::floor(level), ErrorCode::InvalidArgument,
                "jpeg quality must be an integer in [1, 100]");
    else
        require(level >= 0.0 && std::isfinite(level), ErrorCode::InvalidArgument, kind_name() + " sigma must be >= 0");
}

std::string PerturbSpec::kind_name() const {
    switch (kind) {
        case PerturbKind::Jpeg: return "jpeg";
        case PerturbKind::Blur: return "blur";
        case PerturbKind::Noise: return "noise";
    }
    return "?";
}

std::vector<PerturbSpec> parse_specs(const std::string& text, std::uint64_t seed) {
    std::vector<PerturbSpec> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        require(colon != std::string::npos, ErrorCode::InvalidArgument, "spec '" + item + "' is not kind:level");
        PerturbSpec spec;
        spec.seed = seed;
        const std::string kind = item.substr(0, colon), level = item.substr(colon + 1);
        if (kind == "jpeg")
            spec.kind = PerturbKind::Jpeg;
        else if (kind == "blur")
            spec.kind = PerturbKind::Blur;
        else if (kind == "noise")
            spec.kind = PerturbKind::Noise;
        else
            fail(ErrorCode::InvalidArgument, "unknown perturbation kind '" + kind + "'");
        std::size_t used = 0;
        try {
            spec.level = std::stod(level, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        require(used == level.size() && !level.empty(), ErrorCode::InvalidArgument, "bad level in spec '" + item + "'");
        spec.validate();
        out.push_back(spec);
    }
    require(!out.empty(), ErrorCode::InvalidArgument, "no perturbation specs given");
    return out;
}

ImageU8 perturb(const ImageU8& img, const PerturbSpec& spec, std::size_t index) {
    spec.validate();
    switch (spec.kind) {
        case PerturbKind::Jpeg: return jpeg_like(img, static_cast<int>(spec.level));
        case PerturbKind::Blur: return gaussian_blur(img, spec.level);
        case PerturbKind::Noise: return gaussian_noise(img, spec.level, Rng(spec.seed).substream(index).next_u64());
    }
    return img;
}

std::string RobustnessReport::csv() const {
    std::ostringstream out;
    out << std::setprecision(17) << "kind,level,acc,ap\n";
    for (const auto& r : rows) out << r.kind << ',' << r.level << ',' << r.acc << ',' << r.ap << '\n';
    return out.str();
}

RobustnessReport robustness_sweep(const Detector& det, const LabeledImages& test, const std::vector<PerturbSpec>& specs,
                                  double threshold, const EmbeddingTable* table, const ProgressFn& progress) {
    require(!test.images.empty(), ErrorCode::EmptySplit, "robustness sweep needs a non-empty test split");
    std::vector<PerturbSpec> ordered = specs;
    std::vector<PerturbKind> kinds;
    for (const auto& s : specs)
        if (std::find(kinds.begin(), kinds.end(), s.kind) == kinds.end()) kinds.push_back(s.kind);
    auto rank = [&](PerturbKind k) { return std::find(kinds.begin(), kinds.end(), k) - kinds.begin(); };
    std::stable_sort(ordered.begin(), ordered.end(), [&](const PerturbSpec& a, const PerturbSpec& b) {
        return rank(a.kind) != rank(b.kind) ? rank(a.kind) < rank(b.kind) : a.level < b.level;
    });

    RobustnessReport report;
    for (const auto& spec : ordered) {
        LabeledImages perturbed = test;
        for (std::size_t i = 0; i < perturbed.images.size(); ++i) perturbed.images[i] = perturb(test.images[i], spec, i);
        const auto scores = score(det, build_features(det, perturbed, table));
        const EvalReport r = evaluate(scores, test.labels, threshold);
        report.rows.push_back({spec.kind_name(), spec.level, r.acc, r.ap});
        if (progress) {
            std::ostringstream msg;
            msg << spec.kind_name() << ":" << spec.level << " acc " << r.acc << " ap " << r.ap;
            progress(msg.str());
        }
    }
    return report;
}

}  // namespace mffd
