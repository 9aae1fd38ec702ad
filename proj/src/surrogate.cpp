#include "mffd/surrogate.hpp"

#include <algorithm>
#include <cmath>

#include "border.hpp"
#include "mffd/rng.hpp"

namespace mffd {

namespace {

// Separable Gaussian smoothing of a float plane with reflect borders.
std::vector<double> smooth(const std::vector<double>& in, long side, double sigma) {
    const long r = static_cast<long>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double total = 0.0;
    for (long i = -r; i <= r; ++i) total += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    for (auto& v : k) v /= total;
    std::vector<double> tmp(in.size()), out(in.size());
    for (long y = 0; y < side; ++y)
        for (long x = 0; x < side; ++x) {
            double acc = 0.0;
            for (long i = -r; i <= r; ++i)
                acc += k[static_cast<std::size_t>(i + r)] * in[static_cast<std::size_t>(y * side + detail::reflect_index(x + i, side))];
            tmp[static_cast<std::size_t>(y * side + x)] = acc;
        }
    for (long y = 0; y < side; ++y)
        for (long x = 0; x < side; ++x) {
            double acc = 0.0;
            for (long i = -r; i <= r; ++i)
                acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(detail::reflect_index(y + i, side) * side + x)];
            out[static_cast<std::size_t>(y * side + x)] = acc;
        }
    return out;
}

// Three float planes in 0..255 units.
std::vector<std::vector<double>> texture(std::size_t side, Rng& rng, const TextureRange& tex) {
    const long s = static_cast<long>(side);
    const double sigma = rng.uniform(tex.sigma_min, tex.sigma_max);
    std::vector<double> shared(side * side);
    for (auto& v : shared) v = rng.normal();
    shared = smooth(shared, s, sigma);
    double var = 0.0;
    for (double v : shared) var += v * v;
    const double norm = 1.0 / std::sqrt(var / static_cast<double>(shared.size()));
    const double contrast = rng.uniform(20.0, 45.0);
    std::vector<std::vector<double>> planes(3, std::vector<double>(side * side));
    for (int c = 0; c < 3; ++c) {
        std::vector<double> own(side * side);
        for (auto& v : own) v = rng.normal();
        own = smooth(own, s, sigma);
        const double mean = rng.uniform(90.0, 170.0);
        for (std::size_t i = 0; i < own.size(); ++i)
            planes[c][i] = mean + contrast * norm * (0.8 * shared[i] + 0.45 * own[i]);
    }
    return planes;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::round(std::clamp(v, 0.0, 255.0))); }

}  // namespace

ImageU8 surrogate_image(SurrogateKind kind, std::size_t side, std::uint64_t seed, const TextureRange& tex) {
    require(side >= kMinImageSide && side % 2 == 0, ErrorCode::InvalidArgument, "surrogate side must be even and >= 8");
    require(tex.sigma_min > 0.0 && tex.sigma_min <= tex.sigma_max, ErrorCode::InvalidArgument, "texture sigma range must satisfy 0 < min <= max");
    Rng rng(seed);
    const auto planes = texture(side, rng, tex);
    ImageU8 img(side, side);
    if (kind == SurrogateKind::Real) {
        for (std::size_t i = 0; i < side * side; ++i)
            for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = to_byte(planes[c][i]);
        return img;
    }
    // 2x2 box downsample, quantised like a decoded low-resolution image
    const std::size_t h = side / 2;
    std::vector<double> low(3 * h * h);
    for (int c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < h; ++x) {
                const auto& p = planes[c];
                const double m = 0.25 * (p[2 * y * side + 2 * x] + p[2 * y * side + 2 * x + 1] +
                                         p[(2 * y + 1) * side + 2 * x] + p[(2 * y + 1) * side + 2 * x + 1]);
                low[(c * h + y) * h + x] = std::round(std::clamp(m, 0.0, 255.0));
            }
    const long lh = static_cast<long>(h);
    for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x)
            for (int c = 0; c < 3; ++c) {
                double v;
                if (kind == SurrogateKind::FakeNearest) {
                    v = low[(c * h + y / 2) * h + x / 2];
                } else {
                    // half-pixel-centred bilinear, edge-clamped
                    const double sy = (static_cast<double>(y) + 0.5) / 2.0 - 0.5, sx = (static_cast<double>(x) + 0.5) / 2.0 - 0.5;
                    const long y0 = static_cast<long>(std::floor(sy)), x0 = static_cast<long>(std::floor(sx));
                    const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
                    auto at = [&](long yy, long xx) {
                        yy = std::clamp(yy, 0L, lh - 1);
                        xx = std::clamp(xx, 0L, lh - 1);
                        return low[static_cast<std::size_t>((c * lh + yy) * lh + xx)];
                    };
                    v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x0 + 1)) +
                        fy * ((1 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
                }
                img.at(x, y, static_cast<std::size_t>(c)) = to_byte(v);
            }
    return img;
}

std::filesystem::path write_surrogate(const std::filesystem::path& dir, const SurrogateSpec& spec) {
    namespace fs = std::filesystem;
    for (const char* sub : {"real", "fake_nearest", "fake_bilinear"}) fs::create_directories(dir / sub);
    DatasetManifest m;
    const Rng root(spec.seed);
    struct Part {
        SurrogateKind kind;
        const char* sub;
        int label;
        Split split;
        std::size_t count;
    };
    const Part parts[] = {
        {SurrogateKind::Real, "real", 0, Split::Train, spec.train_per_class},
        {SurrogateKind::FakeNearest, "fake_nearest", 1, Split::Train, spec.train_per_class},
        {SurrogateKind::Real, "real", 0, Split::Val, spec.val_per_class},
        {SurrogateKind::FakeNearest, "fake_nearest", 1, Split::Val, spec.val_per_class},
        {SurrogateKind::Real, "real", 0, Split::Test, spec.test_per_class},
        {SurrogateKind::FakeNearest, "fake_nearest", 1, Split::Test, spec.test_per_class},
        {SurrogateKind::FakeBilinear, "fake_bilinear", 1, Split::Test, spec.test_per_class},
    };
    std::size_t serial = 0;
    for (const auto& part : parts)
        for (std::size_t i = 0; i < part.count; ++i, ++serial) {
            const std::string name = std::string(part.sub) + "/" + split_name(part.split) + "_" + std::to_string(i) + ".ppm";
            save_ppm(dir / name, surrogate_image(part.kind, spec.side, root.substream(serial).next_u64(), spec.texture));
            m.entries.push_back({name, part.label, part.split});
        }
    const fs::path manifest = dir / "manifest.csv";
    write_manifest(manifest, m);
    return manifest;
}

}  // namespace mffd
