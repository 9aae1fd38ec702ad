#pragma once

#include <cstdint>
#include <filesystem>

#include "mffd/image_io.hpp"

namespace mffd {

/// Toy stand-in for the real/fake corpus. Real images are smoothed Gaussian
/// noise textures; fakes are textures of the same family downsampled 2x and
/// upsampled back, by pixel duplication (seen in training) or bilinearly
/// (held out as an unseen generator).
enum class SurrogateKind { Real, FakeNearest, FakeBilinear };

/// Smoothing sigma of the underlying texture is drawn uniformly from
/// [sigma_min, sigma_max]. The default keeps real textures carrying energy
/// above half the Nyquist frequency, which a 2x upsample cannot produce.
struct TextureRange {
    double sigma_min = 0.5;
    double sigma_max = 1.2;
};

ImageU8 surrogate_image(SurrogateKind kind, std::size_t side, std::uint64_t seed, const TextureRange& tex = {});

struct SurrogateSpec {
    std::size_t side = 64;
    std::size_t train_per_class = 200;
    std::size_t val_per_class = 50;
    std::size_t test_per_class = 100;  // real, nearest and bilinear each
    std::uint64_t seed = 1;
    TextureRange texture;
};

/// Writes PPMs under real/, fake_nearest/ and fake_bilinear/ plus
/// manifest.csv in `dir`; returns the manifest path. Bilinear fakes only
/// appear in the test split.
std::filesystem::path write_surrogate(const std::filesystem::path& dir, const SurrogateSpec& spec);

}  // namespace mffd
