#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "mffd/detector_model.hpp"
#include "mffd/image_io.hpp"
#include "mffd/semantic_prior.hpp"
#include "mffd/training_eval.hpp"

namespace mffd {

/// Standard IJG tables (row-major, natural order).
extern const std::array<int, 64> kLumaQuant;
extern const std::array<int, 64> kChromaQuant;

/// IJG quality scaling: S = 5000/q below 50, else 200 - 2q;
/// entry = clamp(floor((t*S + 50) / 100), 1, 255).
std::array<int, 64> scaled_quant_table(const std::array<int, 64>& base, int quality);

/// Orthonormal 8x8 DCT-II as used by JPEG and its inverse.
void dct8x8(const double* in, double* out);
void idct8x8(const double* in, double* out);

/// JPEG-style round trip: BT.601 YCbCr, 8x8 DCT, quantise with IJG tables
/// at quality q, dequantise, inverse DCT, back to RGB, round half away from
/// zero. No chroma subsampling or entropy coding. Sides are reflect-padded to
/// a multiple of 8 and cropped back.
ImageU8 jpeg_like(const ImageU8& img, int quality);

/// Separable Gaussian, radius ceil(3 sigma), reflect padding, rounded once
/// at the end. sigma = 0 is the identity.
ImageU8 gaussian_blur(const ImageU8& img, double sigma);

/// Adds sigma * N(0, 1) per channel value (0-255 units), then clamps and rounds.
ImageU8 gaussian_noise(const ImageU8& img, double sigma, std::uint64_t seed);

enum class PerturbKind { Jpeg, Blur, Noise };

struct PerturbSpec {
    PerturbKind kind = PerturbKind::Blur;
    double level = 0.0;  // quality for jpeg, sigma otherwise
    std::uint64_t seed = 1;

    void validate() const;
    std::string kind_name() const;
};

/// Parses `kind:level[,kind:level...]`.
std::vector<PerturbSpec> parse_specs(const std::string& text, std::uint64_t seed = 1);

/// Applies a spec to image number `index` of a set; noise draws from a
/// substream keyed by the index so every image gets its own field.
ImageU8 perturb(const ImageU8& img, const PerturbSpec& spec, std::size_t index = 0);

struct RobustnessRow {
    std::string kind;
    double level = 0.0;
    double acc = 0.0;
    double ap = 0.0;
};

struct RobustnessReport {
    std::vector<RobustnessRow> rows;
    /// `kind,level,acc,ap`.
    std::string csv() const;
};

/// Scores every perturbed test image at the calibrated threshold. Rows keep
/// the first-appearance order of kinds with levels ascending within a kind.
RobustnessReport robustness_sweep(const Detector& det, const LabeledImages& test, const std::vector<PerturbSpec>& specs,
                                  double threshold, const EmbeddingTable* table = nullptr,
                                  const ProgressFn& progress = {});

}  // namespace mffd
