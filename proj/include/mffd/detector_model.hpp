#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mffd/forensic_features.hpp"
#include "mffd/frequency_blocks.hpp"
#include "mffd/image_io.hpp"
#include "mffd/semantic_prior.hpp"
#include "mffd/tensor.hpp"

namespace mffd {

enum class GradientSource { Autodiff, Sobel };
enum class SemanticSource { Stub, File };
enum class Mode { Train, Eval };

struct DetectorConfig {
    bool use_npr = true;
    bool use_grad = true;
    bool use_semantic = true;
    GradientSource grad_source = GradientSource::Autodiff;
    bool guided = false;
    std::size_t npr_l = 2;
    std::uint64_t backbone_seed = 1;

    SemanticSource semantic_source = SemanticSource::Stub;
    std::size_t embed_dim = 768;
    std::size_t d_k = 64;
    std::size_t d_v = 64;
    std::size_t heads = 4;

    std::size_t image_size = 64;
    std::size_t width = 16;  // channels through the DWT and FADC stages
    std::size_t n_fadc_blocks = 3;
    std::size_t fadc_kernel = 3;
    std::size_t bands = 4;
    double d_base = 1.0;
    std::size_t stage1_channels = 32;
    std::size_t stage2_channels = 64;
    double dropout = 0.2;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;

    /// Channels of the concatenated NPR / gradient map.
    std::size_t local_channels() const;
    /// Channels entering the stem: local channels plus d_v with semantics on.
    std::size_t fused_channels() const;
    /// Throws InvalidConfig with the offending field.
    void validate() const;
};

/// Reduced widths used for the single-core surrogate experiment.
DetectorConfig desk_config();

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

/// Per-image branch inputs, computed once and reusable across epochs.
struct BranchInputs {
    Tensor local;  // [N, local_channels, S, S]
    Tensor phi;    // [N, D] or undefined when semantics are off
};

class Detector {
public:
    Detector(DetectorConfig cfg, std::uint64_t seed);

    const DetectorConfig& config() const noexcept { return cfg_; }

    /// Trainable parameters in a fixed order.
    std::vector<NamedTensor> parameters() const;
    /// Batch-norm running statistics (not trainable).
    std::vector<NamedTensor> buffers() const;
    /// parameters() followed by buffers(); what the weights file holds.
    std::vector<NamedTensor> state() const;
    std::size_t parameter_count() const;

    /// NPR / gradient maps for [N, 3, S, S] images in [0, 1].
    Tensor local_features(const Tensor& images) const;
    BranchInputs prepare(std::span<const ImageU8> images, std::span<const Tensor> phis = {}) const;

    /// Logits [N]. Train mode uses batch statistics, updates running
    /// statistics and draws dropout masks from `rng`.
    Tensor forward(const BranchInputs& in, Mode mode, Rng* rng = nullptr);
    /// Eval-mode logits without touching any state.
    Tensor predict(const BranchInputs& in) const;

    /// Sets the per-channel standardisation applied to local features from
    /// their mean and standard deviation over a training set [N, C, S, S].
    void fit_input_norm(const Tensor& local);

    const FixedBackbone& backbone() const noexcept { return backbone_; }

private:
    struct Stage {
        Tensor weight, bias, gamma, beta, running_mean, running_var;
    };

    Tensor run(const BranchInputs& in, Mode mode, Rng* rng, bool update_stats) const;

    DetectorConfig cfg_;
    FixedBackbone backbone_;
    Tensor norm_mean_, norm_std_;  // [local_channels]
    BandSpec spec_;
    CrossAttentionParams attn_;
    Tensor stem_w_, stem_b_;
    Tensor approx_w_, approx_b_;
    std::vector<FadcBlockParams> blocks_;
    SpatialAttentionParams sa_;
    Stage stages_[2];
    Tensor fc_w_, fc_b_;
};

/// Eval-mode logit for one image; `phi` must be given iff semantics are on.
double forward(const Detector& det, const ImageU8& img, const Tensor& phi = Tensor());

inline constexpr std::uint32_t kFwtsVersion = 1;

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes);
void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path);

void save_weights(const std::filesystem::path& path, const Detector& det);
/// Copies values into the detector's existing tensors. Names and shapes must
/// match the detector's state exactly (NameMismatch / ShapeMismatch).
void load_weights(const std::filesystem::path& path, Detector& det);
void load_state(const std::vector<NamedTensor>& tensors, Detector& det);

}  // namespace mffd
