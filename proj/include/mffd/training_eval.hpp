#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mffd/detector_model.hpp"
#include "mffd/image_io.hpp"
#include "mffd/semantic_prior.hpp"

namespace mffd {

struct FocalLossConfig {
    double gamma = 2.0;
    std::optional<double> alpha;  // default: N_fake / (N_real + N_fake) of the training split
};

/// N_fake / (N_real + N_fake); InvalidArgument unless both classes occur.
double class_balance_alpha(std::span<const int> labels);

/// Class-balanced focal loss over logits [N] with p = sigmoid(logit):
/// -(1/N) sum [alpha y (1-p)^g log p + (1-alpha)(1-y) p^g log(1-p)].
/// Logs are evaluated as log-sigmoids, so saturated logits stay finite.
Tensor focal_loss(const Tensor& logits, std::span<const int> labels, double gamma, double alpha);

enum class OptimizerKind { Adam, SgdMomentum };

struct TrainConfig {
    double lr = 1e-4;
    std::size_t batch = 32;
    std::size_t epochs = 20;
    std::size_t warmup_iters = 500;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 5e-4;
    std::uint64_t seed = 1;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double momentum = 0.9;  // SgdMomentum only

    void validate(std::size_t total_iters) const;
};

/// Linear warmup to `cfg.lr`, then half-cosine decay to zero at total_iters.
double lr_at(std::size_t iter, std::size_t total_iters, const TrainConfig& cfg);

/// Adam with decoupled weight decay (theta -= lr * wd * theta), or SGD with
/// momentum and L2 folded into the gradient. Gradients are cleared after
/// every step.
class Optimizer {
public:
    Optimizer(std::vector<Tensor> params, const TrainConfig& cfg);
    void step(double lr);
    std::size_t steps() const noexcept { return t_; }

private:
    std::vector<Tensor> params_;
    TrainConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    std::size_t t_ = 0;
};

/// Images of one split, cropped and resized to the detector's input size.
struct LabeledImages {
    std::vector<ImageU8> images;
    std::vector<int> labels;
    std::vector<std::string> ids;  // manifest paths
};

LabeledImages load_split(const DatasetManifest& manifest, Split split, std::size_t image_size);

/// Branch inputs for a whole split, computed once.
struct FeatureSet {
    BranchInputs inputs;
    std::vector<int> labels;
    std::vector<std::string> ids;
    std::size_t size() const { return labels.size(); }
};

/// Semantic embeddings per image: the stub embedder, or lookups by id in
/// `table` when the config asks for file embeddings.
std::vector<Tensor> semantic_inputs(const DetectorConfig& cfg, const LabeledImages& data,
                                    const EmbeddingTable* table = nullptr);

FeatureSet build_features(const Detector& det, const LabeledImages& data, const EmbeddingTable* table = nullptr);

/// Rows `idx` of every branch input.
BranchInputs gather(const BranchInputs& in, std::span<const std::size_t> idx);

/// Eval-mode logits for every sample, in order.
std::vector<double> score(const Detector& det, const FeatureSet& data, std::size_t batch = 32);

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;  // mean focal loss over the epoch's samples
    double acc = 0.0;   // train-mode accuracy at logit > 0
};

using ProgressFn = std::function<void(const std::string&)>;

struct TrainResult {
    std::vector<EpochRecord> history;
    double alpha = 0.5;
    std::size_t iterations = 0;
};

/// Mini-batch training with a seeded per-epoch shuffle. Throws Divergence
/// when the loss stops being finite.
TrainResult train(Detector& det, const FeatureSet& data, const TrainConfig& cfg, const FocalLossConfig& focal,
                  const ProgressFn& progress = {});

/// Sum over descending distinct score levels of (R_k - R_{k-1}) * P_k, with
/// tied scores entering together.
double average_precision(std::span<const double> scores, std::span<const int> labels);

/// Balanced accuracy of the rule "fake iff score > threshold".
double balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Candidates are midpoints between adjacent distinct scores plus min - 1
/// (all fake) and max + 1 (all real). Returns the candidate with the highest
/// balanced accuracy; ties prefer midpoints, then the lowest threshold.
double calibrate_threshold(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
    double acc = 0.0;
    double ap = 0.0;
    double threshold = 0.0;
    std::size_t n_real = 0, n_fake = 0;
    std::size_t correct_real = 0, correct_fake = 0;

    /// `metric,value` CSV.
    std::string csv() const;
};

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold);

std::string history_csv(const std::vector<EpochRecord>& history);

}  // namespace mffd
