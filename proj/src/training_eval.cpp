#include "mffd/training_eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mffd/ops.hpp"

namespace mffd {

double class_balance_alpha(std::span<const int> labels) {
    const auto fake = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
    require(fake > 0 && fake < labels.size(), ErrorCode::InvalidArgument,
            "class-balance alpha needs both classes in the training split");
    return static_cast<double>(fake) / static_cast<double>(labels.size());
}

namespace {

// log(sigmoid(z)) without overflow
double log_sigmoid(double z) { return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

void check_labels(std::span<const int> labels) {
    for (int y : labels) require(y == 0 || y == 1, ErrorCode::InvalidArgument, "labels must be 0 or 1");
}

}  // namespace

Tensor focal_loss(const Tensor& logits, std::span<const int> labels, double gamma, double alpha) {
    require(logits.defined() && logits.dim() == 1, ErrorCode::ShapeMismatch, "focal_loss expects logits [N]");
    const std::size_t N = logits.numel();
    require(N >= 1, ErrorCode::InvalidArgument, "focal_loss on an empty batch");
    require(labels.size() == N, ErrorCode::ShapeMismatch,
            std::to_string(labels.size()) + " labels for " + std::to_string(N) + " logits");
    require(gamma >= 0.0, ErrorCode::InvalidArgument, "gamma must be >= 0");
    require(alpha > 0.0 && alpha < 1.0, ErrorCode::InvalidArgument, "alpha must be in (0, 1)");
    check_labels(labels);

    const auto z = logits.data();
    double total = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        if (labels[i] == 1)
            total -= alpha * std::pow(sigmoid(-z[i]), gamma) * log_sigmoid(z[i]);
        else
            total -= (1.0 - alpha) * std::pow(sigmoid(z[i]), gamma) * log_sigmoid(-z[i]);
    }
    Tensor result = Tensor::scalar(total / static_cast<double>(N));
    if (needs_grad({&logits})) {
        std::vector<int> y(labels.begin(), labels.end());
        record_op(result, [logits, result, y = std::move(y), gamma, alpha, N]() mutable {
            const double g = result.grad()[0] / static_cast<double>(N);
            const auto zv = logits.data();
            auto gz = logits.grad_buffer();
            for (std::size_t i = 0; i < N; ++i) {
                const double p = sigmoid(zv[i]), q = sigmoid(-zv[i]);
                if (y[i] == 1)
                    gz[i] += g * alpha * std::pow(q, gamma) * (gamma * p * log_sigmoid(zv[i]) - q);
                else
                    gz[i] += g * (1.0 - alpha) * std::pow(p, gamma) * (p - gamma * q * log_sigmoid(-zv[i]));
            }
        });
    }
    return result;
}

void TrainConfig::validate(std::size_t total_iters) const {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::InvalidConfig, msg); };
    check(lr > 0.0, "lr must be positive");
    check(batch > 0 && epochs > 0, "batch and epochs must be positive");
    check(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "betas must be in [0, 1)");
    check(eps > 0.0, "eps must be positive");
    check(weight_decay >= 0.0, "weight_decay must be >= 0");
    check(momentum >= 0.0 && momentum < 1.0, "momentum must be in [0, 1)");
    check(warmup_iters <= total_iters, "warmup_iters (" + std::to_string(warmup_iters) +
                                           ") exceeds the total iteration count (" + std::to_string(total_iters) + ")");
}

double lr_at(std::size_t iter, std::size_t total_iters, const TrainConfig& cfg) {
    require(iter < total_iters, ErrorCode::InvalidArgument,
            "iteration " + std::to_string(iter) + " outside schedule of " + std::to_string(total_iters));
    if (iter < cfg.warmup_iters) return cfg.lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
    const double t = static_cast<double>(iter - cfg.warmup_iters) / static_cast<double>(total_iters - cfg.warmup_iters);
    return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

Optimizer::Optimizer(std::vector<Tensor> params, const TrainConfig& cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        if (cfg_.optimizer == OptimizerKind::Adam) v_.emplace_back(p.numel(), 0.0);
    }
}

void Optimizer::step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Tensor& p = params_[k];
        auto w = p.mutable_data();
        const auto g = p.grad();
        const bool has = p.has_grad();
        auto& m = m_[k];
        if (cfg_.optimizer == OptimizerKind::Adam) {
            auto& v = v_[k];
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = has ? g[i] : 0.0;
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = m[i] / bc1, vhat = v[i] / bc2;
                w[i] -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * w[i]);
            }
        } else {
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = (has ? g[i] : 0.0) + cfg_.weight_decay * w[i];
                m[i] = cfg_.momentum * m[i] + gi;
                w[i] -= lr * m[i];
            }
        }
        p.zero_grad();
    }
}

LabeledImages load_split(const DatasetManifest& manifest, Split split, std::size_t image_size) {
    const auto entries = manifest.select(split);
    require(!entries.empty(), ErrorCode::EmptySplit, "split '" + split_name(split) + "' is empty");
    require_both_classes(entries, split);
    LabeledImages out;
    for (const auto& e : entries) {
        out.images.push_back(center_crop_resize(load_ppm(manifest.resolve(e)), image_size));
        out.labels.push_back(e.label);
        out.ids.push_back(e.path);
    }
    return out;
}

std::vector<Tensor> semantic_inputs(const DetectorConfig& cfg, const LabeledImages& data, const EmbeddingTable* table) {
    std::vector<Tensor> phis;
    if (!cfg.use_semantic) return phis;
    if (cfg.semantic_source == SemanticSource::File) {
        require(table != nullptr, ErrorCode::MissingEmbedding, "semantic_source=file needs an embeddings file");
        require(table->dim() == cfg.embed_dim, ErrorCode::DimMismatch,
                "embeddings file has D=" + std::to_string(table->dim()) + ", config expects " +
                    std::to_string(cfg.embed_dim));
    }
    for (std::size_t i = 0; i < data.images.size(); ++i) {
        const EmbeddingRecord rec = cfg.semantic_source == SemanticSource::File
                                        ? table->at(data.ids[i])
                                        : stub_embed(data.images[i], cfg.embed_dim, data.ids[i]);
        phis.emplace_back(Shape{cfg.embed_dim}, std::vector<double>(rec.vector.begin(), rec.vector.end()));
    }
    return phis;
}

FeatureSet build_features(const Detector& det, const LabeledImages& data, const EmbeddingTable* table) {
    require(!data.images.empty(), ErrorCode::EmptySplit, "no images to featurize");
    const auto phis = semantic_inputs(det.config(), data, table);
    constexpr std::size_t kChunk = 32;
    std::vector<Tensor> locals, phi_rows;
    for (std::size_t s = 0; s < data.images.size(); s += kChunk) {
        const std::size_t n = std::min(kChunk, data.images.size() - s);
        const std::span<const ImageU8> imgs(data.images.data() + s, n);
        const std::span<const Tensor> ph = phis.empty() ? std::span<const Tensor>() : std::span(phis.data() + s, n);
        BranchInputs part = det.prepare(imgs, ph);
        locals.push_back(part.local);
        if (part.phi.defined()) phi_rows.push_back(part.phi);
    }
    NoGradGuard no_grad;
    FeatureSet fs;
    fs.inputs.local = locals.size() == 1 ? locals[0] : ops::concat(locals, 0);
    if (!phi_rows.empty()) fs.inputs.phi = phi_rows.size() == 1 ? phi_rows[0] : ops::concat(phi_rows, 0);
    fs.labels = data.labels;
    fs.ids = data.ids;
    return fs;
}

namespace {

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> idx) {
    Shape shape = t.shape();
    const std::size_t row = t.numel() / shape[0];
    std::vector<double> out(idx.size() * row);
    const auto v = t.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
        require(idx[i] < shape[0], ErrorCode::InvalidArgument, "gather index out of range");
        std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row, out.begin() + static_cast<std::ptrdiff_t>(i * row));
    }
    shape[0] = idx.size();
    return Tensor(std::move(shape), std::move(out));
}

}  // namespace

BranchInputs gather(const BranchInputs& in, std::span<const std::size_t> idx) {
    BranchInputs out;
    out.local = gather_rows(in.local, idx);
    if (in.phi.defined()) out.phi = gather_rows(in.phi, idx);
    return out;
}

std::vector<double> score(const Detector& det, const FeatureSet& data, std::size_t batch) {
    require(batch > 0, ErrorCode::InvalidArgument, "batch must be positive");
    NoGradGuard no_grad;
    std::vector<double> out;
    out.reserve(data.size());
    for (std::size_t s = 0; s < data.size(); s += batch) {
        std::vector<std::size_t> idx(std::min(batch, data.size() - s));
        std::iota(idx.begin(), idx.end(), s);
        const Tensor logits = det.predict(gather(data.inputs, idx));
        out.insert(out.end(), logits.data().begin(), logits.data().end());
    }
    return out;
}

TrainResult train(Detector& det, const FeatureSet& data, const TrainConfig& cfg, const FocalLossConfig& focal,
                  const ProgressFn& progress) {
    const std::size_t n = data.size();
    require(n > 0, ErrorCode::EmptySplit, "training split is empty");
    const std::size_t per_epoch = (n + cfg.batch - 1) / cfg.batch;
    const std::size_t total = per_epoch * cfg.epochs;
    cfg.validate(total);

    TrainResult res;
    det.fit_input_norm(data.inputs.local);
    res.alpha = focal.alpha ? *focal.alpha : class_balance_alpha(data.labels);
    std::vector<Tensor> params;
    for (const auto& p : det.parameters()) params.push_back(p.tensor);
    Optimizer opt(params, cfg);
    const Rng root(cfg.seed);
    Rng dropout_rng = root.substream("dropout");

    std::vector<std::size_t> order(n);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle = root.substream("shuffle").substream(epoch);
        for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

        double loss_sum = 0.0;
        std::size_t correct = 0;
        for (std::size_t b = 0; b < per_epoch; ++b) {
            const std::span<const std::size_t> idx(order.data() + b * cfg.batch, std::min(cfg.batch, n - b * cfg.batch));
            std::vector<int> y;
            for (std::size_t i : idx) y.push_back(data.labels[i]);
            Tape::current().clear();
            const Tensor logits = det.forward(gather(data.inputs, idx), Mode::Train, &dropout_rng);
            const Tensor loss = focal_loss(logits, y, focal.gamma, res.alpha);
            const double lv = loss.item();
            if (!std::isfinite(lv))
                fail(ErrorCode::Divergence, "loss is " + std::to_string(lv) + " at epoch " + std::to_string(epoch + 1) +
                                                ", iteration " + std::to_string(res.iterations));
            backward(loss);
            opt.step(lr_at(res.iterations, total, cfg));
            ++res.iterations;
            loss_sum += lv * static_cast<double>(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) correct += (logits[i] > 0.0) == (y[i] == 1);
        }
        EpochRecord rec{epoch + 1, loss_sum / static_cast<double>(n), static_cast<double>(correct) / static_cast<double>(n)};
        res.history.push_back(rec);
        if (progress) {
            std::ostringstream msg;
            msg << "epoch " << rec.epoch << "/" << cfg.epochs << " loss " << rec.loss << " acc " << rec.acc;
            progress(msg.str());
        }
    }
    return res;
}

namespace {

struct Counts {
    std::size_t pos = 0, neg = 0;
};

Counts count_classes(std::span<const double> scores, std::span<const int> labels) {
    require(scores.size() == labels.size(), ErrorCode::ShapeMismatch,
            std::to_string(scores.size()) + " scores for " + std::to_string(labels.size()) + " labels");
    check_labels(labels);
    Counts c;
    for (int y : labels) (y ? c.pos : c.neg) += 1;
    return c;
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace

double average_precision(std::span<const double> scores, std::span<const int> labels) {
    const Counts c = count_classes(scores, labels);
    require(c.pos > 0, ErrorCode::InvalidArgument, "average precision needs at least one positive");
    const auto order = descending_order(scores);
    double ap = 0.0, prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double level = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == level; ++i) (labels[order[i]] ? tp : fp) += 1;
        const double recall = static_cast<double>(tp) / static_cast<double>(c.pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return ap;
}

double balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
    const Counts c = count_classes(scores, labels);
    require(c.pos > 0 && c.neg > 0, ErrorCode::InvalidArgument, "balanced accuracy needs both classes");
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool fake = scores[i] > threshold;
        tp += fake && labels[i] == 1;
        tn += !fake && labels[i] == 0;
    }
    return 0.5 * (static_cast<double>(tp) / static_cast<double>(c.pos) + static_cast<double>(tn) / static_cast<double>(c.neg));
}

double calibrate_threshold(std::span<const double> scores, std::span<const int> labels) {
    const Counts c = count_classes(scores, labels);
    require(c.pos > 0 && c.neg > 0, ErrorCode::InvalidArgument, "threshold calibration needs both classes");
    for (double s : scores) require(std::isfinite(s), ErrorCode::NonFinite, "scores must be finite");

    // Sweep thresholds upwards; below every score all samples are called fake.
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    auto ba = [&](std::size_t tp, std::size_t tn) {
        return 0.5 * (static_cast<double>(tp) / static_cast<double>(c.pos) +
                      static_cast<double>(tn) / static_cast<double>(c.neg));
    };
    std::size_t tp = c.pos, tn = 0;
    const double lo = scores[order.front()] - 1.0, hi = scores[order.back()] + 1.0;
    double best_t = lo, best = ba(tp, tn);
    bool best_is_mid = false;
    for (std::size_t i = 0; i < order.size();) {
        const double level = scores[order[i]];
        for (; i < order.size() && scores[order[i]] == level; ++i) {
            if (labels[order[i]] == 1)
                --tp;
            else
                ++tn;
        }
        const double value = ba(tp, tn);
        const bool mid = i < order.size();
        const double t = mid ? 0.5 * (level + scores[order[i]]) : hi;
        if (value > best || (value == best && mid && !best_is_mid)) {
            best = value;
            best_t = t;
            best_is_mid = mid;
        }
    }
    return best_t;
}

EvalReport evaluate(std::span<const double> scores, std::span<const int> labels, double threshold) {
    const Counts c = count_classes(scores, labels);
    EvalReport r;
    r.threshold = threshold;
    r.n_real = c.neg;
    r.n_fake = c.pos;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool fake = scores[i] > threshold;
        if (labels[i] == 1 && fake) ++r.correct_fake;
        if (labels[i] == 0 && !fake) ++r.correct_real;
    }
    require(!scores.empty(), ErrorCode::EmptySplit, "nothing to evaluate");
    r.acc = static_cast<double>(r.correct_real + r.correct_fake) / static_cast<double>(scores.size());
    r.ap = c.pos > 0 ? average_precision(scores, labels) : 0.0;
    return r;
}

std::string EvalReport::csv() const {
    std::ostringstream out;
    out << std::setprecision(17);
    out << "metric,value\n"
        << "acc," << acc << "\n"
        << "ap," << ap << "\n"
        << "threshold," << threshold << "\n"
        << "n_real," << n_real << "\n"
        << "n_fake," << n_fake << "\n"
        << "correct_real," << correct_real << "\n"
        << "correct_fake," << correct_fake << "\n";
    return out.str();
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream out;
    out << std::setprecision(17) << "epoch,loss,acc\n";
    for (const auto& h : history) out << h.epoch << ',' << h.loss << ',' << h.acc << '\n';
    return out.str();
}

}  // namespace mffd
