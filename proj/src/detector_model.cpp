#include "mffd/detector_model.hpp"

#include <cmath>
#include <map>

#include "byte_io.hpp"
#include "mffd/ops.hpp"

namespace mffd {

std::size_t DetectorConfig::local_channels() const {
    std::size_t c = 0;
    if (use_npr) c += npr_channels({npr_l});
    if (use_grad) c += grad_source == GradientSource::Sobel ? 6 : 3;
    return c;
}

std::size_t DetectorConfig::fused_channels() const { return local_channels() + (use_semantic ? d_v : 0); }

void DetectorConfig::validate() const {
    auto check = [](bool ok, const std::string& msg) { require(ok, ErrorCode::InvalidConfig, msg); };
    check(use_npr || use_grad || use_semantic, "at least one feature branch must be enabled");
    check(use_npr || use_grad, "the semantic branch attends over local features and needs use_npr or use_grad");
    check(npr_l >= 2, "npr_l must be >= 2");
    check(image_size >= 8 && (image_size & (image_size - 1)) == 0, "image_size must be a power of two >= 8");
    check(image_size % npr_l == 0, "image_size must be divisible by npr_l");
    check(width > 0 && stage1_channels > 0 && stage2_channels > 0, "channel counts must be positive");
    check(fadc_kernel % 2 == 1, "fadc_kernel must be odd");
    check(bands >= 1, "bands must be >= 1");
    check(d_base > 0.0, "d_base must be positive");
    check(dropout >= 0.0 && dropout < 1.0, "dropout must be in [0, 1)");
    check(bn_momentum > 0.0 && bn_momentum <= 1.0, "bn_momentum must be in (0, 1]");
    if (use_semantic) {
        check(embed_dim > 0 && heads > 0, "embed_dim and heads must be positive");
        check(d_k % heads == 0 && d_v % heads == 0, "d_k and d_v must be divisible by heads");
    }
}

DetectorConfig desk_config() {
    DetectorConfig cfg;
    cfg.width = 8;
    cfg.n_fadc_blocks = 2;
    cfg.d_k = 16;
    cfg.d_v = 16;
    cfg.stage1_channels = 16;
    cfg.stage2_channels = 32;
    return cfg;
}

namespace {

const DetectorConfig& validated(const DetectorConfig& cfg) {
    cfg.validate();
    return cfg;
}

Tensor he_uniform(Shape s, std::size_t fan_in, Rng rng) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    return Tensor::uniform(std::move(s), rng, -bound, bound).set_requires_grad(true);
}

Tensor trainable_zeros(Shape s) { return Tensor::zeros(std::move(s)).set_requires_grad(true); }

}  // namespace

Detector::Detector(DetectorConfig cfg, std::uint64_t seed)
    : cfg_(validated(cfg)), backbone_(cfg.backbone_seed), spec_(cfg.bands, cfg.image_size, cfg.image_size) {
    const Rng root = Rng(seed).substream("detector");
    norm_mean_ = Tensor::zeros({cfg_.local_channels()});
    norm_std_ = Tensor::full({cfg_.local_channels()}, 1.0);
    const std::size_t C = cfg_.width, Cf = cfg_.fused_channels();
    if (cfg_.use_semantic) {
        Rng r = root.substream("attn");
        attn_ = init_cross_attention(cfg_.embed_dim, cfg_.local_channels(), cfg_.d_k, cfg_.d_v, cfg_.heads, r);
    }
    stem_w_ = he_uniform({C, Cf, 1, 1}, Cf, root.substream("stem"));
    stem_b_ = trainable_zeros({C});
    approx_w_ = he_uniform({C, C, 3, 3}, C * 9, root.substream("approx"));
    approx_b_ = trainable_zeros({C});
    for (std::size_t i = 0; i < cfg_.n_fadc_blocks; ++i) {
        Rng r = root.substream("fadc").substream(i);
        blocks_.push_back(init_fadc_block(C, cfg_.fadc_kernel, cfg_.d_base, cfg_.bands, r));
    }
    {
        Rng r = root.substream("spatial_attention");
        sa_ = init_spatial_attention(r);
    }
    const std::size_t in_ch[2] = {C, cfg_.stage1_channels};
    const std::size_t out_ch[2] = {cfg_.stage1_channels, cfg_.stage2_channels};
    for (int s = 0; s < 2; ++s) {
        Stage& st = stages_[s];
        st.weight = he_uniform({out_ch[s], in_ch[s], 3, 3}, in_ch[s] * 9, root.substream("stage").substream(s));
        st.bias = trainable_zeros({out_ch[s]});
        st.gamma = Tensor::full({out_ch[s]}, 1.0).set_requires_grad(true);
        st.beta = trainable_zeros({out_ch[s]});
        st.running_mean = Tensor::zeros({out_ch[s]});
        st.running_var = Tensor::full({out_ch[s]}, 1.0);
    }
    fc_w_ = he_uniform({cfg_.stage2_channels, 1}, cfg_.stage2_channels, root.substream("fc"));
    fc_b_ = trainable_zeros({1});
}

std::vector<NamedTensor> Detector::parameters() const {
    std::vector<NamedTensor> p;
    if (cfg_.use_semantic) {
        p.push_back({"attn.w_q", attn_.w_q});
        p.push_back({"attn.w_k", attn_.w_k});
        p.push_back({"attn.w_v", attn_.w_v});
    }
    p.push_back({"stem.weight", stem_w_});
    p.push_back({"stem.bias", stem_b_});
    p.push_back({"dwt.approx.weight", approx_w_});
    p.push_back({"dwt.approx.bias", approx_b_});
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        const std::string pre = "fadc" + std::to_string(i) + ".";
        const auto& b = blocks_[i];
        p.push_back({pre + "weight", b.fadc.weight});
        p.push_back({pre + "pred_w", b.fadc.pred_w});
        p.push_back({pre + "pred_b", b.fadc.pred_b});
        p.push_back({pre + "lambda_w", b.fadc.lambda_w});
        p.push_back({pre + "lambda_b", b.fadc.lambda_b});
        p.push_back({pre + "select_w", b.select.weight});
        p.push_back({pre + "select_b", b.select.bias});
    }
    p.push_back({"spatial_attention.weight", sa_.weight});
    p.push_back({"spatial_attention.bias", sa_.bias});
    for (int s = 0; s < 2; ++s) {
        const std::string pre = "stage" + std::to_string(s + 1) + ".";
        p.push_back({pre + "conv.weight", stages_[s].weight});
        p.push_back({pre + "conv.bias", stages_[s].bias});
        p.push_back({pre + "bn.gamma", stages_[s].gamma});
        p.push_back({pre + "bn.beta", stages_[s].beta});
    }
    p.push_back({"fc.weight", fc_w_});
    p.push_back({"fc.bias", fc_b_});
    return p;
}

std::vector<NamedTensor> Detector::buffers() const {
    std::vector<NamedTensor> b;
    b.push_back({"input_norm.mean", norm_mean_});
    b.push_back({"input_norm.std", norm_std_});
    for (int s = 0; s < 2; ++s) {
        const std::string pre = "stage" + std::to_string(s + 1) + ".bn.";
        b.push_back({pre + "running_mean", stages_[s].running_mean});
        b.push_back({pre + "running_var", stages_[s].running_var});
    }
    return b;
}

std::vector<NamedTensor> Detector::state() const {
    auto s = parameters();
    for (auto& b : buffers()) s.push_back(std::move(b));
    return s;
}

std::size_t Detector::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
}

Tensor Detector::local_features(const Tensor& images) const {
    require(images.dim() == 4 && images.shape()[1] == 3 && images.shape()[2] == cfg_.image_size &&
                images.shape()[3] == cfg_.image_size,
            ErrorCode::ShapeMismatch,
            "detector expects [N,3," + std::to_string(cfg_.image_size) + "," + std::to_string(cfg_.image_size) +
                "] images, got " + shape_str(images.shape()));
    std::vector<Tensor> parts;
    if (cfg_.use_npr) parts.push_back(npr_extract(images, {cfg_.npr_l}));
    if (cfg_.use_grad)
        parts.push_back(cfg_.grad_source == GradientSource::Sobel ? sobel_gradient(images)
                                                                   : gradient_extract(images, backbone_, cfg_.guided));
    return parts.size() == 1 ? parts[0] : ops::concat(parts, 1);
}

BranchInputs Detector::prepare(std::span<const ImageU8> images, std::span<const Tensor> phis) const {
    BranchInputs in;
    in.local = local_features(to_tensor_batch(images));
    if (cfg_.use_semantic) {
        require(phis.size() == images.size(), ErrorCode::MissingEmbedding,
                "semantic branch needs one embedding per image (" + std::to_string(phis.size()) + " for " +
                    std::to_string(images.size()) + " images)");
        std::vector<Tensor> rows;
        for (const auto& phi : phis) {
            require(phi.defined() && phi.numel() == cfg_.embed_dim, ErrorCode::DimMismatch,
                    "embedding has " + std::to_string(phi.defined() ? phi.numel() : 0) + " values, expected " +
                        std::to_string(cfg_.embed_dim));
            rows.push_back(phi.reshaped_copy({1, cfg_.embed_dim}));
        }
        in.phi = rows.size() == 1 ? rows[0] : ops::concat(rows, 0);
    }
    return in;
}

void Detector::fit_input_norm(const Tensor& local) {
    require(local.dim() == 4 && local.shape()[1] == cfg_.local_channels(), ErrorCode::ShapeMismatch,
            "input statistics need [N," + std::to_string(cfg_.local_channels()) + ",H,W], got " + shape_str(local.shape()));
    const std::size_t N = local.shape()[0], C = local.shape()[1], P = local.shape()[2] * local.shape()[3];
    const auto v = local.data();
    auto mean = norm_mean_.mutable_data();
    auto sd = norm_std_.mutable_data();
    for (std::size_t c = 0; c < C; ++c) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t p = 0; p < P; ++p) s += v[(n * C + c) * P + p];
        const double m = s / static_cast<double>(N * P);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t p = 0; p < P; ++p) {
                const double d = v[(n * C + c) * P + p] - m;
                s2 += d * d;
            }
        const double std = std::sqrt(s2 / static_cast<double>(N * P));
        mean[c] = m;
        // constant channels pass through unscaled
        sd[c] = std > 1e-12 ? std : 1.0;
    }
}

Tensor Detector::forward(const BranchInputs& in, Mode mode, Rng* rng) {
    return run(in, mode, rng, mode == Mode::Train);
}

Tensor Detector::predict(const BranchInputs& in) const { return run(in, Mode::Eval, nullptr, false); }

Tensor Detector::run(const BranchInputs& in, Mode mode, Rng* rng, bool update_stats) const {
    const bool train = mode == Mode::Train;
    require(!train || rng != nullptr, ErrorCode::InvalidArgument, "train-mode forward needs an RNG for dropout");
    require(in.local.defined() && in.local.dim() == 4 && in.local.shape()[1] == cfg_.local_channels(),
            ErrorCode::ShapeMismatch, "local features must have " + std::to_string(cfg_.local_channels()) + " channels");
    const std::size_t N = in.local.shape()[0];

    const std::size_t Cl = cfg_.local_channels();
    std::vector<double> inv(Cl);
    for (std::size_t c = 0; c < Cl; ++c) inv[c] = 1.0 / norm_std_[c];
    Tensor x = ops::mul(ops::sub(in.local, norm_mean_.reshaped_copy({1, Cl, 1, 1})), Tensor({1, Cl, 1, 1}, std::move(inv)));
    if (cfg_.use_semantic) {
        require(in.phi.defined(), ErrorCode::MissingEmbedding, "semantic branch is on but no embedding was given");
        require(in.phi.shape() == Shape{N, cfg_.embed_dim}, ErrorCode::DimMismatch,
                "embeddings must be [" + std::to_string(N) + "," + std::to_string(cfg_.embed_dim) + "], got " +
                    shape_str(in.phi.shape()));
        x = fuse(in.phi, x, attn_);
    }
    x = ops::conv2d(x, stem_w_, stem_b_);

    HaarBands bands = haar_dwt(x);
    bands.ll = ops::relu(ops::add(bands.ll, ops::conv2d(bands.ll, approx_w_, approx_b_)));
    x = haar_idwt(bands);

    for (const auto& block : blocks_) x = fadc_block(x, spec_, block);
    x = spatial_attention(x, sa_);

    for (int s = 0; s < 2; ++s) {
        const Stage& st = stages_[s];
        ops::Conv2dOptions down;
        down.stride = 2;
        x = ops::relu(ops::conv2d(x, st.weight, st.bias, down));
        if (train) {
            std::vector<double> mean, var;
            x = ops::batchnorm_train(x, st.gamma, st.beta, cfg_.bn_eps, &mean, &var);
            if (update_stats) {
                auto rm = const_cast<Tensor&>(st.running_mean).mutable_data();
                auto rv = const_cast<Tensor&>(st.running_var).mutable_data();
                for (std::size_t c = 0; c < mean.size(); ++c) {
                    rm[c] = (1.0 - cfg_.bn_momentum) * rm[c] + cfg_.bn_momentum * mean[c];
                    rv[c] = (1.0 - cfg_.bn_momentum) * rv[c] + cfg_.bn_momentum * var[c];
                }
            }
            x = ops::dropout(x, cfg_.dropout, true, *rng);
        } else {
            x = ops::batchnorm_inference(x, st.gamma, st.beta, st.running_mean, st.running_var, cfg_.bn_eps);
        }
    }
    const Tensor pooled = ops::mean_axis(ops::mean_axis(x, 3), 2);  // [N, C2]
    return ops::reshape(ops::add(ops::matmul(pooled, fc_w_), fc_b_), {N});
}

double forward(const Detector& det, const ImageU8& img, const Tensor& phi) {
    std::vector<Tensor> phis;
    if (phi.defined()) phis.push_back(phi);
    require(!det.config().use_semantic || phi.defined(), ErrorCode::MissingEmbedding,
            "semantic branch is on but no embedding was given");
    NoGradGuard no_grad;
    return det.predict(det.prepare(std::span<const ImageU8>(&img, 1), phis))[0];
}

std::vector<std::uint8_t> encode_tensors(const std::vector<NamedTensor>& tensors) {
    detail::ByteWriter w;
    w.raw("FWTS");
    w.u32(kFwtsVersion);
    w.u32(static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        w.u32(static_cast<std::uint32_t>(t.name.size()));
        w.raw(t.name);
        w.u32(static_cast<std::uint32_t>(t.tensor.dim()));
        for (std::size_t d : t.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.tensor.data()) w.f64(v);
    }
    return w.take();
}

std::vector<NamedTensor> decode_tensors(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    require(r.remaining() >= 4 && r.raw(4) == "FWTS", ErrorCode::BadMagic, "not a FWTS weights file");
    const std::uint32_t version = r.u32();
    require(version == kFwtsVersion, ErrorCode::BadVersion, "unsupported FWTS version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = r.raw(r.u32());
        for (const auto& prev : out)
            require(prev.name != t.name, ErrorCode::DuplicateId, "duplicate tensor name '" + t.name + "'");
        const std::uint32_t ndim = r.u32();
        Shape shape(ndim);
        for (auto& d : shape) d = r.u32();
        std::size_t n = shape_numel(shape);
        require(n <= r.remaining() / 8, ErrorCode::Truncated, "tensor '" + t.name + "' payload is truncated");
        std::vector<double> v(n);
        for (auto& x : v) x = r.f64();
        t.tensor = Tensor(std::move(shape), std::move(v));
        out.push_back(std::move(t));
    }
    require(r.done(), ErrorCode::MalformedHeader, "trailing bytes after last FWTS tensor");
    return out;
}

void write_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    detail::write_file_bytes(path.string(), encode_tensors(tensors));
}

std::vector<NamedTensor> read_tensor_file(const std::filesystem::path& path) {
    return decode_tensors(detail::read_file_bytes(path.string()));
}

void save_weights(const std::filesystem::path& path, const Detector& det) { write_tensor_file(path, det.state()); }

void load_state(const std::vector<NamedTensor>& tensors, Detector& det) {
    auto state = det.state();
    std::map<std::string, const Tensor*> given;
    for (const auto& t : tensors) given[t.name] = &t.tensor;
    for (const auto& t : tensors) {
        bool known = false;
        for (const auto& s : state) known |= s.name == t.name;
        require(known, ErrorCode::NameMismatch, "weights file has unexpected tensor '" + t.name + "'");
    }
    for (auto& s : state) {
        const auto it = given.find(s.name);
        require(it != given.end(), ErrorCode::NameMismatch, "weights file lacks tensor '" + s.name + "'");
        require(it->second->shape() == s.tensor.shape(), ErrorCode::ShapeMismatch,
                "tensor '" + s.name + "' has shape " + shape_str(it->second->shape()) + ", model expects " +
                    shape_str(s.tensor.shape()));
    }
    for (auto& s : state) {
        const auto src = given[s.name]->data();
        std::copy(src.begin(), src.end(), s.tensor.mutable_data().begin());
    }
}

void load_weights(const std::filesystem::path& path, Detector& det) { load_state(read_tensor_file(path), det); }

}  // namespace mffd
