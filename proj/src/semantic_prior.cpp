#include "mffd/semantic_prior.hpp"

#include <cmath>
#include <fstream>
#include <iterator>

#include "byte_io.hpp"
#include "mffd/ops.hpp"

namespace mffd {

namespace detail {

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + path);
}

}  // namespace detail

void EmbeddingTable::add(EmbeddingRecord rec) {
    require(rec.vector.size() == dim_, ErrorCode::DimMismatch,
            "embedding '" + rec.id + "' has " + std::to_string(rec.vector.size()) + " values, table D is " +
                std::to_string(dim_));
    for (float v : rec.vector)
        require(std::isfinite(v), ErrorCode::NonFinite, "embedding '" + rec.id + "' has a non-finite value");
    require(!index_.contains(rec.id), ErrorCode::DuplicateId, "duplicate embedding id '" + rec.id + "'");
    index_.emplace(rec.id, records_.size());
    records_.push_back(std::move(rec));
}

const EmbeddingRecord* EmbeddingTable::find(const std::string& id) const {
    const auto it = index_.find(id);
    return it == index_.end() ? nullptr : &records_[it->second];
}

const EmbeddingRecord& EmbeddingTable::at(const std::string& id) const {
    const auto* rec = find(id);
    require(rec != nullptr, ErrorCode::MissingEmbedding, "no embedding for '" + id + "'");
    return *rec;
}

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table) {
    detail::ByteWriter w;
    w.raw("FEMB");
    w.u32(kFembVersion);
    w.u32(table.dim());
    w.u64(table.size());
    for (const auto& rec : table.records()) {
        w.u32(static_cast<std::uint32_t>(rec.id.size()));
        w.raw(rec.id);
        for (float v : rec.vector) w.f32(v);
    }
    return w.take();
}

EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes, std::optional<std::uint32_t> expected_dim) {
    detail::ByteReader r(bytes);
    require(r.remaining() >= 4 && r.raw(4) == "FEMB", ErrorCode::BadMagic, "not a FEMB embedding file");
    const std::uint32_t version = r.u32();
    require(version == kFembVersion, ErrorCode::BadVersion, "unsupported FEMB version " + std::to_string(version));
    const std::uint32_t dim = r.u32();
    if (expected_dim)
        require(dim == *expected_dim, ErrorCode::DimMismatch,
                "FEMB file has D=" + std::to_string(dim) + ", expected " + std::to_string(*expected_dim));
    const std::uint64_t count = r.u64();
    EmbeddingTable table(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord rec;
        const std::uint32_t len = r.u32();
        rec.id = r.raw(len);
        rec.vector.resize(dim);
        for (auto& v : rec.vector) v = r.f32();
        table.add(std::move(rec));
    }
    require(r.done(), ErrorCode::MalformedHeader, "trailing bytes after last FEMB record");
    return table;
}

void write_embedding_file(const std::filesystem::path& path, const EmbeddingTable& table) {
    detail::write_file_bytes(path.string(), encode_embeddings(table));
}

EmbeddingTable read_embedding_file(const std::filesystem::path& path, std::optional<std::uint32_t> expected_dim) {
    return decode_embeddings(detail::read_file_bytes(path.string()), expected_dim);
}

EmbeddingRecord stub_embed(const ImageU8& img, std::size_t dim, std::string id) {
    require(dim > 0, ErrorCode::InvalidArgument, "embedding dimension must be positive");
    std::uint64_t h = fnv1a64(img.data.data(), img.data.size());
    h = mix64(h ^ mix64(img.width) ^ (mix64(img.height) << 1));
    Rng rng(h);
    std::vector<double> v(dim);
    double norm = 0.0;
    for (auto& x : v) {
        x = rng.normal();
        norm += x * x;
    }
    norm = std::sqrt(norm);
    EmbeddingRecord rec{std::move(id), std::vector<float>(dim)};
    for (std::size_t i = 0; i < dim; ++i) rec.vector[i] = static_cast<float>(v[i] / norm);
    return rec;
}

CrossAttentionParams init_cross_attention(std::size_t embed_dim, std::size_t channels, std::size_t d_k,
                                          std::size_t d_v, std::size_t heads, Rng& rng) {
    require(heads > 0 && d_k % heads == 0 && d_v % heads == 0, ErrorCode::InvalidConfig,
            "d_k and d_v must split evenly across heads");
    auto he = [&rng](std::size_t fan_in, std::size_t fan_out, const char* name) {
        Rng sub = rng.substream(name);
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        return Tensor::uniform({fan_in, fan_out}, sub, -bound, bound).set_requires_grad(true);
    };
    CrossAttentionParams p;
    p.w_q = he(embed_dim, d_k, "w_q");
    p.w_k = he(channels, d_k, "w_k");
    p.w_v = he(channels, d_v, "w_v");
    p.heads = heads;
    return p;
}

AttentionOutput cross_attention(const Tensor& phi, const Tensor& local, const CrossAttentionParams& params) {
    require(phi.dim() == 2 && local.dim() == 3 && phi.shape()[0] == local.shape()[0], ErrorCode::ShapeMismatch,
            "cross_attention expects phi [N,D] and local [N,L,C], got " + shape_str(phi.shape()) + " and " +
                shape_str(local.shape()));
    const std::size_t N = phi.shape()[0], L = local.shape()[1], C = local.shape()[2];
    require(params.w_q.shape()[0] == phi.shape()[1], ErrorCode::DimMismatch,
            "W_Q expects D=" + std::to_string(params.w_q.shape()[0]) + ", phi has " + std::to_string(phi.shape()[1]));
    require(params.w_k.shape()[0] == C && params.w_v.shape()[0] == C, ErrorCode::ShapeMismatch,
            "W_K/W_V expect " + std::to_string(params.w_k.shape()[0]) + " channels, local map has " +
                std::to_string(C));
    require(params.w_k.shape()[1] == params.d_k(), ErrorCode::ShapeMismatch, "W_Q and W_K disagree on d_k");
    const std::size_t h = params.heads, dk = params.d_k() / h, dv = params.d_v() / h;
    require(h > 0 && dk * h == params.d_k() && dv * h == params.d_v(), ErrorCode::InvalidConfig,
            "d_k and d_v must split evenly across heads");

    // [N, D] x [D, d_k] -> [N*h, 1, dk]
    Tensor q = ops::reshape(ops::matmul(phi, params.w_q), {N * h, 1, dk});
    // [N, L, C] x [C, d_k] -> [N, L, h, dk] -> [N, h, dk, L]
    Tensor k = ops::reshape(ops::matmul(local, params.w_k), {N, L, h, dk});
    k = ops::reshape(ops::permute(k, {0, 2, 3, 1}), {N * h, dk, L});
    Tensor v = ops::reshape(ops::matmul(local, params.w_v), {N, L, h, dv});
    v = ops::reshape(ops::permute(v, {0, 2, 1, 3}), {N * h, L, dv});

    Tensor scores = ops::scale(ops::matmul(q, k), 1.0 / std::sqrt(static_cast<double>(dk)));
    Tensor attn = ops::softmax(scores, 2);  // [N*h, 1, L]
    Tensor out = ops::matmul(attn, v);     // [N*h, 1, dv]
    return {ops::reshape(out, {N, h * dv}), ops::reshape(attn, {N, h, L})};
}

Tensor fuse(const Tensor& phi, const Tensor& local_map, const CrossAttentionParams& params) {
    require(local_map.dim() == 4, ErrorCode::ShapeMismatch, "fuse expects [N,C,H,W], got " + shape_str(local_map.shape()));
    const std::size_t N = local_map.shape()[0], C = local_map.shape()[1], H = local_map.shape()[2],
                      W = local_map.shape()[3];
    Tensor positions = ops::permute(ops::reshape(local_map, {N, C, H * W}), {0, 2, 1});
    Tensor attended = cross_attention(phi, positions, params).value;
    const std::size_t dv = attended.shape()[1];
    Tensor spread = ops::broadcast_to(ops::reshape(attended, {N, dv, 1, 1}), {N, dv, H, W});
    return ops::concat({local_map, spread}, 1);
}

}  // namespace mffd
