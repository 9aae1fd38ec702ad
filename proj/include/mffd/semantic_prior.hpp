#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mffd/image_io.hpp"
#include "mffd/tensor.hpp"

namespace mffd {

struct EmbeddingRecord {
    std::string id;
    std::vector<float> vector;

    bool operator==(const EmbeddingRecord&) const = default;
};

/// Contents of a FEMB file. Records keep file order; ids are unique.
class EmbeddingTable {
public:
    explicit EmbeddingTable(std::uint32_t dim = 768) : dim_(dim) {}

    std::uint32_t dim() const noexcept { return dim_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }
    const std::vector<EmbeddingRecord>& records() const noexcept { return records_; }

    /// Throws DuplicateId, DimMismatch or NonFinite.
    void add(EmbeddingRecord rec);
    const EmbeddingRecord* find(const std::string& id) const;
    /// Like find() but throws MissingEmbedding.
    const EmbeddingRecord& at(const std::string& id) const;

private:
    std::uint32_t dim_;
    std::vector<EmbeddingRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::uint32_t kFembVersion = 1;

std::vector<std::uint8_t> encode_embeddings(const EmbeddingTable& table);
/// When `expected_dim` is set, a header declaring another D is DimMismatch.
EmbeddingTable decode_embeddings(std::span<const std::uint8_t> bytes,
                                 std::optional<std::uint32_t> expected_dim = std::nullopt);

void write_embedding_file(const std::filesystem::path& path, const EmbeddingTable& table);
EmbeddingTable read_embedding_file(const std::filesystem::path& path,
                                   std::optional<std::uint32_t> expected_dim = std::nullopt);

/// Deterministic stand-in for a pretrained encoder: a hash of the pixels
/// seeds D Gaussian draws, normalised to unit length.
EmbeddingRecord stub_embed(const ImageU8& img, std::size_t dim, std::string id = {});

struct CrossAttentionParams {
    Tensor w_q;  // [D, d_k]
    Tensor w_k;  // [C, d_k]
    Tensor w_v;  // [C, d_v]
    std::size_t heads = 1;

    std::size_t d_k() const { return w_q.shape()[1]; }
    std::size_t d_v() const { return w_v.shape()[1]; }
};

/// He-uniform projections, marked as trainable.
CrossAttentionParams init_cross_attention(std::size_t embed_dim, std::size_t channels, std::size_t d_k,
                                          std::size_t d_v, std::size_t heads, Rng& rng);

struct AttentionOutput {
    Tensor value;    // [N, d_v]
    Tensor weights;  // [N, heads, L]
};

/// One global query per item attending over L positions.
///
/// phi: [N, D]; local: [N, L, C]. Each head h uses its slice of the d_k
/// (and d_v) columns and scores with 1/sqrt(d_k / heads); head outputs are
/// concatenated in head order.
AttentionOutput cross_attention(const Tensor& phi, const Tensor& local, const CrossAttentionParams& params);

/// Attends from phi over the positions of an [N, C, H, W] map, broadcasts
/// the d_v result over H x W and appends it after the C local channels.
Tensor fuse(const Tensor& phi, const Tensor& local_map, const CrossAttentionParams& params);

}  // namespace mffd
