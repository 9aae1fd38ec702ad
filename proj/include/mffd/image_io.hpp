#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mffd/tensor.hpp"

namespace mffd {

/// Decoded 8-bit RGB image, interleaved row-major.
struct ImageU8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> data;

    ImageU8() = default;
    ImageU8(std::size_t w, std::size_t h, std::vector<std::uint8_t> bytes);
    ImageU8(std::size_t w, std::size_t h, std::uint8_t fill = 0);

    std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * 3 + c]; }
    std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * 3 + c]; }

    bool operator==(const ImageU8&) const = default;
};

/// Smallest side accepted by the 8x8 block and wavelet stages.
inline constexpr std::size_t kMinImageSide = 8;

ImageU8 parse_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const ImageU8& img);
ImageU8 load_ppm(const std::filesystem::path& path);
void save_ppm(const std::filesystem::path& path, const ImageU8& img);

/// [1, 3, H, W] tensor with values pixel / 255.
Tensor to_tensor(const ImageU8& img);
/// Stacks same-size images into [N, 3, H, W].
Tensor to_tensor_batch(std::span<const ImageU8> images);
/// Inverse of to_tensor for a [1, 3, H, W] tensor: round(clamp(v, 0, 1) * 255).
ImageU8 to_image(const Tensor& t);

/// Centre crop to a square, then nearest-neighbour resize to side x side.
/// Source index for output i is floor(i * crop / side).
ImageU8 center_crop_resize(const ImageU8& img, std::size_t side);

enum class Split { Train, Val, Test };

std::string split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string path;  // as written in the manifest
    int label = 0;     // 0 real, 1 fake
    Split split = Split::Train;
};

/// Rows of a `path,label,split` CSV, in file order.
struct DatasetManifest {
    std::filesystem::path base_dir;  // relative paths resolve against this
    std::vector<ManifestEntry> entries;

    std::vector<ManifestEntry> select(Split split) const;
    std::filesystem::path resolve(const ManifestEntry& e) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Throws EmptySplit unless the split has both classes.
void require_both_classes(const std::vector<ManifestEntry>& entries, Split split);

}  // namespace mffd
