#include "mffd/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

namespace mffd {

ImageU8::ImageU8(std::size_t w, std::size_t h, std::vector<std::uint8_t> bytes)
    : width(w), height(h), data(std::move(bytes)) {
    require(w > 0 && h > 0, ErrorCode::InvalidArgument, "image dimensions must be positive");
    require(data.size() == w * h * 3, ErrorCode::ShapeMismatch,
            "image buffer has " + std::to_string(data.size()) + " bytes, expected " + std::to_string(w * h * 3));
}

ImageU8::ImageU8(std::size_t w, std::size_t h, std::uint8_t fill) : width(w), height(h), data(w * h * 3, fill) {
    require(w > 0 && h > 0, ErrorCode::InvalidArgument, "image dimensions must be positive");
}

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> b) : bytes_(b) {}

    // Skips whitespace and '#' comments, then reads a decimal token.
    std::size_t number(const char* what) {
        skip_space_and_comments();
        std::size_t value = 0, digits = 0;
        while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
            value = value * 10 + (bytes_[pos_] - '0');
            require(value <= 1u << 24, ErrorCode::MalformedHeader, std::string(what) + " is implausibly large");
            ++pos_;
            ++digits;
        }
        require(digits > 0, ErrorCode::MalformedHeader, std::string("expected ") + what);
        return value;
    }

    // Exactly one whitespace byte separates maxval from the raster.
    void single_whitespace() {
        require(pos_ < bytes_.size() && is_space(bytes_[pos_]), ErrorCode::MalformedHeader,
                "expected whitespace after maxval");
        ++pos_;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    static bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (is_space(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

ImageU8 parse_ppm(std::span<const std::uint8_t> bytes) {
    require(bytes.size() >= 2, ErrorCode::MalformedHeader, "file too short for a PPM header");
    require(bytes[0] == 'P', ErrorCode::UnsupportedFormat, "not a Netpbm file");
    require(bytes[1] == '6', ErrorCode::UnsupportedFormat,
            std::string("only binary P6 is supported, got P") + static_cast<char>(bytes[1]));
    HeaderReader r(bytes);
    r.advance(2);
    const std::size_t w = r.number("width");
    const std::size_t h = r.number("height");
    const std::size_t maxval = r.number("maxval");
    require(w > 0 && h > 0, ErrorCode::MalformedHeader, "zero image dimension");
    require(maxval == 255, ErrorCode::UnsupportedFormat, "maxval must be 255, got " + std::to_string(maxval));
    r.single_whitespace();
    const std::size_t need = w * h * 3;
    const std::size_t have = bytes.size() - r.pos();
    require(have >= need, ErrorCode::Truncated,
            "payload has " + std::to_string(have) + " bytes, expected " + std::to_string(need));
    require(have == need, ErrorCode::MalformedHeader, "trailing bytes after PPM payload");
    return ImageU8(w, h, std::vector<std::uint8_t>(bytes.begin() + static_cast<std::ptrdiff_t>(r.pos()), bytes.end()));
}

std::vector<std::uint8_t> encode_ppm(const ImageU8& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.insert(out.end(), img.data.begin(), img.data.end());
    return out;
}

ImageU8 load_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse_ppm(bytes);
}

void save_ppm(const std::filesystem::path& path, const ImageU8& img) {
    const auto bytes = encode_ppm(img);
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(static_cast<bool>(out), ErrorCode::Io, "write failed for " + path.string());
}

Tensor to_tensor(const ImageU8& img) { return to_tensor_batch(std::span<const ImageU8>(&img, 1)); }

Tensor to_tensor_batch(std::span<const ImageU8> images) {
    require(!images.empty(), ErrorCode::InvalidArgument, "empty image batch");
    const std::size_t W = images[0].width, H = images[0].height, plane = W * H;
    std::vector<double> v(images.size() * 3 * plane);
    for (std::size_t n = 0; n < images.size(); ++n) {
        const auto& img = images[n];
        require(img.width == W && img.height == H, ErrorCode::ShapeMismatch, "images in a batch must share a size");
        for (std::size_t i = 0; i < plane; ++i)
            for (std::size_t c = 0; c < 3; ++c) v[(n * 3 + c) * plane + i] = img.data[i * 3 + c] / 255.0;
    }
    return Tensor({images.size(), 3, H, W}, std::move(v));
}

ImageU8 to_image(const Tensor& t) {
    require(t.dim() == 4 && t.shape()[0] == 1 && t.shape()[1] == 3, ErrorCode::ShapeMismatch,
            "to_image expects [1,3,H,W], got " + shape_str(t.shape()));
    const std::size_t H = t.shape()[2], W = t.shape()[3], plane = H * W;
    ImageU8 img(W, H);
    for (std::size_t i = 0; i < plane; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double v = std::clamp(t[c * plane + i], 0.0, 1.0);
            img.data[i * 3 + c] = static_cast<std::uint8_t>(std::round(v * 255.0));
        }
    return img;
}

ImageU8 center_crop_resize(const ImageU8& img, std::size_t side) {
    require(side > 0, ErrorCode::InvalidArgument, "target side must be positive");
    require(std::min(img.width, img.height) >= kMinImageSide, ErrorCode::InvalidArgument,
            "image " + std::to_string(img.width) + "x" + std::to_string(img.height) + " is smaller than 8 pixels");
    const std::size_t crop = std::min(img.width, img.height);
    const std::size_t x0 = (img.width - crop) / 2, y0 = (img.height - crop) / 2;
    ImageU8 out(side, side);
    for (std::size_t y = 0; y < side; ++y) {
        const std::size_t sy = y0 + y * crop / side;
        for (std::size_t x = 0; x < side; ++x) {
            const std::size_t sx = x0 + x * crop / side;
            for (std::size_t c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

std::string split_name(Split s) {
    switch (s) {
        case Split::Train: return "train";
        case Split::Val: return "val";
        case Split::Test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::Train;
    if (s == "val") return Split::Val;
    if (s == "test") return Split::Test;
    fail(ErrorCode::MalformedHeader, "unknown split '" + s + "'");
}

std::vector<ManifestEntry> DatasetManifest::select(Split split) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [split](const ManifestEntry& e) { return e.split == split; });
    return out;
}

std::filesystem::path DatasetManifest::resolve(const ManifestEntry& e) const {
    std::filesystem::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(static_cast<bool>(in), ErrorCode::Io, "cannot open manifest " + path.string());
    DatasetManifest m;
    m.base_dir = path.parent_path();
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorCode::MalformedHeader, "empty manifest");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    require(line == "path,label,split", ErrorCode::MalformedHeader, "manifest header must be 'path,label,split'");
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto c2 = line.rfind(',');
        const auto c1 = c2 == std::string::npos ? std::string::npos : line.rfind(',', c2 - 1);
        require(c1 != std::string::npos && c1 > 0, ErrorCode::MalformedHeader,
                "manifest line " + std::to_string(lineno) + " needs three fields");
        ManifestEntry e;
        e.path = line.substr(0, c1);
        const std::string label = line.substr(c1 + 1, c2 - c1 - 1);
        require(label == "0" || label == "1", ErrorCode::MalformedHeader,
                "manifest line " + std::to_string(lineno) + ": label must be 0 or 1");
        e.label = label == "1" ? 1 : 0;
        e.split = parse_split(line.substr(c2 + 1));
        m.entries.push_back(std::move(e));
    }
    return m;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    require(static_cast<bool>(out), ErrorCode::Io, "cannot write manifest " + path.string());
    out << "path,label,split\n";
    for (const auto& e : manifest.entries) out << e.path << ',' << e.label << ',' << split_name(e.split) << '\n';
}

void require_both_classes(const std::vector<ManifestEntry>& entries, Split split) {
    bool real = false, fake = false;
    for (const auto& e : entries) (e.label ? fake : real) = true;
    require(real && fake, ErrorCode::EmptySplit, "split '" + split_name(split) + "' needs both real and fake samples");
}

}  // namespace mffd
