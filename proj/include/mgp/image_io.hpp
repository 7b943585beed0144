#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/objective.hpp"
#include "mgp/rng.hpp"
#include "mgp/tensor.hpp"
#include "mgp/tensor_file.hpp"

namespace mgp {

/// 8-bit image in file order: row-major, RGB interleaved for 3 channels.
struct ImageFile {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;
};

namespace detail {

inline int pnm_token(const unsigned char* data, std::size_t size, std::size_t& pos,
                     const std::string& origin) {
    // Whitespace and '#' comments separate header fields.
    while (pos < size) {
        const unsigned char c = data[pos];
        if (c == '#') {
            while (pos < size && data[pos] != '\n') ++pos;
        } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++pos;
        } else {
            break;
        }
    }
    if (pos >= size) throw ParseError(origin + ": truncated header");
    if (data[pos] < '0' || data[pos] > '9')
        throw ParseError(origin + ": expected a number in the header, got byte " +
                         std::to_string(static_cast<int>(data[pos])));
    long value = 0;
    while (pos < size && data[pos] >= '0' && data[pos] <= '9') {
        value = value * 10 + (data[pos] - '0');
        if (value > 1000000) throw ParseError(origin + ": header number out of range");
        ++pos;
    }
    return static_cast<int>(value);
}

}  // namespace detail

/// Binary PPM (P6) or PGM (P5), maxval 255 only.
inline ImageFile read_ppm(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    const std::string origin = path.string();
    if (bytes.size() < 2) throw ParseError(origin + ": truncated header");
    if (bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw ParseError(origin + ": bad magic, expected binary P5 or P6");
    ImageFile img;
    img.channels = bytes[1] == '6' ? 3 : 1;
    std::size_t pos = 2;
    img.width = static_cast<std::size_t>(detail::pnm_token(bytes.data(), bytes.size(), pos, origin));
    img.height =
        static_cast<std::size_t>(detail::pnm_token(bytes.data(), bytes.size(), pos, origin));
    const int maxval = detail::pnm_token(bytes.data(), bytes.size(), pos, origin);
    if (maxval != 255)
        throw ParseError(origin + ": maxval " + std::to_string(maxval) + " unsupported, need 255");
    if (pos >= bytes.size()) throw ParseError(origin + ": truncated after header");
    const unsigned char sep = bytes[pos];
    if (sep != ' ' && sep != '\t' && sep != '\r' && sep != '\n')
        throw ParseError(origin + ": missing whitespace before pixel data");
    ++pos;
    if (img.width == 0 || img.height == 0) throw ParseError(origin + ": zero image extent");
    const std::size_t expected = img.width * img.height * img.channels;
    if (bytes.size() - pos < expected)
        throw ParseError(origin + ": truncated pixel data, expected " + std::to_string(expected) +
                         " bytes, found " + std::to_string(bytes.size() - pos));
    if (bytes.size() - pos > expected)
        throw ParseError(origin + ": " + std::to_string(bytes.size() - pos - expected) +
                         " trailing bytes after pixel data");
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
    return img;
}

inline void write_ppm(const ImageFile& img, const std::filesystem::path& path) {
    if (img.channels != 1 && img.channels != 3)
        throw ContractError("write_ppm: image must have 1 or 3 channels, got " +
                            std::to_string(img.channels));
    if (img.pixels.size() != img.width * img.height * img.channels)
        throw ContractError("write_ppm: pixel count does not match extents");
    std::string out;
    out += img.channels == 3 ? "P6\n" : "P5\n";
    out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    detail::write_file_bytes(path, out);
}

/// u8 value v maps to 2v/255 - 1, the generator's tanh range.
inline Tensor to_tensor(const ImageFile& img) {
    const std::size_t C = img.channels, H = img.height, W = img.width;
    Tensor t = Tensor::zeros({1, C, H, W});
    double* tv = t.values_mut().data();
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c)
                tv[(c * H + h) * W + w] =
                    2.0 * static_cast<double>(img.pixels[(h * W + w) * C + c]) / 255.0 - 1.0;
    return t;
}

/// Values are clamped to [-1,1] and quantized to the 256 u8 levels.
inline ImageFile from_tensor(const Tensor& t) {
    if (t.rank() != 4 || t.extent(0) != 1 || (t.extent(1) != 1 && t.extent(1) != 3))
        throw ShapeError("from_tensor: tensor " + detail::shape_str(t.shape()) +
                         " must be [1,1,H,W] or [1,3,H,W]");
    ImageFile img;
    img.channels = t.extent(1);
    img.height = t.extent(2);
    img.width = t.extent(3);
    img.pixels.resize(img.width * img.height * img.channels);
    const double* tv = t.values().data();
    const std::size_t C = img.channels, H = img.height, W = img.width;
    for (std::size_t h = 0; h < H; ++h)
        for (std::size_t w = 0; w < W; ++w)
            for (std::size_t c = 0; c < C; ++c) {
                const double x = std::min(1.0, std::max(-1.0, tv[(c * H + h) * W + w]));
                img.pixels[(h * W + w) * C + c] =
                    static_cast<std::uint8_t>(std::lround(255.0 * (x + 1.0) / 2.0));
            }
    return img;
}

// ---------------------------------------------------------------------------
// Degradations: turn an intact image tensor into the reference (and mask)
// a restoration task consumes.

struct Degraded {
    Tensor reference;
    std::optional<Tensor> mask;  // 1 = known pixel, 0 = missing
};

inline Degraded degrade_grayscale(const Tensor& img) {
    NoGradGuard no_grad;
    return {gray(img), std::nullopt};
}

inline Degraded degrade_downsample(const Tensor& img, std::size_t factor) {
    NoGradGuard no_grad;
    return {down(img, factor), std::nullopt};
}

namespace detail {

inline Degraded apply_mask(const Tensor& img, Tensor mask) {
    NoGradGuard no_grad;
    Tensor ref = elementwise_mul(img, replicate_channels(mask, img.extent(1)));
    return {std::move(ref), std::move(mask)};
}

}  // namespace detail

/// Hides a centered box x box region (mask 0 inside the box).
inline Degraded degrade_center_crop(const Tensor& img, std::size_t box) {
    const std::size_t H = img.extent(2), W = img.extent(3);
    if (box > H || box > W)
        throw ContractError("center_crop: box " + std::to_string(box) + " exceeds image " +
                            detail::shape_str(img.shape()));
    Tensor mask = Tensor::full({1, 1, H, W}, 1.0);
    const std::size_t h0 = (H - box) / 2, w0 = (W - box) / 2;
    for (std::size_t h = h0; h < h0 + box; ++h)
        for (std::size_t w = w0; w < w0 + box; ++w) mask.at({0, 0, h, w}) = 0.0;
    return detail::apply_mask(img, std::move(mask));
}

/// Drops exactly round(p * H * W) pixels chosen by a seeded shuffle.
inline Degraded degrade_random_crop(const Tensor& img, double p, std::uint64_t seed) {
    if (p < 0.0 || p > 1.0) throw ContractError("random_crop: fraction must lie in [0,1]");
    const std::size_t H = img.extent(2), W = img.extent(3);
    const std::size_t total = H * W;
    const std::size_t dropped =
        static_cast<std::size_t>(std::lround(p * static_cast<double>(total)));
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = total - 1; i > 0; --i)
        std::swap(order[i], order[rng.below(i + 1)]);
    Tensor mask = Tensor::full({1, 1, H, W}, 1.0);
    for (std::size_t i = 0; i < dropped; ++i) mask.values_mut()[order[i]] = 0.0;
    return detail::apply_mask(img, std::move(mask));
}

inline Degraded degrade_gaussian_noise(const Tensor& img, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ContractError("gaussian_noise: sigma must be non-negative");
    Tensor ref = img.clone();
    Rng rng(seed);
    for (double& v : ref.values_mut()) v += sigma * rng.normal();
    return {std::move(ref), std::nullopt};
}

}  // namespace mgp
