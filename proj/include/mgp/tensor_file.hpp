#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mgp/error.hpp"
#include "mgp/tensor.hpp"

namespace mgp {

// MTD1 tensor file: magic "MTD1", u32 little-endian rank, rank u32
// little-endian extents, then product(extents) f64 little-endian values.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_f64(std::string& out, double v) {
    const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

class ByteReader {
public:
    ByteReader(const unsigned char* data, std::size_t size, std::string origin)
        : data_(data), size_(size), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4, "u32");
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }

    double f64() {
        need(8, "f64");
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return std::bit_cast<double>(bits);
    }

    std::uint8_t u8() {
        need(1, "u8");
        return data_[pos_++];
    }

    void magic(const char* expect) {
        need(4, "magic");
        if (std::string(reinterpret_cast<const char*>(data_ + pos_), 4) != expect)
            throw ParseError(origin_ + ": bad magic, expected \"" + expect + "\"");
        pos_ += 4;
    }

    bool at_end() const { return pos_ == size_; }
    std::size_t remaining() const { return size_ - pos_; }
    const std::string& origin() const { return origin_; }

private:
    void need(std::size_t n, const char* what) {
        if (pos_ + n > size_)
            throw ParseError(origin_ + ": truncated file, needed " + std::to_string(n) +
                             " bytes for " + what + " at offset " + std::to_string(pos_));
    }

    const unsigned char* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    std::string origin_;
};

inline std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string() + ": cannot open file");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ParseError(path.string() + ": cannot open file for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ParseError(path.string() + ": write failed");
}

inline void encode_mtd(std::string& out, const Tensor& t) {
    out += "MTD1";
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
    for (double v : t.values()) put_f64(out, v);
}

inline Tensor decode_mtd(ByteReader& r) {
    r.magic("MTD1");
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8)
        throw ParseError(r.origin() + ": unreasonable tensor rank " + std::to_string(rank));
    Shape shape(rank);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
        shape[d] = r.u32();
        if (shape[d] == 0) throw ParseError(r.origin() + ": zero extent in tensor shape");
        n *= shape[d];
        if (n > (std::size_t{1} << 31))
            throw ParseError(r.origin() + ": tensor element count overflows sanity bound");
    }
    std::vector<double> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = r.f64();
    return Tensor::from_values(std::move(shape), std::move(values));
}

}  // namespace detail

inline void write_mtd(const Tensor& t, const std::filesystem::path& path) {
    std::string bytes;
    detail::encode_mtd(bytes, t);
    detail::write_file_bytes(path, bytes);
}

inline Tensor read_mtd(const std::filesystem::path& path) {
    const auto bytes = detail::read_file_bytes(path);
    detail::ByteReader r(bytes.data(), bytes.size(), path.string());
    Tensor t = detail::decode_mtd(r);
    if (!r.at_end())
        throw ParseError(path.string() + ": " + std::to_string(r.remaining()) +
                         " trailing bytes after tensor payload");
    return t;
}

}  // namespace mgp
