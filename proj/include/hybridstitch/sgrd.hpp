// SGRD grid dump: "SGRD", rows (u32 LE), cols (u32 LE), rows*cols f32 LE row-major.
#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hybridstitch/tensor.hpp"

namespace hybridstitch {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u32_le(std::vector<unsigned char>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::vector<unsigned char> encode_sgrd(const Grid2D& g) {
    if (g.rows() > UINT32_MAX || g.cols() > UINT32_MAX) throw FormatError("SGRD: grid too large");
    std::vector<unsigned char> out{'S', 'G', 'R', 'D'};
    out.reserve(12 + 4 * g.size());
    detail::put_u32_le(out, static_cast<std::uint32_t>(g.rows()));
    detail::put_u32_le(out, static_cast<std::uint32_t>(g.cols()));
    for (float v : g.values()) detail::put_u32_le(out, std::bit_cast<std::uint32_t>(v));
    return out;
}

inline Grid2D decode_sgrd(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "SGRD", 4) != 0) {
        throw FormatError("SGRD: missing magic or truncated header");
    }
    const std::uint32_t rows = detail::get_u32_le(bytes.data() + 4);
    const std::uint32_t cols = detail::get_u32_le(bytes.data() + 8);
    const std::size_t n = static_cast<std::size_t>(rows) * cols;
    if (bytes.size() != 12 + 4 * n) {
        throw FormatError("SGRD: expected " + std::to_string(12 + 4 * n) + " bytes, got " +
                          std::to_string(bytes.size()));
    }
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) {
        data[i] = std::bit_cast<float>(detail::get_u32_le(bytes.data() + 12 + 4 * i));
    }
    return Grid2D(rows, cols, std::move(data));
}

inline void write_sgrd(const std::string& path, const Grid2D& g) {
    const auto bytes = encode_sgrd(g);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("SGRD: cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("SGRD: write failed for " + path);
}

inline Grid2D read_sgrd(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("SGRD: cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_sgrd(bytes);
}

}  // namespace hybridstitch
