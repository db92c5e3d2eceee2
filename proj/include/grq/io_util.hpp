#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "errors.hpp"

namespace grq {
namespace io {

// --- little-endian scalar packing -------------------------------------------
// Serialized byte order is fixed LE regardless of host; all supported hosts
// are LE so these compile down to memcpy.

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(std::uint8_t(v));
    out.push_back(std::uint8_t(v >> 8));
    out.push_back(std::uint8_t(v >> 16));
    out.push_back(std::uint8_t(v >> 24));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
           std::uint32_t(p[3]) << 24;
}

inline void put_f32(std::vector<std::uint8_t>& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

inline float get_f32(const std::uint8_t* p) {
    std::uint32_t bits = get_u32(p);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

inline void put_f32_span(std::vector<std::uint8_t>& out, const float* v, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) put_f32(out, v[i]);
}

// --- CRC32 (IEEE 802.3, reflected) ------------------------------------------

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t n, std::uint32_t seed = 0) {
    const auto& t = crc32_table();
    std::uint32_t c = seed ^ 0xffffffffu;
    for (std::size_t i = 0; i < n; ++i) c = t[(c ^ data[i]) & 0xffu] ^ (c >> 8);
    return c ^ 0xffffffffu;
}

// --- whole-file helpers -------------------------------------------------------

inline std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error(format_error_kind::io, "cannot open " + path + " for reading");
    in.seekg(0, std::ios::end);
    auto len = in.tellg();
    if (len < 0) throw format_error(format_error_kind::io, "cannot stat " + path);
    std::vector<std::uint8_t> buf(static_cast<std::size_t>(len));
    in.seekg(0, std::ios::beg);
    if (len > 0) in.read(reinterpret_cast<char*>(buf.data()), len);
    if (!in) throw format_error(format_error_kind::io, "short read on " + path);
    return buf;
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error(format_error_kind::io, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw format_error(format_error_kind::io, "short write on " + path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error(format_error_kind::io, "cannot open " + path + " for writing");
    out << text;
    out.flush();
    if (!out) throw format_error(format_error_kind::io, "short write on " + path);
}

}  // namespace io
}  // namespace grq
