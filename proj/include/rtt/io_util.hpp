#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace rtt {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

// Append-only little-endian byte writer.
struct ByteWriter {
    std::vector<unsigned char> bytes;

    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }
    void u8(std::uint8_t v) { bytes.push_back(v); }
    void u16(std::uint16_t v) { raw(&v, 2); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f32(float v) { raw(&v, 4); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) { raw(s.data(), s.size()); }
};

// Bounds-checked reader; errors carry the byte offset of the failure.
struct ByteReader {
    const unsigned char* p = nullptr;
    std::size_t size = 0;
    std::size_t pos = 0;

    ByteReader(const void* data, std::size_t n)
        : p(static_cast<const unsigned char*>(data)), size(n) {}

    void need(std::size_t n, const char* what) const;
    std::uint8_t u8(const char* what);
    std::uint16_t u16(const char* what);
    std::uint32_t u32(const char* what);
    std::uint64_t u64(const char* what);
    float f32(const char* what);
    double f64(const char* what);
    std::string str(std::size_t n, const char* what);
    void expect_end(const char* what) const;
};

// Whole-file helpers; writes go through a temp file + rename so readers never
// observe partial output.
std::vector<unsigned char> read_file(const std::string& path);
void write_file_atomic(const std::string& path, const void* data, std::size_t n);
void write_file_atomic(const std::string& path, const std::string& text);
void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes);

// FNV-1a over arbitrary bytes, rendered as 16 hex chars; stable across
// platforms, used for config hashes.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace rtt
