#include "rtt/io_util.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <unistd.h>

#include "rtt/rng.hpp"

namespace rtt {

void ByteReader::need(std::size_t n, const char* what) const {
    if (pos + n > size)
        throw std::runtime_error(std::string("truncated file: reading ") + what + " at byte " +
                                 std::to_string(pos) + " needs " + std::to_string(n) +
                                 " bytes, file has " + std::to_string(size));
}

std::uint8_t ByteReader::u8(const char* what) {
    need(1, what);
    return p[pos++];
}
std::uint16_t ByteReader::u16(const char* what) {
    need(2, what);
    std::uint16_t v;
    std::memcpy(&v, p + pos, 2);
    pos += 2;
    return v;
}
std::uint32_t ByteReader::u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, p + pos, 4);
    pos += 4;
    return v;
}
std::uint64_t ByteReader::u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, p + pos, 8);
    pos += 8;
    return v;
}
float ByteReader::f32(const char* what) {
    need(4, what);
    float v;
    std::memcpy(&v, p + pos, 4);
    pos += 4;
    return v;
}
double ByteReader::f64(const char* what) {
    need(8, what);
    double v;
    std::memcpy(&v, p + pos, 8);
    pos += 8;
    return v;
}
std::string ByteReader::str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(p + pos), n);
    pos += n;
    return s;
}
void ByteReader::expect_end(const char* what) const {
    if (pos != size)
        throw std::runtime_error(std::string(what) + ": " + std::to_string(size - pos) +
                                 " unexpected trailing bytes at offset " + std::to_string(pos));
}

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::streamoff n = in.tellg();
    in.seekg(0);
    std::vector<unsigned char> bytes(static_cast<std::size_t>(n));
    if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw std::runtime_error("read failed for " + path);
    return bytes;
}

void write_file_atomic(const std::string& path, const void* data, std::size_t n) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    static std::atomic<std::uint64_t> counter{0};
    const fs::path tmp =
        target.parent_path() /
        (target.filename().string() + ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(counter.fetch_add(1)));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot create " + tmp.string());
        if (n > 0) out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

void write_file_atomic(const std::string& path, const std::string& text) {
    write_file_atomic(path, text.data(), text.size());
}

void write_file_atomic(const std::string& path, const std::vector<unsigned char>& bytes) {
    write_file_atomic(path, bytes.data(), bytes.size());
}

std::string fnv1a_hex(const std::string& bytes) {
    const std::uint64_t h = fnv1a64(bytes);
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[static_cast<std::size_t>(15 - i)] = hex[(h >> (4 * i)) & 0xf];
    return out;
}

}  // namespace rtt
