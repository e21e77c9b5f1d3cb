#pragma once

#include <cstdint>
#include <cstring>
#include <cmath>
#include <string_view>
#include <vector>

namespace rtt {

// splitmix64: used for seeding and stream derivation.
inline std::uint64_t splitmix64_next(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256** (Blackman & Vigna). Fixed algorithm, identical sequences on
// every platform for a given seed; this is what dataset provenance refers to.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {
        std::uint64_t sm = seed;
        for (auto& s : s_) s = splitmix64_next(sm);
        has_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // uniform in [0,1), 53 random bits
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform01(); }

    // unbiased integer in [0, n), n >= 1
    std::uint64_t uniform_int(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t rem = (std::uint64_t(0) - n) % n;  // 2^64 mod n
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x < rem);
        return x % n;
    }

    // standard normal via Box-Muller (pairs cached)
    double normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = 1.0 - uniform01();  // (0,1], keeps log finite
        double u2 = uniform01();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_normal_ = r * std::sin(a);
        has_cached_normal_ = true;
        return r * std::cos(a);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_int(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent, reproducible stream from (seed, tag, a, b).
    // Streams with distinct tags never share draws, so e.g. the per-epoch
    // shuffle stream is unaffected by how much randomness other components
    // consume.
    Rng derive(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) const {
        std::uint64_t sm = seed_ ^ fnv1a64(tag);
        std::uint64_t h = splitmix64_next(sm);
        sm ^= a * 0x9e3779b97f4a7c15ULL;
        h ^= splitmix64_next(sm);
        sm ^= b * 0xff51afd7ed558ccdULL;
        h ^= splitmix64_next(sm);
        return Rng(h);
    }

    static const char* algorithm_name() { return "xoshiro256**"; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::uint64_t s_[4];
    std::uint64_t seed_;
    double cached_normal_;
    bool has_cached_normal_;
};

}  // namespace rtt
