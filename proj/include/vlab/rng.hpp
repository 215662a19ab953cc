#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace vlab {

// SplitMix64 finalizer.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

// Counter-based stream keyed by (seed, name[, index]). Draw i depends only on
// (key, i), so the full state is two integers and any point of the stream can
// be restored from a checkpoint or re-derived from the key.
class RngStream {
public:
    RngStream() = default;

    RngStream(uint64_t seed, std::string_view name)
        : key_(mix64(mix64(seed) ^ fnv1a64(name))) {}

    RngStream(uint64_t seed, std::string_view name, uint64_t index)
        : key_(mix64(mix64(seed) ^ fnv1a64(name) ^ mix64(index ^ 0x5851f42d4c957f2dull))) {}

    uint64_t next_u64() { return mix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    // Standard normal via Box-Muller; consumes exactly two draws per call.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586477 * u2);
    }

    uint64_t key() const { return key_; }
    uint64_t counter() const { return counter_; }
    void restore(uint64_t key, uint64_t counter) {
        key_ = key;
        counter_ = counter;
    }

private:
    uint64_t key_ = 0;
    uint64_t counter_ = 0;
};

}  // namespace vlab
