#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

namespace ragprobe {

// Deterministic splitmix64 stream. Every random draw in the toolkit comes from
// a stream whose seed is derived from indices (global seed, substream id,
// instance id, sample index), never from execution order, so results are
// identical under any parallel schedule.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53 random bits.
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller; spare value cached.
    double next_gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 0.0) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, n).
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

private:
    uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Order-sensitive seed mixer for deriving named substreams.
inline uint64_t mix_seed(std::initializer_list<uint64_t> parts) {
    uint64_t h = 0x6a09e667f3bcc909ULL;
    for (uint64_t p : parts) {
        h ^= p + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        Rng scramble(h);
        h = scramble.next_u64();
    }
    return h;
}

// FNV-1a over bytes; used to derive per-record seeds from record content.
inline uint64_t hash_bytes(const void* ptr, size_t n, uint64_t seed = 0xcbf29ce484222325ULL) {
    const unsigned char* p = static_cast<const unsigned char*>(ptr);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

// n zero-mean gaussian draws with the given sigma, fully determined by seed.
// Shared with the test oracles: the noise is input data, not a checked path.
inline std::vector<float> gaussian_vector(uint64_t seed, size_t n, float sigma) {
    Rng rng(seed);
    std::vector<float> out(n);
    for (size_t i = 0; i < n; ++i) {
        out[i] = static_cast<float>(rng.next_gaussian() * static_cast<double>(sigma));
    }
    return out;
}

} // namespace ragprobe
