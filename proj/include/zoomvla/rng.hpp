#pragma once

// Deterministic, platform-independent random streams. All stochastic code in
// the project draws from these generators; std:: distributions are avoided
// because their output is implementation-defined.

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace zoomvla {

inline constexpr uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline constexpr uint64_t fnv1a64_u64(uint64_t v, uint64_t h = 1469598103934665603ull) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (i * 8)) & 0xffull;
        h *= 1099511628211ull;
    }
    return h;
}

/// splitmix64; passes through every 64-bit state exactly once.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform double in [0, 1).
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    /// Uniform integer in [0, n). n must be > 0. Rejection-free modulo is fine
    /// at our scale; bias is < 2^-40 for n < 2^24.
    uint64_t next_below(uint64_t n) {
        return next_u64() % n;
    }

    int next_int(int lo, int hi_exclusive) {
        return lo + static_cast<int>(next_below(static_cast<uint64_t>(hi_exclusive - lo)));
    }

    /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
    double next_normal() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 < 1e-300) {
            u1 = 1e-300;
        }
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() <= 1) {
            return;
        }
        for (size_t i = v.size() - 1; i > 0; --i) {
            size_t j = static_cast<size_t>(next_below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    uint64_t state_;
};

/// Derives an independent named substream: hash-mix the parent seed with a
/// purpose tag and indices. Used so that e.g. layout sampling and policy
/// sampling never share a stream.
inline Rng substream(uint64_t seed, std::string_view tag, uint64_t a = 0, uint64_t b = 0) {
    uint64_t h = fnv1a64(tag);
    h = fnv1a64_u64(seed, h);
    h = fnv1a64_u64(a, h);
    h = fnv1a64_u64(b, h);
    return Rng(h);
}

} // namespace zoomvla
