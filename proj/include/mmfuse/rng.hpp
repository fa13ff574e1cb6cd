#pragma once

// Deterministic randomness. All draws go through mt19937_64 (whose output
// sequence is fixed by the standard) and hand-rolled distributions, so the
// same seed produces the same stream on every platform. std:: distributions
// are avoided because their sequences are implementation-defined.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>
#include <vector>

#include "mmfuse/common.hpp"
#include "mmfuse/sha256.hpp"

namespace mmfuse {

class DeterministicRng {
public:
    explicit DeterministicRng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // Uniform integer in [0, bound) without modulo bias.
    uint64_t below(uint64_t bound) {
        if (bound == 0) throw Error("rng: bound must be positive");
        uint64_t threshold = (0 - bound) % bound; // 2^64 mod bound
        for (;;) {
            uint64_t r = next_u64();
            if (r >= threshold) return r % bound;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        // Fisher-Yates, descending
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Mixes a base seed with a string tag (and optional indices) into a fresh
// 64-bit seed. Used to give every independent stream (shuffle per epoch,
// per-record synthesis, weight init per tensor, ...) its own engine.
inline uint64_t derive_seed(uint64_t base, std::string_view tag,
                            uint64_t a = 0, uint64_t b = 0) {
    std::vector<uint8_t> material;
    material.reserve(24 + tag.size());
    put_u64_le(material, base);
    material.insert(material.end(), tag.begin(), tag.end());
    put_u64_le(material, a);
    put_u64_le(material, b);
    auto digest = sha256(material);
    uint64_t out = 0;
    for (int i = 0; i < 8; ++i) out |= static_cast<uint64_t>(digest[i]) << (8 * i);
    return out;
}

} // namespace mmfuse
