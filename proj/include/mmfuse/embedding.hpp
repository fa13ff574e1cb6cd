#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/labels.hpp"
#include "mmfuse/sha256.hpp"

namespace mmfuse {

// Fixed-length per-modality feature vector; the unit of fusion. Values are
// kept as float32 to match the on-disk payload bit for bit.
struct Embedding {
    Modality modality = Modality::text;
    std::string producer_id;
    std::vector<float> values;

    uint32_t dim() const { return static_cast<uint32_t>(values.size()); }

    bool all_finite() const {
        for (float v : values) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }
};

enum class EncoderKind { external_adapter, stub };

struct EncoderSpec {
    Modality modality = Modality::text;
    std::string producer_id; // encoder name + version, e.g. "stub-16"
    uint32_t dim = 0;
    EncoderKind kind = EncoderKind::stub;
};

// Uniquely identifies one embedding in the cache.
struct CacheKey {
    std::string utterance_id;
    Modality modality = Modality::text;
    std::string producer_id;

    bool operator==(const CacheKey&) const = default;
    auto operator<=>(const CacheKey&) const = default;
};

/// Deterministic pseudo-embedding derived from a byte string. Exact mapping:
//   block_j = SHA-256(seed_material || LE32(j))   for j = 0, 1, 2, ...
//   each block yields 8 words u = little-endian u32 at offsets 0,4,...,28
//   value   = float32((double(u) / 4294967295.0) * 2.0 - 1.0)
// Values are consumed block by block, word by word, until dim values exist.
// Every value lies in [-1, 1]; the mapping uses only IEEE-754 double ops so
// it is identical on every platform.
inline std::vector<float> stub_encode(const std::vector<uint8_t>& seed_material,
                                      uint32_t dim) {
    if (dim == 0) throw Error("stub_encode: dim must be positive");
    std::vector<float> out;
    out.reserve(dim);
    std::vector<uint8_t> input(seed_material);
    input.resize(seed_material.size() + 4);
    for (uint32_t j = 0; out.size() < dim; ++j) {
        input[seed_material.size() + 0] = static_cast<uint8_t>(j & 0xff);
        input[seed_material.size() + 1] = static_cast<uint8_t>((j >> 8) & 0xff);
        input[seed_material.size() + 2] = static_cast<uint8_t>((j >> 16) & 0xff);
        input[seed_material.size() + 3] = static_cast<uint8_t>((j >> 24) & 0xff);
        auto block = sha256(input.data(), input.size());
        for (int k = 0; k < 8 && out.size() < dim; ++k) {
            uint32_t u = read_u32_le(block.data() + 4 * k);
            double v = (static_cast<double>(u) / 4294967295.0) * 2.0 - 1.0;
            out.push_back(static_cast<float>(v));
        }
    }
    return out;
}

inline std::vector<float> stub_encode(std::string_view seed_material, uint32_t dim) {
    std::vector<uint8_t> bytes(seed_material.begin(), seed_material.end());
    return stub_encode(bytes, dim);
}

// Seed material for a record/modality pair: the modality name, a zero
// byte, then the modality's resource (the text itself for text, the
// audio/video reference for the others).
inline std::vector<uint8_t> stub_seed_material(Modality modality,
                                               std::string_view resource) {
    std::string_view name = to_string(modality);
    std::vector<uint8_t> seed(name.begin(), name.end());
    seed.push_back(0);
    seed.insert(seed.end(), resource.begin(), resource.end());
    return seed;
}

} // namespace mmfuse
