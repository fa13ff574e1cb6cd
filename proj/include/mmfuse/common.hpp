#pragma once

#include <cstdint>
#include <cstring>
#include <array>
#include <bit>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmfuse {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Raised when a record lacks the resource an encoder needs (e.g. voice
// encoder on a record with no audio_ref). Callers usually treat this as
// "skip", not "abort".
class MissingResourceError : public Error {
public:
    using Error::Error;
};

// An external adapter has not deposited the requested embedding.
class AdapterUnavailableError : public Error {
public:
    using Error::Error;
};

// Always fatal: a produced or stored vector does not match the configured
// dimension.
class DimensionMismatchError : public Error {
public:
    using Error::Error;
};

// Cache or checkpoint file failed a structural or checksum check.
class FormatError : public Error {
public:
    using Error::Error;
};

class TrainError : public Error {
public:
    using Error::Error;
};

// Encoding failed for more records than the configured tolerance allows.
class EncodeThresholdError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// ---- little-endian byte helpers -------------------------------------------
// All on-disk formats are little-endian regardless of host order.

inline void put_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

inline void put_u64_le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
    }
}

inline uint32_t read_u32_le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::vector<uint8_t>& out, float v) {
    put_u32_le(out, std::bit_cast<uint32_t>(v));
}

inline float read_f32_le(const uint8_t* p) {
    return std::bit_cast<float>(read_u32_le(p));
}

} // namespace mmfuse
