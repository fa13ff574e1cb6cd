#pragma once

// Checkpoint container shared by every trained model:
//   bytes 0-3  magic "CKP1"
//   bytes 4-7  JSON header length, little-endian u32
//   header     JSON: config echo plus a "params" manifest of {name, rows,
//              cols} in tensor order
//   bytes +0-3 CRC-32 of the tensor payload, little-endian u32
//   payload    each tensor row-major as little-endian float32
// Saving a loaded checkpoint reproduces the file byte for byte.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/cache.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct Checkpoint {
    nlohmann::json header; // everything except the tensors
    ParamStore params;
};

inline void save_checkpoint(const std::filesystem::path& path,
                            const nlohmann::json& config_echo,
                            const ParamStore& params) {
    nlohmann::json header = config_echo;
    header["format_version"] = 1;
    nlohmann::json manifest = nlohmann::json::array();
    std::vector<uint8_t> payload;
    for (const auto& p : params) {
        manifest.push_back({{"name", p.name},
                            {"rows", p.value.rows()},
                            {"cols", p.value.cols()}});
        for (Eigen::Index i = 0; i < p.value.rows(); ++i) {
            for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
                put_f32_le(payload, static_cast<float>(p.value(i, j)));
            }
        }
    }
    header["params"] = manifest;

    std::string header_text = header.dump();
    std::vector<uint8_t> bytes;
    bytes.insert(bytes.end(), {'C', 'K', 'P', '1'});
    put_u32_le(bytes, static_cast<uint32_t>(header_text.size()));
    bytes.insert(bytes.end(), header_text.begin(), header_text.end());
    put_u32_le(bytes, detail::crc32_of(payload.data(), payload.size()));
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    detail::write_all_bytes_atomic(path, bytes);
}

// Copies a model's tensors (anything with for_each_param) into one store,
// e.g. to checkpoint an encoder and its head together.
template <typename Model>
ParamStore flatten_params(Model& model) {
    ParamStore out;
    model.for_each_param([&](Param& p) {
        out.add(p.name, p.value.rows(), p.value.cols()).value = p.value;
    });
    return out;
}

// Restores tensors by name into a freshly constructed model; shapes must
// match the construction-time ones.
template <typename Model>
void restore_params(const ParamStore& src, Model& model) {
    model.for_each_param([&](Param& p) {
        const Param& s = src.at(p.name);
        if (s.value.rows() != p.value.rows() || s.value.cols() != p.value.cols()) {
            throw FormatError("checkpoint tensor \"" + p.name + "\" has shape " +
                              std::to_string(s.value.rows()) + "x" +
                              std::to_string(s.value.cols()) + ", expected " +
                              std::to_string(p.value.rows()) + "x" +
                              std::to_string(p.value.cols()));
        }
        p.value = s.value;
    });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    auto bytes = detail::read_all_bytes(path);
    const std::string origin = path.string();
    if (bytes.size() < 8 || std::memcmp(bytes.data(), "CKP1", 4) != 0) {
        throw FormatError("bad checkpoint header: " + origin);
    }
    uint32_t header_len = read_u32_le(bytes.data() + 4);
    if (bytes.size() < 8 + size_t{header_len} + 4) {
        throw FormatError("truncated checkpoint: " + origin);
    }
    auto header = nlohmann::json::parse(
        bytes.begin() + 8, bytes.begin() + 8 + header_len, nullptr, false);
    if (header.is_discarded() || !header.contains("params")) {
        throw FormatError("unreadable checkpoint header: " + origin);
    }
    size_t pos = 8 + header_len;
    uint32_t checksum = read_u32_le(bytes.data() + pos);
    pos += 4;
    size_t payload_len = bytes.size() - pos;
    if (detail::crc32_of(bytes.data() + pos, payload_len) != checksum) {
        throw FormatError("checkpoint checksum mismatch: " + origin);
    }

    Checkpoint out;
    out.header = header;
    size_t expect = 0;
    for (const auto& entry : header["params"]) {
        expect += 4 * entry["rows"].get<size_t>() * entry["cols"].get<size_t>();
    }
    if (payload_len != expect) {
        throw FormatError("checkpoint payload size mismatch: " + origin);
    }
    for (const auto& entry : header["params"]) {
        auto rows = entry["rows"].get<Eigen::Index>();
        auto cols = entry["cols"].get<Eigen::Index>();
        Param& p = out.params.add(entry["name"].get<std::string>(), rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) {
                p.value(i, j) = static_cast<double>(read_f32_le(bytes.data() + pos));
                pos += 4;
            }
        }
    }
    return out;
}

} // namespace mmfuse
