#pragma once

// Persistent embedding cache and the binary container formats it speaks.
//
// Single-vector file (".emb"), 16-byte header + payload:
//   bytes 0-3   magic "EMB1"
//   byte  4     modality code (text=0, voice=1, face=2, video=3)
//   bytes 5-7   reserved, zero
//   bytes 8-11  dim, little-endian u32
//   bytes 12-15 CRC-32 (zlib polynomial) of the payload, little-endian u32
//   payload     dim little-endian float32 values
//
// Sequence file (".seq"), same idea extended with a frame count:
//   bytes 0-3   magic "EMS1"
//   byte  4     modality code
//   bytes 5-7   reserved, zero
//   bytes 8-11  dim, little-endian u32
//   bytes 12-15 frame_count, little-endian u32
//   bytes 16-19 CRC-32 of the payload, little-endian u32
//   payload     frame_count * dim float32 values, frame by frame
//
// Layout on disk: one directory per producer_id, one file per
// (utterance_id, modality), plus an index.jsonl listing the keys. Any
// external program that writes these files is a valid encoder.

#include <Eigen/Dense>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "mmfuse/embedding.hpp"

namespace mmfuse {

namespace detail {

inline uint32_t crc32_of(const uint8_t* data, size_t len) {
    return static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(len)));
}

// Filenames keep [A-Za-z0-9._-] and percent-encode everything else, so
// arbitrary utterance ids cannot escape the cache directory.
inline std::string sanitize_for_filename(std::string_view s) {
    static const char* hex = "0123456789ABCDEF";
    std::string out;
    out.reserve(s.size());
    for (unsigned char c : s) {
        bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                    (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
        if (safe) {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('%');
            out.push_back(hex[c >> 4]);
            out.push_back(hex[c & 0xf]);
        }
    }
    return out;
}

inline std::vector<uint8_t> read_all_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    return bytes;
}

inline void write_all_bytes_atomic(const std::filesystem::path& path,
                                   const std::vector<uint8_t>& bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(bytes.data()),
                  static_cast<std::streamsize>(bytes.size()));
        if (!out) throw Error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

} // namespace detail

inline std::vector<uint8_t> encode_embedding_file(const Embedding& e) {
    std::vector<uint8_t> payload;
    payload.reserve(4 * e.values.size());
    for (float v : e.values) put_f32_le(payload, v);
    std::vector<uint8_t> bytes;
    bytes.reserve(16 + payload.size());
    bytes.insert(bytes.end(), {'E', 'M', 'B', '1'});
    bytes.push_back(static_cast<uint8_t>(e.modality));
    bytes.insert(bytes.end(), {0, 0, 0});
    put_u32_le(bytes, e.dim());
    put_u32_le(bytes, detail::crc32_of(payload.data(), payload.size()));
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    return bytes;
}

inline Embedding decode_embedding_file(const std::vector<uint8_t>& bytes,
                                       const std::string& origin) {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), "EMB1", 4) != 0) {
        throw FormatError("bad embedding file header: " + origin);
    }
    uint8_t code = bytes[4];
    if (code > 3) throw FormatError("bad modality code in " + origin);
    uint32_t dim = read_u32_le(bytes.data() + 8);
    uint32_t checksum = read_u32_le(bytes.data() + 12);
    if (bytes.size() != 16 + size_t{4} * dim) {
        throw FormatError("embedding file size mismatch: " + origin);
    }
    if (detail::crc32_of(bytes.data() + 16, size_t{4} * dim) != checksum) {
        throw FormatError("embedding file checksum mismatch: " + origin);
    }
    Embedding e;
    e.modality = static_cast<Modality>(code);
    e.values.resize(dim);
    for (uint32_t i = 0; i < dim; ++i) {
        e.values[i] = read_f32_le(bytes.data() + 16 + 4 * i);
    }
    return e;
}

// Sequence container: rows are frames. Used for face tracks and frame
// feature exchange with external adapters.
inline void write_sequence_file(const std::filesystem::path& path,
                                Modality modality,
                                const Eigen::MatrixXf& frames) {
    std::vector<uint8_t> payload;
    payload.reserve(4 * static_cast<size_t>(frames.size()));
    for (Eigen::Index t = 0; t < frames.rows(); ++t) {
        for (Eigen::Index d = 0; d < frames.cols(); ++d) {
            put_f32_le(payload, frames(t, d));
        }
    }
    std::vector<uint8_t> bytes;
    bytes.insert(bytes.end(), {'E', 'M', 'S', '1'});
    bytes.push_back(static_cast<uint8_t>(modality));
    bytes.insert(bytes.end(), {0, 0, 0});
    put_u32_le(bytes, static_cast<uint32_t>(frames.cols()));
    put_u32_le(bytes, static_cast<uint32_t>(frames.rows()));
    put_u32_le(bytes, detail::crc32_of(payload.data(), payload.size()));
    bytes.insert(bytes.end(), payload.begin(), payload.end());
    detail::write_all_bytes_atomic(path, bytes);
}

struct SequenceFile {
    Modality modality;
    Eigen::MatrixXf frames; // frame_count x dim
};

inline SequenceFile read_sequence_file(const std::filesystem::path& path) {
    auto bytes = detail::read_all_bytes(path);
    const std::string origin = path.string();
    if (bytes.size() < 20 || std::memcmp(bytes.data(), "EMS1", 4) != 0) {
        throw FormatError("bad sequence file header: " + origin);
    }
    uint8_t code = bytes[4];
    if (code > 3) throw FormatError("bad modality code in " + origin);
    uint32_t dim = read_u32_le(bytes.data() + 8);
    uint32_t frames = read_u32_le(bytes.data() + 12);
    uint32_t checksum = read_u32_le(bytes.data() + 16);
    size_t payload = size_t{4} * dim * frames;
    if (bytes.size() != 20 + payload) {
        throw FormatError("sequence file size mismatch: " + origin);
    }
    if (detail::crc32_of(bytes.data() + 20, payload) != checksum) {
        throw FormatError("sequence file checksum mismatch: " + origin);
    }
    SequenceFile out;
    out.modality = static_cast<Modality>(code);
    out.frames.resize(frames, dim);
    for (uint32_t t = 0; t < frames; ++t) {
        for (uint32_t d = 0; d < dim; ++d) {
            out.frames(t, d) = read_f32_le(bytes.data() + 20 + 4 * (size_t{t} * dim + d));
        }
    }
    return out;
}

class EmbeddingCache {
public:
    explicit EmbeddingCache(std::filesystem::path root) : root_(std::move(root)) {
        std::filesystem::create_directories(root_);
    }

    const std::filesystem::path& root() const { return root_; }

    std::filesystem::path path_for(const CacheKey& key) const {
        return root_ / detail::sanitize_for_filename(key.producer_id) /
               (detail::sanitize_for_filename(key.utterance_id) + "." +
                std::string(to_string(key.modality)) + ".emb");
    }

    // Writes are atomic (tmp file + rename), so concurrent readers never
    // observe a partial entry.
    void put(const CacheKey& key, const Embedding& e) {
        if (!e.all_finite()) {
            throw Error("refusing to cache non-finite embedding for \"" +
                        key.utterance_id + "\"");
        }
        if (e.modality != key.modality) {
            throw Error("cache key/embedding modality mismatch for \"" +
                        key.utterance_id + "\"");
        }
        auto path = path_for(key);
        std::filesystem::create_directories(path.parent_path());
        detail::write_all_bytes_atomic(path, encode_embedding_file(e));
    }

    bool contains(const CacheKey& key) const {
        return std::filesystem::exists(path_for(key));
    }

    // Absent keys are not an error; corrupted files are.
    std::optional<Embedding> get(const CacheKey& key) const {
        auto path = path_for(key);
        if (!std::filesystem::exists(path)) return std::nullopt;
        auto e = decode_embedding_file(detail::read_all_bytes(path), path.string());
        e.producer_id = key.producer_id;
        if (e.modality != key.modality) {
            throw FormatError("modality mismatch in " + path.string());
        }
        return e;
    }

    // Rewrites <producer>/index.jsonl from the files on disk, sorted by
    // (utterance_id, modality) so identical caches serialize identically.
    void write_index(const std::string& producer_id) const {
        auto dir = root_ / detail::sanitize_for_filename(producer_id);
        if (!std::filesystem::exists(dir)) return;
        struct Entry {
            std::string utterance_id;
            Modality modality;
            uint32_t dim;
            std::string file;
        };
        std::vector<Entry> entries;
        for (const auto& de : std::filesystem::directory_iterator(dir)) {
            if (!de.is_regular_file() || de.path().extension() != ".emb") continue;
            auto e = decode_embedding_file(detail::read_all_bytes(de.path()),
                                           de.path().string());
            // filename is <id>.<modality>.emb
            std::string stem = de.path().stem().string(); // <id>.<modality>
            auto dot = stem.rfind('.');
            std::string id = dot == std::string::npos ? stem : stem.substr(0, dot);
            entries.push_back({id, e.modality, e.dim(), de.path().filename().string()});
        }
        std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
            return std::tie(a.utterance_id, a.modality) < std::tie(b.utterance_id, b.modality);
        });
        std::ofstream out(dir / "index.jsonl", std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write index in " + dir.string());
        for (const auto& en : entries) {
            nlohmann::json j;
            j["utterance_id"] = en.utterance_id;
            j["modality"] = std::string(to_string(en.modality));
            j["dim"] = en.dim;
            j["file"] = en.file;
            out << j.dump() << "\n";
        }
    }

    // Looks up the stored dimension for (producer, modality) via the index,
    // falling back to a directory scan when no index exists.
    std::optional<uint32_t> probe_dim(const std::string& producer_id,
                                      Modality modality) const {
        auto dir = root_ / detail::sanitize_for_filename(producer_id);
        auto index = dir / "index.jsonl";
        if (std::filesystem::exists(index)) {
            std::ifstream in(index);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto j = nlohmann::json::parse(line, nullptr, false);
                if (j.is_discarded()) continue;
                if (j.value("modality", "") == to_string(modality)) {
                    return j.value("dim", 0u);
                }
            }
        }
        if (!std::filesystem::exists(dir)) return std::nullopt;
        std::string suffix = "." + std::string(to_string(modality)) + ".emb";
        for (const auto& de : std::filesystem::directory_iterator(dir)) {
            auto name = de.path().filename().string();
            if (name.size() > suffix.size() &&
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                auto e = decode_embedding_file(detail::read_all_bytes(de.path()),
                                               de.path().string());
                return e.dim();
            }
        }
        return std::nullopt;
    }

private:
    std::filesystem::path root_;
};

} // namespace mmfuse
