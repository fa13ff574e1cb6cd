#pragma once

#include <algorithm>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mmfuse/cache.hpp"
#include "mmfuse/manifest.hpp"

namespace mmfuse {

// Resource an encoder of the given modality consumes, if the record has it.
// Text rides in the record itself; face and video share the video reference.
inline std::optional<std::string> resource_for(const UtteranceRecord& r,
                                               Modality m) {
    switch (m) {
        case Modality::text: return r.text;
        case Modality::voice: return r.audio_ref;
        case Modality::face:
        case Modality::video: return r.video_ref;
    }
    return std::nullopt;
}

// Produces the embedding for one record under one encoder spec.
// Stub encoders hash the resource; external adapters are expected to have
// deposited their result in the cache out of band.
inline Embedding encode(const UtteranceRecord& record, const EncoderSpec& spec,
                        const EmbeddingCache* cache = nullptr) {
    auto resource = resource_for(record, spec.modality);
    if (!resource) {
        throw MissingResourceError("record \"" + record.utterance_id + "\" has no " +
                                   std::string(to_string(spec.modality)) + " resource");
    }
    if (spec.kind == EncoderKind::stub) {
        Embedding e;
        e.modality = spec.modality;
        e.producer_id = spec.producer_id;
        e.values = stub_encode(stub_seed_material(spec.modality, *resource), spec.dim);
        return e;
    }
    if (cache == nullptr) {
        throw AdapterUnavailableError("external adapter \"" + spec.producer_id +
                                      "\" needs a cache to read from");
    }
    auto hit = cache->get({record.utterance_id, spec.modality, spec.producer_id});
    if (!hit) {
        throw AdapterUnavailableError("no cached embedding from adapter \"" +
                                      spec.producer_id + "\" for \"" +
                                      record.utterance_id + "\"");
    }
    if (hit->dim() != spec.dim) {
        throw DimensionMismatchError(
            "adapter \"" + spec.producer_id + "\" produced dim " +
            std::to_string(hit->dim()) + ", expected " + std::to_string(spec.dim) +
            " for \"" + record.utterance_id + "\"");
    }
    return *hit;
}

struct EncodeReport {
    int encoded = 0;
    int skipped = 0; // missing resource
    int failed = 0;  // adapter unavailable or embedding rejected
    int cache_hits = 0;
    std::vector<std::pair<std::string, std::string>> errors; // (utterance_id, message)

    int attempted() const { return encoded + failed + cache_hits; }

    std::string summary() const {
        std::ostringstream os;
        os << "encoded=" << encoded << " cache_hits=" << cache_hits
           << " skipped=" << skipped << " failed=" << failed;
        return os.str();
    }
};

// Fails the run only when the failure rate exceeds this fraction of the
// attempted records. Skips (missing resources) never count as failures.
struct EncodePolicy {
    double fail_threshold = 0.0;
};

// Populates the cache for every (record in split, spec) pair. Records are
// processed in utterance_id order so the report is deterministic no matter
// how the work would be scheduled.
inline EncodeReport encode_split(const DatasetManifest& manifest,
                                 const std::vector<EncoderSpec>& specs,
                                 Split split, EmbeddingCache& cache,
                                 const EncodePolicy& policy = {}) {
    if (specs.empty()) throw ConfigError("encode_split: no encoder specs given");
    auto records = manifest.records_in(split);
    std::sort(records.begin(), records.end(),
              [](const UtteranceRecord* a, const UtteranceRecord* b) {
                  return a->utterance_id < b->utterance_id;
              });
    EncodeReport report;
    for (const auto* record : records) {
        for (const auto& spec : specs) {
            CacheKey key{record->utterance_id, spec.modality, spec.producer_id};
            if (cache.contains(key)) {
                ++report.cache_hits;
                continue;
            }
            try {
                Embedding e = encode(*record, spec, &cache);
                if (e.dim() != spec.dim) {
                    throw DimensionMismatchError("encoder \"" + spec.producer_id +
                                                 "\" produced dim " + std::to_string(e.dim()) +
                                                 ", expected " + std::to_string(spec.dim));
                }
                cache.put(key, e);
                ++report.encoded;
            } catch (const MissingResourceError&) {
                ++report.skipped;
            } catch (const DimensionMismatchError&) {
                throw; // always fatal
            } catch (const Error& err) {
                ++report.failed;
                report.errors.emplace_back(record->utterance_id, err.what());
            }
        }
    }
    for (const auto& spec : specs) cache.write_index(spec.producer_id);
    if (report.attempted() > 0) {
        double rate = static_cast<double>(report.failed) / report.attempted();
        if (rate > policy.fail_threshold) {
            throw EncodeThresholdError("encode failure rate " + std::to_string(rate) +
                                       " exceeds threshold (" + report.summary() + ")");
        }
    }
    return report;
}

} // namespace mmfuse
