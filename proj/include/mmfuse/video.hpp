#pragma once

// Video-side data pipeline: uniform temporal frame sampling from a frame
// source, then per-frame spatial features from an extractor adapter. Real
// decoders and the pretrained spatial backbone live behind the two
// adapter interfaces; hash-based stubs keep the pipeline testable.

#include <cstdint>
#include <string>
#include <vector>

#include "mmfuse/common.hpp"
#include "mmfuse/embedding.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Per-frame spatial features for one utterance; rows with frame_mask false
// failed extraction and are ignored everywhere downstream.
struct FrameFeatureSequence {
    std::string utterance_id;
    Mat frames; // T x D_s
    std::vector<uint8_t> frame_mask;

    Eigen::Index length() const { return frames.rows(); }

    int valid_count() const {
        int n = 0;
        for (auto m : frame_mask) n += m ? 1 : 0;
        return n;
    }
};

struct FrameSamplingPolicy {
    int max_frames = 32;
};

// Uniformly spaced, order-preserving pick of at most max_frames indices
// out of [0, total): index i maps to floor((i + 0.5) * total / max_frames),
// the center of the i-th of max_frames equal spans.
inline std::vector<int> sample_indices(int total, int max_frames) {
    if (total < 1 || max_frames < 1) throw Error("frame counts must be positive");
    std::vector<int> out;
    if (total <= max_frames) {
        out.resize(static_cast<size_t>(total));
        for (int i = 0; i < total; ++i) out[static_cast<size_t>(i)] = i;
        return out;
    }
    out.reserve(static_cast<size_t>(max_frames));
    for (int i = 0; i < max_frames; ++i) {
        out.push_back(static_cast<int>(
            (static_cast<int64_t>(2 * i + 1) * total) / (2 * max_frames)));
    }
    return out;
}

struct RawFrame {
    int index = 0; // position in the source clip
    std::vector<uint8_t> data;
};

using RawFrameBatch = std::vector<RawFrame>;

class FrameSource {
public:
    virtual ~FrameSource() = default;
    // Total decodable frames; 0 means missing or unreadable.
    virtual int frame_count(const std::string& video_ref) = 0;
    virtual RawFrame read_frame(const std::string& video_ref, int index) = 0;
};

// Deterministic synthetic clips: either a fixed frame count for every
// resource, or (fixed_count=0) a count in [8, 48] derived from the
// resource name. Frame payload is video_ref, a 0x00 separator, and the
// frame index as a little-endian u32.
class StubFrameSource : public FrameSource {
public:
    explicit StubFrameSource(int fixed_count = 0) : fixed_count_(fixed_count) {}

    int frame_count(const std::string& video_ref) override {
        if (fixed_count_ > 0) return fixed_count_;
        std::vector<uint8_t> material;
        const std::string tag = "framecount";
        material.insert(material.end(), tag.begin(), tag.end());
        material.push_back(0);
        material.insert(material.end(), video_ref.begin(), video_ref.end());
        auto digest = sha256(material.data(), material.size());
        uint32_t word = read_u32_le(digest.data());
        return 8 + static_cast<int>(word % 41u);
    }

    RawFrame read_frame(const std::string& video_ref, int index) override {
        RawFrame f;
        f.index = index;
        f.data.assign(video_ref.begin(), video_ref.end());
        f.data.push_back(0);
        put_u32_le(f.data, static_cast<uint32_t>(index));
        return f;
    }

private:
    int fixed_count_;
};

inline RawFrameBatch sample_frames(const std::string& video_ref, FrameSource& source,
                                   const FrameSamplingPolicy& policy = {}) {
    if (policy.max_frames < 1) throw ConfigError("max_frames must be >= 1");
    int total = source.frame_count(video_ref);
    if (total < 1) {
        throw MissingResourceError("video resource \"" + video_ref +
                                   "\" is unreadable or has no frames");
    }
    RawFrameBatch batch;
    for (int idx : sample_indices(total, policy.max_frames)) {
        batch.push_back(source.read_frame(video_ref, idx));
    }
    return batch;
}

class SpatialExtractor {
public:
    virtual ~SpatialExtractor() = default;
    virtual int dim() const = 0;
    // Feature vector for one frame; throws on a frame it cannot process.
    virtual std::vector<float> extract(const RawFrame& frame) = 0;
};

// Hash stub standing in for the pretrained spatial backbone.
class StubSpatialExtractor : public SpatialExtractor {
public:
    explicit StubSpatialExtractor(int dim = 1280) : dim_(dim) {
        if (dim < 1) throw ConfigError("spatial feature dim must be positive");
    }

    int dim() const override { return dim_; }

    std::vector<float> extract(const RawFrame& frame) override {
        return stub_encode(frame.data, dim_);
    }

private:
    int dim_;
};

// Runs the extractor over a sampled batch. A frame the adapter rejects
// becomes a zeroed row with frame_mask false; a batch with no usable frame
// at all is an error.
inline FrameFeatureSequence spatial_features(const std::string& utterance_id,
                                             const RawFrameBatch& frames,
                                             SpatialExtractor& adapter) {
    if (frames.empty()) throw Error("empty frame batch for \"" + utterance_id + "\"");
    const int D = adapter.dim();
    FrameFeatureSequence seq;
    seq.utterance_id = utterance_id;
    seq.frames = Mat::Zero(static_cast<Eigen::Index>(frames.size()), D);
    seq.frame_mask.assign(frames.size(), 0);
    int valid = 0;
    for (size_t t = 0; t < frames.size(); ++t) {
        std::vector<float> feat;
        try {
            feat = adapter.extract(frames[t]);
        } catch (const std::exception&) {
            continue; // row stays zero, mask stays false
        }
        if (static_cast<int>(feat.size()) != D) {
            throw DimensionMismatchError("spatial adapter returned dim " +
                                         std::to_string(feat.size()) + ", expected " +
                                         std::to_string(D));
        }
        for (int j = 0; j < D; ++j) {
            double v = static_cast<double>(feat[static_cast<size_t>(j)]);
            if (!std::isfinite(v)) {
                throw FormatError("non-finite spatial feature for \"" + utterance_id + "\"");
            }
            seq.frames(static_cast<Eigen::Index>(t), j) = v;
        }
        seq.frame_mask[t] = 1;
        ++valid;
    }
    if (valid == 0) {
        throw Error("no usable frames for \"" + utterance_id + "\"");
    }
    return seq;
}

} // namespace mmfuse
