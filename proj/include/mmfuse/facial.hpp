#pragma once

// Speaker face-track acquisition. The detection/clustering pipeline that
// isolates the speaker's face is an external adapter; this layer only
// validates what adapters hand back (uniform dimension, finite values) and
// fabricates deterministic tracks through the stub for tests. A record
// with no usable video yields an empty track rather than a failure;
// fusion substitutes zeros for it downstream.

#include <filesystem>
#include <string>

#include "mmfuse/cache.hpp"
#include "mmfuse/manifest.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

enum class TrackProvenance : uint8_t { adapter, stub, empty };

inline std::string_view to_string(TrackProvenance p) {
    switch (p) {
        case TrackProvenance::adapter: return "adapter";
        case TrackProvenance::stub: return "stub";
        case TrackProvenance::empty: return "empty";
    }
    throw Error("bad provenance value");
}

struct FaceTrack {
    std::string utterance_id;
    Mat face_frames; // K x D_f; K = 0 when no speaker face was found
    TrackProvenance provenance = TrackProvenance::empty;

    Eigen::Index frame_count() const { return face_frames.rows(); }
    bool empty() const { return face_frames.rows() == 0; }
};

class FaceTrackProvider {
public:
    virtual ~FaceTrackProvider() = default;
    virtual int dim() const = 0;
    // May return an empty track (provenance=empty) when no face is found.
    virtual FaceTrack track_for(const UtteranceRecord& record) = 0;
};

// Fabricates K hash-derived frames per utterance. Frame k's features are
// stub_encode over "face", 0x00, the video reference, 0x00, LE32(k).
class StubFaceTrackProvider : public FaceTrackProvider {
public:
    explicit StubFaceTrackProvider(int frames = 5, int dim = 512)
        : frames_(frames), dim_(dim) {
        if (frames < 1 || dim < 1) throw ConfigError("stub track sizes must be positive");
    }

    int dim() const override { return dim_; }

    FaceTrack track_for(const UtteranceRecord& record) override {
        FaceTrack track;
        track.utterance_id = record.utterance_id;
        if (!record.video_ref) return track;
        track.provenance = TrackProvenance::stub;
        track.face_frames.resize(frames_, dim_);
        const std::string& ref = *record.video_ref;
        for (int k = 0; k < frames_; ++k) {
            std::vector<uint8_t> material;
            const std::string tag = "face";
            material.insert(material.end(), tag.begin(), tag.end());
            material.push_back(0);
            material.insert(material.end(), ref.begin(), ref.end());
            material.push_back(0);
            put_u32_le(material, static_cast<uint32_t>(k));
            auto feat = stub_encode(material, static_cast<uint32_t>(dim_));
            for (int d = 0; d < dim_; ++d) {
                track.face_frames(k, d) = static_cast<double>(feat[static_cast<size_t>(d)]);
            }
        }
        return track;
    }

private:
    int frames_;
    int dim_;
};

// Reads adapter-produced tracks from disk: one sequence file per utterance
// under root, named <utterance_id>.face.seq. A missing file means the
// adapter found no face; the file's dimension must match the configured one.
class FileFaceTrackProvider : public FaceTrackProvider {
public:
    FileFaceTrackProvider(std::filesystem::path root, int dim)
        : root_(std::move(root)), dim_(dim) {
        if (dim < 1) throw ConfigError("face embedding dim must be positive");
    }

    int dim() const override { return dim_; }

    std::filesystem::path path_for(const std::string& utterance_id) const {
        return root_ / (detail::sanitize_for_filename(utterance_id) + ".face.seq");
    }

    FaceTrack track_for(const UtteranceRecord& record) override {
        FaceTrack track;
        track.utterance_id = record.utterance_id;
        if (!record.video_ref) return track;
        auto path = path_for(record.utterance_id);
        if (!std::filesystem::exists(path)) return track;
        auto seq = read_sequence_file(path);
        if (seq.modality != Modality::face) {
            throw FormatError("sequence file " + path.string() + " is not a face track");
        }
        if (seq.frames.cols() != dim_) {
            throw DimensionMismatchError("face track dim " +
                                         std::to_string(seq.frames.cols()) +
                                         " in " + path.string() + ", expected " +
                                         std::to_string(dim_));
        }
        if (seq.frames.rows() > 0) {
            track.provenance = TrackProvenance::adapter;
            track.face_frames = seq.frames.cast<double>();
        }
        return track;
    }

private:
    std::filesystem::path root_;
    int dim_;
};

// Validates the adapter's answer: uniform finite features of the expected
// width. Absent video_ref or an adapter miss produce an empty track.
inline FaceTrack acquire_face_track(const UtteranceRecord& record,
                                    FaceTrackProvider& adapter) {
    FaceTrack track = adapter.track_for(record);
    if (track.empty()) {
        track.provenance = TrackProvenance::empty;
        track.face_frames.resize(0, adapter.dim());
        return track;
    }
    if (track.face_frames.cols() != adapter.dim()) {
        throw DimensionMismatchError("face track for \"" + record.utterance_id +
                                     "\" has dim " +
                                     std::to_string(track.face_frames.cols()) +
                                     ", expected " + std::to_string(adapter.dim()));
    }
    if (!track.face_frames.allFinite()) {
        throw FormatError("non-finite face features for \"" + record.utterance_id + "\"");
    }
    return track;
}

} // namespace mmfuse
