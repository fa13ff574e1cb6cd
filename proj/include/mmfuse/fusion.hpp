#pragma once

// Feature-level fusion: per-modality embeddings are concatenated, in the
// fixed canonical modality order, into one multimodal vector whose layout
// records where each segment came from. A modality requested but not
// available contributes zeros and a present=false flag instead of
// dropping the example.

#include <cmath>
#include <map>
#include <optional>
#include <vector>

#include "mmfuse/embedding.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

struct Segment {
    Modality modality;
    std::string producer_id; // empty when the modality is absent
    int offset = 0;
    int length = 0;
    bool present = false;

    bool operator==(const Segment&) const = default;
};

struct MultimodalVector {
    std::vector<float> values;
    std::vector<Segment> layout; // canonical modality order, contiguous

    int dim() const { return static_cast<int>(values.size()); }

    const Segment* segment(Modality m) const {
        for (const auto& s : layout) {
            if (s.modality == m) return &s;
        }
        return nullptr;
    }

    bool present(Modality m) const {
        const Segment* s = segment(m);
        return s != nullptr && s->present;
    }

    // Recovers the stored embedding values for one layout entry.
    std::vector<float> slice(const Segment& s) const {
        return {values.begin() + s.offset, values.begin() + s.offset + s.length};
    }
};

// Concatenate the subset's embeddings in canonical modality order. `dims`
// fixes the expected width per modality so a missing embedding still
// occupies its segment (zero-filled). With l2_normalize, each present
// segment is scaled to unit Euclidean norm before concatenation.
inline MultimodalVector concat_fuse(const std::map<Modality, Embedding>& embeddings,
                                    const std::vector<Modality>& subset,
                                    const std::map<Modality, int>& dims,
                                    bool l2_normalize = false) {
    MultimodalVector out;
    int offset = 0;
    for (Modality m : kAllModalities) {
        bool wanted = false;
        for (Modality s : subset) {
            if (s == m) { wanted = true; break; }
        }
        if (!wanted) continue;
        auto dit = dims.find(m);
        if (dit == dims.end() || dit->second < 1) {
            throw ConfigError("no configured dim for modality " +
                              std::string(to_string(m)));
        }
        const int len = dit->second;
        Segment seg{m, "", offset, len, false};
        auto eit = embeddings.find(m);
        if (eit != embeddings.end()) {
            const Embedding& e = eit->second;
            if (static_cast<int>(e.values.size()) != len) {
                throw DimensionMismatchError(
                    std::string(to_string(m)) + " embedding has dim " +
                    std::to_string(e.values.size()) + ", expected " +
                    std::to_string(len));
            }
            seg.present = true;
            seg.producer_id = e.producer_id;
            size_t start = out.values.size();
            out.values.insert(out.values.end(), e.values.begin(), e.values.end());
            if (l2_normalize) {
                double sq = 0.0;
                for (size_t i = start; i < out.values.size(); ++i) {
                    sq += static_cast<double>(out.values[i]) * out.values[i];
                }
                if (sq > 0.0) {
                    float inv = static_cast<float>(1.0 / std::sqrt(sq));
                    for (size_t i = start; i < out.values.size(); ++i) {
                        out.values[i] *= inv;
                    }
                }
            }
        } else {
            out.values.insert(out.values.end(), static_cast<size_t>(len), 0.0f);
        }
        out.layout.push_back(seg);
        offset += len;
    }
    return out;
}

inline Vec to_vec(const MultimodalVector& v) {
    Vec out(v.dim());
    for (int i = 0; i < v.dim(); ++i) out(i) = static_cast<double>(v.values[static_cast<size_t>(i)]);
    return out;
}

// Max-subtracted softmax; safe for any finite logits.
inline Vec stable_softmax(const Vec& logits) {
    double mx = logits.maxCoeff();
    Vec ex = (logits.array() - mx).exp();
    return ex / ex.sum();
}

struct Prediction {
    int label = 0;
    Vec probabilities;
};

// Argmax with lowest-index tie-break, plus the full probability vector.
inline Prediction predict(const Vec& logits) {
    if (logits.size() < 1) throw Error("empty logits");
    if (!logits.allFinite()) throw Error("non-finite logits");
    Prediction p;
    p.probabilities = stable_softmax(logits);
    p.label = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i) {
        if (logits(i) > logits(p.label)) p.label = static_cast<int>(i);
    }
    return p;
}

} // namespace mmfuse
