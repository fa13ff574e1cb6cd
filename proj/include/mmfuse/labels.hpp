#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmfuse/common.hpp"

namespace mmfuse {

enum class Task { emotion, sentiment };

// Input channels, in the canonical order used for every concatenation
// layout and for the on-disk modality codes (text=0, voice=1, face=2,
// video=3).
enum class Modality : uint8_t { text = 0, voice = 1, face = 2, video = 3 };

inline constexpr std::array<Modality, 4> kAllModalities = {
    Modality::text, Modality::voice, Modality::face, Modality::video};

enum class Split { train, dev, test };

inline std::string_view to_string(Task t) {
    return t == Task::emotion ? "emotion" : "sentiment";
}

inline std::string_view to_string(Modality m) {
    switch (m) {
        case Modality::text: return "text";
        case Modality::voice: return "voice";
        case Modality::face: return "face";
        case Modality::video: return "video";
    }
    throw Error("invalid modality value");
}

inline std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::dev: return "dev";
        case Split::test: return "test";
    }
    throw Error("invalid split value");
}

inline std::optional<Task> parse_task(std::string_view s) {
    if (s == "emotion") return Task::emotion;
    if (s == "sentiment") return Task::sentiment;
    return std::nullopt;
}

inline std::optional<Modality> parse_modality(std::string_view s) {
    if (s == "text") return Modality::text;
    if (s == "voice") return Modality::voice;
    if (s == "face") return Modality::face;
    if (s == "video") return Modality::video;
    return std::nullopt;
}

inline std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    return std::nullopt;
}

// Closed label set for one task. Label order is fixed (alphabetical) so
// that label indices, confusion matrices and serialized models are stable
// across runs; index <-> name is a bijection.
class LabelSpace {
public:
    LabelSpace(Task task, std::vector<std::string> labels)
        : task_(task), labels_(std::move(labels)) {}

    Task task() const { return task_; }
    int size() const { return static_cast<int>(labels_.size()); }

    const std::string& name(int index) const {
        if (index < 0 || index >= size()) throw Error("label index out of range");
        return labels_[static_cast<size_t>(index)];
    }

    std::optional<int> index(std::string_view name) const {
        for (int i = 0; i < size(); ++i) {
            if (labels_[static_cast<size_t>(i)] == name) return i;
        }
        return std::nullopt;
    }

    bool contains(int index) const { return index >= 0 && index < size(); }

    const std::vector<std::string>& labels() const { return labels_; }

private:
    Task task_;
    std::vector<std::string> labels_;
};

// The two fixed label spaces: 7 emotions, 3 sentiments.
inline const LabelSpace& label_space(Task task) {
    static const LabelSpace emotion{
        Task::emotion,
        {"anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"}};
    static const LabelSpace sentiment{Task::sentiment,
                                      {"negative", "neutral", "positive"}};
    return task == Task::emotion ? emotion : sentiment;
}

} // namespace mmfuse
