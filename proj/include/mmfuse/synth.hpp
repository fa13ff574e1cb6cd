#pragma once

// Synthetic multimodal datasets with a tunable amount of label signal per
// modality. Class prototypes are unit coordinate axes; a modality with
// informativeness i emits
//
//     x = i * prototype(label) + (1 - i) * mean_over_classes(prototype) + noise
//
// so the optimal per-modality decision is "largest of the first |labels|
// coordinates", its accuracy increases strictly with i, and i = 0 carries
// no label signal at all. Complementary modalities concatenate into a
// strictly stronger signal, which is what the fusion acceptance tests
// lean on. Everything is keyed by (seed, utterance_id, modality), so
// regeneration is byte-identical and order-independent.

#include <cstdio>
#include <map>
#include <string>

#include "mmfuse/cache.hpp"
#include "mmfuse/manifest.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

inline constexpr const char* kSynthProducer = "synth";

struct SynthConfig {
    int n_train = 600;
    int n_dev = 200;
    int n_test = 400;
    Task task = Task::emotion;
    std::map<Modality, int> dims = {{Modality::text, 24},
                                    {Modality::voice, 24},
                                    {Modality::face, 24},
                                    {Modality::video, 24}};
    std::map<Modality, double> informativeness = {{Modality::text, 0.8},
                                                  {Modality::voice, 0.5},
                                                  {Modality::face, 0.3},
                                                  {Modality::video, 0.4}};
    double noise_scale = 0.5;
    uint64_t seed = 0;

    void validate() const {
        if (n_train < 1 || n_dev < 0 || n_test < 0) {
            throw ConfigError("synth split sizes must be positive (train) / nonnegative");
        }
        int L = static_cast<int>(label_space(task).size());
        for (Modality m : kAllModalities) {
            auto d = dims.find(m);
            if (d == dims.end() || d->second < L) {
                throw ConfigError("synth dim for " + std::string(to_string(m)) +
                                  " must be at least the number of labels (" +
                                  std::to_string(L) + ")");
            }
            auto i = informativeness.find(m);
            if (i == informativeness.end() || i->second < 0.0 || i->second > 1.0) {
                throw ConfigError("informativeness for " + std::string(to_string(m)) +
                                  " must lie in [0, 1]");
            }
        }
        if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be >= 0");
    }
};

// Class prototype for the synthetic geometry: the label-th unit axis.
inline Vec synth_prototype(int label, int dim) {
    Vec p = Vec::Zero(dim);
    p(label) = 1.0;
    return p;
}

namespace detail {

inline Embedding synth_embedding(const SynthConfig& cfg, const std::string& utterance_id,
                                 Modality m, int label) {
    const int L = static_cast<int>(label_space(cfg.task).size());
    const int dim = cfg.dims.at(m);
    const double info = cfg.informativeness.at(m);
    DeterministicRng rng(derive_seed(cfg.seed, "synth:" + utterance_id + ":" +
                                                   std::string(to_string(m))));
    Embedding e;
    e.modality = m;
    e.producer_id = kSynthProducer;
    e.values.resize(static_cast<size_t>(dim));
    for (int j = 0; j < dim; ++j) {
        double v = rng.normal() * cfg.noise_scale;
        if (j < L) v += (1.0 - info) / static_cast<double>(L);
        if (j == label) v += info;
        e.values[static_cast<size_t>(j)] = static_cast<float>(v);
    }
    return e;
}

} // namespace detail

// Builds the manifest and fills the cache under producer "synth". Labels
// rotate through the task's label space so every split is balanced.
// Downstream stages cannot tell the result from externally encoded data.
inline DatasetManifest generate_synth(const SynthConfig& cfg, EmbeddingCache& cache) {
    cfg.validate();
    const LabelSpace& labels = label_space(cfg.task);
    const int L = static_cast<int>(labels.size());

    DatasetManifest manifest;
    manifest.source_name = "synth";
    auto add_split = [&](Split split, int count) {
        for (int i = 0; i < count; ++i) {
            UtteranceRecord r;
            char idbuf[32];
            std::snprintf(idbuf, sizeof(idbuf), "synth-%s-%05d",
                          std::string(to_string(split)).c_str(), i);
            r.utterance_id = idbuf;
            r.dialogue_id = "synth-dlg-" + std::to_string(i / 8);
            r.speaker = "speaker" + std::to_string(i % 4);
            r.text = "synthetic utterance " + std::to_string(i);
            r.audio_ref = "synth://" + r.utterance_id + ".wav";
            r.video_ref = "synth://" + r.utterance_id + ".mp4";
            int label = i % L;
            if (cfg.task == Task::emotion) {
                r.emotion_label = label;
            } else {
                r.sentiment_label = label;
            }
            r.split = split;
            manifest.records.push_back(std::move(r));
        }
    };
    add_split(Split::train, cfg.n_train);
    add_split(Split::dev, cfg.n_dev);
    add_split(Split::test, cfg.n_test);

    for (const auto& r : manifest.records) {
        int label = cfg.task == Task::emotion ? *r.emotion_label : *r.sentiment_label;
        for (Modality m : kAllModalities) {
            Embedding e = detail::synth_embedding(cfg, r.utterance_id, m, label);
            cache.put(CacheKey{r.utterance_id, m, kSynthProducer}, e);
        }
    }
    cache.write_index(kSynthProducer);
    return manifest;
}

} // namespace mmfuse
