#pragma once

// Experiment harness: run configuration (file + flag merge), dataset
// assembly from a manifest and an embedding cache, per-subset training
// with checkpointing, and the modality-subset ablation with its three
// renderings (ablation.json, ablation.csv, report.txt).
//
// ablation.json must be byte-identical across repeated runs with one
// config and seed, so nothing time- or path-dependent goes into it;
// wall-clock numbers live only in the per-subset history files.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/checkpoint.hpp"
#include "mmfuse/encode.hpp"
#include "mmfuse/facial.hpp"
#include "mmfuse/nn/bilstm.hpp"
#include "mmfuse/nn/transformer.hpp"
#include "mmfuse/synth.hpp"
#include "mmfuse/train.hpp"

namespace mmfuse {

// Accuracy fraction -> percent with two decimals. Scaling happens once
// (x10000) and the half-way case rounds to even, so 0.66365 -> "66.36".
inline std::string format_pct(double accuracy) {
    if (!std::isfinite(accuracy) || accuracy < 0.0) {
        throw Error("accuracy must be a nonnegative finite fraction");
    }
    long long v = static_cast<long long>(std::nearbyint(accuracy * 10000.0));
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%lld.%02lld", v / 100, v % 100);
    return buf;
}

// --- modality subsets -----------------------------------------------------

// Comma list -> canonical-order subset. Rejects unknown names, duplicates,
// and the empty set.
inline std::vector<Modality> parse_subset(const std::string& text) {
    std::set<Modality> seen;
    size_t pos = 0;
    while (pos <= text.size()) {
        size_t comma = text.find(',', pos);
        if (comma == std::string::npos) comma = text.size();
        std::string item = text.substr(pos, comma - pos);
        size_t a = item.find_first_not_of(" \t");
        size_t b = item.find_last_not_of(" \t");
        item = a == std::string::npos ? "" : item.substr(a, b - a + 1);
        if (!item.empty()) {
            auto m = parse_modality(item);
            if (!m) throw ConfigError("unknown modality \"" + item + "\"");
            if (!seen.insert(*m).second) {
                throw ConfigError("duplicate modality \"" + item + "\" in subset");
            }
        }
        pos = comma + 1;
    }
    if (seen.empty()) throw ConfigError("empty modality subset");
    std::vector<Modality> out;
    for (Modality m : kAllModalities) {
        if (seen.count(m)) out.push_back(m);
    }
    return out;
}

inline std::string subset_key(const std::vector<Modality>& subset) {
    std::string key;
    for (Modality m : kAllModalities) {
        for (Modality s : subset) {
            if (s == m) {
                if (!key.empty()) key += '+';
                key += to_string(m);
            }
        }
    }
    return key;
}

// --- published reference accuracies ---------------------------------------

inline constexpr const char* kReferenceLabel = "reference, not reproduced";

// Accuracy fractions transcribed from the source tables, keyed by
// canonical subset. Shown in reports only under kReferenceLabel; nothing
// in this codebase reproduces them.
inline const std::map<std::string, double>& reference_accuracies(Task task) {
    static const std::map<std::string, double> emotion = {
        {"text", 0.6434},
        {"voice", 0.5149},
        {"face", 0.2261},
        {"video", 0.3614},
        {"voice+face+video", 0.4816},
        {"text+face+video", 0.6598},
        {"text+voice+face", 0.6625},
        {"text+voice+video", 0.6629},
        {"text+voice+face+video", 0.6636},
    };
    static const std::map<std::string, double> sentiment = {
        {"text", 0.6921},
        {"voice", 0.5620},
        {"face", 0.3898},
        {"video", 0.4251},
        {"voice+face+video", 0.4958},
        {"text+voice+video", 0.7176},
        {"text+face+video", 0.7180},
        {"text+voice+face", 0.7184},
        {"text+voice+face+video", 0.7215},
    };
    return task == Task::emotion ? emotion : sentiment;
}

// --- run configuration ----------------------------------------------------

struct RunConfig {
    Task task = Task::emotion;
    std::vector<std::vector<Modality>> subsets; // empty -> unimodal rows + all four
    std::string manifest_path;
    std::string cache_dir;
    std::string out_dir;
    std::string producer = kSynthProducer;
    uint64_t seed = 0;
    TrainConfig train;
    MlpConfig mlp;
    bool l2_normalize = false;
    std::string head = "shared"; // "shared" | "native"
    double miss_threshold = 0.2; // cache-miss fraction that fails a subset
    bool reference_paper = false;
    std::map<Modality, int> dims; // unset entries probed from the cache

    // native-head model shapes (video/face rows when head = "native")
    TemporalEncoderConfig video;
    FacialModelConfig facial;
    int spatial_dim = 0; // 0 -> video.hidden (identity input projection)
    int face_dim = 512;
    int face_frames = 5;
    int max_frames = 32;

    // Call once after all file/flag values are applied.
    void finalize() {
        if (head != "shared" && head != "native") {
            throw ConfigError("head must be \"shared\" or \"native\"");
        }
        if (miss_threshold < 0.0 || miss_threshold > 1.0) {
            throw ConfigError("miss_threshold must lie in [0, 1]");
        }
        if (subsets.empty()) {
            for (Modality m : kAllModalities) subsets.push_back({m});
            subsets.push_back({kAllModalities.begin(), kAllModalities.end()});
        }
        std::set<std::string> keys;
        for (const auto& s : subsets) {
            if (!keys.insert(subset_key(s)).second) {
                throw ConfigError("duplicate subset \"" + subset_key(s) + "\"");
            }
        }
        train.seed = seed;
        train.task = task;
        train.validate();
    }
};

namespace detail {

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("value for " + key + " must be true or false");
}

inline int parse_int(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("value for " + key + " must be an integer");
    }
}

inline double parse_real(const std::string& v, const std::string& key) {
    try {
        size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("value for " + key + " must be a number");
    }
}

} // namespace detail

// One `key = value` assignment; shared by the config-file parser and the
// CLI override path so both accept exactly the same keys.
inline void apply_config_kv(RunConfig& cfg, const std::string& key,
                            const std::string& value) {
    using detail::parse_bool;
    using detail::parse_int;
    using detail::parse_real;
    if (key == "task") {
        auto t = parse_task(value);
        if (!t) throw ConfigError("unknown task \"" + value + "\"");
        cfg.task = *t;
    } else if (key == "subsets") {
        cfg.subsets.clear();
        size_t pos = 0;
        while (pos <= value.size()) {
            size_t sep = value.find(';', pos);
            if (sep == std::string::npos) sep = value.size();
            std::string part = value.substr(pos, sep - pos);
            if (part.find_first_not_of(" \t") != std::string::npos) {
                cfg.subsets.push_back(parse_subset(part));
            }
            pos = sep + 1;
        }
        if (cfg.subsets.empty()) throw ConfigError("subsets is empty");
    } else if (key == "manifest") {
        cfg.manifest_path = value;
    } else if (key == "cache") {
        cfg.cache_dir = value;
    } else if (key == "out") {
        cfg.out_dir = value;
    } else if (key == "producer") {
        cfg.producer = value;
    } else if (key == "seed") {
        cfg.seed = static_cast<uint64_t>(std::stoull(value));
    } else if (key == "batch_size") {
        cfg.train.batch_size = parse_int(value, key);
    } else if (key == "max_epochs") {
        cfg.train.max_epochs = parse_int(value, key);
    } else if (key == "max_steps") {
        if (value.empty() || value == "none") {
            cfg.train.max_steps.reset();
        } else {
            cfg.train.max_steps = parse_int(value, key);
        }
    } else if (key == "lr") {
        cfg.train.lr = parse_real(value, key);
    } else if (key == "weight_decay") {
        cfg.train.weight_decay = parse_real(value, key);
    } else if (key == "mlp_hidden") {
        cfg.mlp.hidden_sizes.clear();
        size_t pos = 0;
        while (pos <= value.size()) {
            size_t comma = value.find(',', pos);
            if (comma == std::string::npos) comma = value.size();
            std::string item = value.substr(pos, comma - pos);
            if (item.find_first_not_of(" \t") != std::string::npos) {
                cfg.mlp.hidden_sizes.push_back(parse_int(item, key));
            }
            pos = comma + 1;
        }
    } else if (key == "mlp_dropout") {
        cfg.mlp.dropout = parse_real(value, key);
    } else if (key == "l2_normalize") {
        cfg.l2_normalize = parse_bool(value, key);
    } else if (key == "head") {
        cfg.head = value;
    } else if (key == "miss_threshold") {
        cfg.miss_threshold = parse_real(value, key);
    } else if (key == "reference") {
        if (value == "paper") {
            cfg.reference_paper = true;
        } else if (value == "none") {
            cfg.reference_paper = false;
        } else {
            throw ConfigError("reference must be \"paper\" or \"none\"");
        }
    } else if (key == "dims") {
        size_t pos = 0;
        while (pos <= value.size()) {
            size_t comma = value.find(',', pos);
            if (comma == std::string::npos) comma = value.size();
            std::string item = value.substr(pos, comma - pos);
            if (item.find_first_not_of(" \t") != std::string::npos) {
                size_t colon = item.find(':');
                if (colon == std::string::npos) {
                    throw ConfigError("dims entries look like modality:dim");
                }
                std::string name = item.substr(0, colon);
                size_t a = name.find_first_not_of(" \t");
                size_t b = name.find_last_not_of(" \t");
                name = a == std::string::npos ? "" : name.substr(a, b - a + 1);
                auto m = parse_modality(name);
                if (!m) throw ConfigError("unknown modality \"" + name + "\" in dims");
                cfg.dims[*m] = parse_int(item.substr(colon + 1), key);
            }
            pos = comma + 1;
        }
    } else if (key == "video_layers") {
        cfg.video.num_layers = parse_int(value, key);
    } else if (key == "video_heads") {
        cfg.video.num_heads = parse_int(value, key);
    } else if (key == "video_hidden") {
        cfg.video.hidden = parse_int(value, key);
    } else if (key == "video_window") {
        cfg.video.attention_window = parse_int(value, key);
    } else if (key == "video_ffn") {
        cfg.video.ffn_multiplier = parse_int(value, key);
    } else if (key == "video_dropout") {
        cfg.video.dropout = parse_real(value, key);
    } else if (key == "spatial_dim") {
        cfg.spatial_dim = parse_int(value, key);
    } else if (key == "face_dim") {
        cfg.face_dim = parse_int(value, key);
    } else if (key == "face_frames") {
        cfg.face_frames = parse_int(value, key);
    } else if (key == "facial_hidden") {
        cfg.facial.recurrent_hidden = parse_int(value, key);
    } else if (key == "facial_attention") {
        cfg.facial.attention_dim = parse_int(value, key);
    } else if (key == "facial_dropout") {
        cfg.facial.dropout = parse_real(value, key);
    } else if (key == "max_frames") {
        cfg.max_frames = parse_int(value, key);
    } else {
        throw ConfigError("unknown config key \"" + key + "\"");
    }
}

// Flat `key = value` file; blank lines and lines starting with '#' are
// ignored. Values from later lines override earlier ones; CLI flags are
// applied after the file and therefore win.
inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        size_t first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                              ": empty key");
        }
        try {
            apply_config_kv(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " +
                              e.what());
        }
    }
}

// --- dataset assembly -----------------------------------------------------

struct FeatureSet {
    std::vector<Vec> x;
    std::vector<int> y;
    std::vector<std::string> ids;
    int width = 0;
    int skipped_null = 0;  // records without a label for the task
    int missing_pairs = 0; // (record, modality) pairs absent from the cache
    int total_pairs = 0;
};

// Expected embedding width per modality: explicit config wins, otherwise
// the cache is probed.
inline std::map<Modality, int> resolve_dims(const RunConfig& cfg,
                                            const EmbeddingCache& cache,
                                            const std::vector<Modality>& needed) {
    std::map<Modality, int> out;
    for (Modality m : needed) {
        auto it = cfg.dims.find(m);
        if (it != cfg.dims.end()) {
            if (it->second < 1) throw ConfigError("configured dim must be positive");
            out[m] = it->second;
            continue;
        }
        auto probed = cache.probe_dim(cfg.producer, m);
        if (!probed) {
            throw ConfigError("cannot determine embedding dim for " +
                              std::string(to_string(m)) + " under producer \"" +
                              cfg.producer + "\" (no cache entries; set dims)");
        }
        out[m] = static_cast<int>(*probed);
    }
    return out;
}

// Fused feature rows for one split, ordered by utterance_id. Missing cache
// entries zero-fill their segment and are tallied; records without a label
// are skipped and tallied.
inline FeatureSet assemble_features(const DatasetManifest& manifest, Split split,
                                    const std::vector<Modality>& subset,
                                    const EmbeddingCache& cache,
                                    const std::string& producer,
                                    const std::map<Modality, int>& dims,
                                    bool l2_normalize, Task task) {
    auto records = manifest.records_in(split);
    std::sort(records.begin(), records.end(),
              [](const UtteranceRecord* a, const UtteranceRecord* b) {
                  return a->utterance_id < b->utterance_id;
              });
    FeatureSet out;
    for (Modality m : subset) out.width += dims.at(m);
    for (const auto* r : records) {
        auto label = r->label_for(task);
        if (!label) {
            ++out.skipped_null;
            continue;
        }
        std::map<Modality, Embedding> found;
        for (Modality m : subset) {
            ++out.total_pairs;
            auto e = cache.get(CacheKey{r->utterance_id, m, producer});
            if (e) {
                found.emplace(m, std::move(*e));
            } else {
                ++out.missing_pairs;
            }
        }
        MultimodalVector fused = concat_fuse(found, subset, dims, l2_normalize);
        out.x.push_back(to_vec(fused));
        out.y.push_back(*label);
        out.ids.push_back(r->utterance_id);
    }
    return out;
}

// --- per-subset runs ------------------------------------------------------

struct SubsetOutcome {
    std::vector<Modality> subset;
    std::string key;
    std::string head_used = "shared";
    bool failed = false;
    std::string reason;
    double accuracy = 0.0;
    int n = 0;
    double best_dev_accuracy = 0.0;
    int best_epoch = -1;
    int skipped_null_test = 0;
    double miss_rate = 0.0;
    std::string checkpoint_file; // relative to the output directory
    std::vector<EpochStats> history;
};

inline void write_history(const std::filesystem::path& path,
                          const std::vector<EpochStats>& history) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& h : history) {
        nlohmann::json j;
        j["epoch"] = h.epoch;
        j["train_loss"] = h.train_loss;
        if (std::isfinite(h.dev_accuracy)) j["dev_accuracy"] = h.dev_accuracy;
        j["wall_time_s"] = h.wall_time_s;
        out << j.dump() << "\n";
    }
}

namespace detail {

inline nlohmann::json train_config_echo(const TrainConfig& t) {
    nlohmann::json j;
    j["batch_size"] = t.batch_size;
    j["max_epochs"] = t.max_epochs;
    if (t.max_steps) j["max_steps"] = *t.max_steps;
    j["lr"] = t.lr;
    j["weight_decay"] = t.weight_decay;
    j["optimizer"] = "adamw";
    j["seed"] = t.seed;
    j["task"] = std::string(to_string(t.task));
    return j;
}

// Shared-head subset row: fuse cached embeddings, train the classifier,
// checkpoint it, and score the test split from the reloaded checkpoint so
// the recorded accuracy is exactly what the saved model reproduces.
inline SubsetOutcome run_subset_shared(const RunConfig& cfg,
                                       const DatasetManifest& manifest,
                                       const EmbeddingCache& cache,
                                       const std::vector<Modality>& subset) {
    SubsetOutcome out;
    out.subset = subset;
    out.key = subset_key(subset);
    out.head_used = "shared";

    auto dims = resolve_dims(cfg, cache, subset);
    FeatureSet train = assemble_features(manifest, Split::train, subset, cache,
                                         cfg.producer, dims, cfg.l2_normalize, cfg.task);
    FeatureSet dev = assemble_features(manifest, Split::dev, subset, cache,
                                       cfg.producer, dims, cfg.l2_normalize, cfg.task);
    FeatureSet test = assemble_features(manifest, Split::test, subset, cache,
                                        cfg.producer, dims, cfg.l2_normalize, cfg.task);
    int total_pairs = train.total_pairs + dev.total_pairs + test.total_pairs;
    int missing = train.missing_pairs + dev.missing_pairs + test.missing_pairs;
    out.miss_rate = total_pairs > 0
                        ? static_cast<double>(missing) / static_cast<double>(total_pairs)
                        : 0.0;
    out.skipped_null_test = test.skipped_null;
    if (train.x.empty()) {
        out.failed = true;
        out.reason = "no labeled training records";
        return out;
    }
    if (out.miss_rate > cfg.miss_threshold) {
        out.failed = true;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "cache miss rate %.4f exceeds threshold %.4f",
                      out.miss_rate, cfg.miss_threshold);
        out.reason = buf;
        return out;
    }

    const int L = label_space(cfg.task).size();
    auto model = FeatureClassifier::from_config(
        train.width, L, cfg.mlp, derive_seed(cfg.seed, "model:" + out.key));
    TrainOutput t = train_model(model, train.x, train.y, dev.x, dev.y, cfg.train, L);
    out.history = t.history;
    out.best_dev_accuracy = t.best_dev_accuracy;
    out.best_epoch = t.best_epoch;

    nlohmann::json header;
    header["kind"] = "fusion";
    header["head"] = "shared";
    header["task"] = std::string(to_string(cfg.task));
    header["producer"] = cfg.producer;
    header["l2_normalize"] = cfg.l2_normalize;
    nlohmann::json jsubset = nlohmann::json::array();
    for (Modality m : subset) jsubset.push_back(std::string(to_string(m)));
    header["subset"] = jsubset;
    nlohmann::json jdims;
    for (const auto& [m, d] : dims) jdims[std::string(to_string(m))] = d;
    header["dims"] = jdims;
    nlohmann::json jwidths = nlohmann::json::array();
    for (int w : model.mlp().widths()) jwidths.push_back(w);
    header["mlp_widths"] = jwidths;
    header["train"] = train_config_echo(cfg.train);

    out.checkpoint_file = "checkpoint-" + out.key + ".ckpt";
    auto ckpt_path = std::filesystem::path(cfg.out_dir) / out.checkpoint_file;
    save_checkpoint(ckpt_path, header, flatten_params(model));

    Checkpoint loaded = load_checkpoint(ckpt_path);
    restore_params(loaded.params, model);
    EvalReport rep = evaluate_model(model, test.x, test.y, L);
    out.accuracy = rep.accuracy;
    out.n = rep.n_examples;
    return out;
}

inline nlohmann::json video_config_json(const TemporalEncoderConfig& c, int spatial_dim,
                                        int max_frames) {
    nlohmann::json j;
    j["num_layers"] = c.num_layers;
    j["num_heads"] = c.num_heads;
    j["hidden"] = c.hidden;
    j["attention_window"] = c.attention_window;
    j["ffn_multiplier"] = c.ffn_multiplier;
    j["dropout"] = c.dropout;
    j["spatial_dim"] = spatial_dim;
    j["max_frames"] = max_frames;
    return j;
}

inline nlohmann::json facial_config_json(const FacialModelConfig& c, int face_dim,
                                         int face_frames) {
    nlohmann::json j;
    j["recurrent_hidden"] = c.recurrent_hidden;
    j["attention_dim"] = c.attention_dim;
    j["dropout"] = c.dropout;
    j["face_dim"] = face_dim;
    j["face_frames"] = face_frames;
    return j;
}

// Native video row: stub frame source + stub spatial extractor feed the
// temporal encoder; records without a video reference are skipped.
inline SubsetOutcome run_subset_native_video(const RunConfig& cfg,
                                             const DatasetManifest& manifest) {
    SubsetOutcome out;
    out.subset = {Modality::video};
    out.key = "video";
    out.head_used = "native";

    const int L = label_space(cfg.task).size();
    int spatial = cfg.spatial_dim > 0 ? cfg.spatial_dim : cfg.video.hidden;
    StubFrameSource source;
    StubSpatialExtractor extractor(spatial);
    FrameSamplingPolicy policy{cfg.max_frames};

    auto build = [&](Split split, std::vector<FrameFeatureSequence>& xs,
                     std::vector<int>& ys, int& skipped) {
        auto records = manifest.records_in(split);
        std::sort(records.begin(), records.end(),
                  [](const UtteranceRecord* a, const UtteranceRecord* b) {
                      return a->utterance_id < b->utterance_id;
                  });
        for (const auto* r : records) {
            auto label = r->label_for(cfg.task);
            if (!label || !r->video_ref) {
                ++skipped;
                continue;
            }
            auto frames = sample_frames(*r->video_ref, source, policy);
            xs.push_back(spatial_features(r->utterance_id, frames, extractor));
            ys.push_back(*label);
        }
    };
    std::vector<FrameFeatureSequence> train_x, dev_x, test_x;
    std::vector<int> train_y, dev_y, test_y;
    int skipped = 0;
    build(Split::train, train_x, train_y, skipped);
    build(Split::dev, dev_x, dev_y, skipped);
    out.skipped_null_test = 0;
    build(Split::test, test_x, test_y, out.skipped_null_test);
    if (train_x.empty()) {
        out.failed = true;
        out.reason = "no usable video training records";
        return out;
    }

    VideoModel model(spatial, cfg.video, L, derive_seed(cfg.seed, "model:video-native"));
    TrainOutput t = train_model(model, train_x, train_y, dev_x, dev_y, cfg.train, L);
    out.history = t.history;
    out.best_dev_accuracy = t.best_dev_accuracy;
    out.best_epoch = t.best_epoch;

    nlohmann::json header;
    header["kind"] = "video";
    header["head"] = "native";
    header["task"] = std::string(to_string(cfg.task));
    header["video"] = video_config_json(cfg.video, spatial, cfg.max_frames);
    header["train"] = train_config_echo(cfg.train);
    header["model_seed_tag"] = "model:video-native";

    out.checkpoint_file = "checkpoint-video-native.ckpt";
    auto ckpt_path = std::filesystem::path(cfg.out_dir) / out.checkpoint_file;
    save_checkpoint(ckpt_path, header, flatten_params(model));
    Checkpoint loaded = load_checkpoint(ckpt_path);
    restore_params(loaded.params, model);

    EvalReport rep = evaluate_model(model, test_x, test_y, L);
    out.accuracy = rep.accuracy;
    out.n = rep.n_examples;
    return out;
}

// Native face row: stub face-track provider feeds the recurrent encoder;
// empty tracks are skipped (they carry no frames to encode).
inline SubsetOutcome run_subset_native_face(const RunConfig& cfg,
                                            const DatasetManifest& manifest) {
    SubsetOutcome out;
    out.subset = {Modality::face};
    out.key = "face";
    out.head_used = "native";

    const int L = label_space(cfg.task).size();
    StubFaceTrackProvider provider(cfg.face_frames, cfg.face_dim);

    auto build = [&](Split split, std::vector<Mat>& xs, std::vector<int>& ys,
                     int& skipped) {
        auto records = manifest.records_in(split);
        std::sort(records.begin(), records.end(),
                  [](const UtteranceRecord* a, const UtteranceRecord* b) {
                      return a->utterance_id < b->utterance_id;
                  });
        for (const auto* r : records) {
            auto label = r->label_for(cfg.task);
            if (!label) {
                ++skipped;
                continue;
            }
            FaceTrack track = acquire_face_track(*r, provider);
            if (track.empty()) {
                ++skipped;
                continue;
            }
            xs.push_back(track.face_frames);
            ys.push_back(*label);
        }
    };
    std::vector<Mat> train_x, dev_x, test_x;
    std::vector<int> train_y, dev_y, test_y;
    int skipped = 0;
    build(Split::train, train_x, train_y, skipped);
    build(Split::dev, dev_x, dev_y, skipped);
    out.skipped_null_test = 0;
    build(Split::test, test_x, test_y, out.skipped_null_test);
    if (train_x.empty()) {
        out.failed = true;
        out.reason = "no usable face training records";
        return out;
    }

    FacialModel model(cfg.face_dim, cfg.facial, L,
                      derive_seed(cfg.seed, "model:face-native"));
    TrainOutput t = train_model(model, train_x, train_y, dev_x, dev_y, cfg.train, L);
    out.history = t.history;
    out.best_dev_accuracy = t.best_dev_accuracy;
    out.best_epoch = t.best_epoch;

    nlohmann::json header;
    header["kind"] = "facial";
    header["head"] = "native";
    header["task"] = std::string(to_string(cfg.task));
    header["facial"] = facial_config_json(cfg.facial, cfg.face_dim, cfg.face_frames);
    header["train"] = train_config_echo(cfg.train);
    header["model_seed_tag"] = "model:face-native";

    out.checkpoint_file = "checkpoint-face-native.ckpt";
    auto ckpt_path = std::filesystem::path(cfg.out_dir) / out.checkpoint_file;
    save_checkpoint(ckpt_path, header, flatten_params(model));
    Checkpoint loaded = load_checkpoint(ckpt_path);
    restore_params(loaded.params, model);

    EvalReport rep = evaluate_model(model, test_x, test_y, L);
    out.accuracy = rep.accuracy;
    out.n = rep.n_examples;
    return out;
}

} // namespace detail

// Runs one subset under the configured head mode. The native head exists
// only for single-modality video/face rows; anything else uses the shared
// fusion path (and says so in the outcome).
inline SubsetOutcome run_subset(const RunConfig& cfg, const DatasetManifest& manifest,
                                const EmbeddingCache& cache,
                                const std::vector<Modality>& subset) {
    if (cfg.head == "native" && subset.size() == 1) {
        if (subset[0] == Modality::video) {
            return detail::run_subset_native_video(cfg, manifest);
        }
        if (subset[0] == Modality::face) {
            return detail::run_subset_native_face(cfg, manifest);
        }
    }
    return detail::run_subset_shared(cfg, manifest, cache, subset);
}

// --- ablation -------------------------------------------------------------

inline nlohmann::json ablation_to_json(const RunConfig& cfg,
                                       std::vector<SubsetOutcome> outcomes) {
    // ascending accuracy, failed rows last, key as the total tie-break
    std::sort(outcomes.begin(), outcomes.end(),
              [](const SubsetOutcome& a, const SubsetOutcome& b) {
                  if (a.failed != b.failed) return !a.failed;
                  if (!a.failed && a.accuracy != b.accuracy) {
                      return a.accuracy < b.accuracy;
                  }
                  return a.key < b.key;
              });
    nlohmann::json j;
    j["task"] = std::string(to_string(cfg.task));
    j["seed"] = cfg.seed;
    j["producer"] = cfg.producer;
    j["head"] = cfg.head;
    j["l2_normalize"] = cfg.l2_normalize;
    j["train"] = detail::train_config_echo(cfg.train);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& o : outcomes) {
        nlohmann::json row;
        row["subset"] = o.key;
        nlohmann::json mods = nlohmann::json::array();
        for (Modality m : o.subset) mods.push_back(std::string(to_string(m)));
        row["modalities"] = mods;
        row["head"] = o.head_used;
        row["failed"] = o.failed;
        if (o.failed) {
            row["reason"] = o.reason;
            row["accuracy"] = nullptr;
            row["n"] = 0;
        } else {
            row["accuracy"] = o.accuracy;
            row["accuracy_pct"] = format_pct(o.accuracy);
            row["n"] = o.n;
            row["best_dev_accuracy"] = o.best_dev_accuracy;
            row["best_epoch"] = o.best_epoch;
            row["checkpoint"] = o.checkpoint_file;
        }
        row["skipped_null_labels"] = o.skipped_null_test;
        row["cache_miss_rate"] = o.miss_rate;
        rows.push_back(row);
    }
    j["rows"] = rows;
    if (cfg.reference_paper) {
        nlohmann::json ref;
        ref["label"] = kReferenceLabel;
        nlohmann::json values;
        for (const auto& [key, acc] : reference_accuracies(cfg.task)) {
            values[key] = acc;
        }
        ref["values"] = values;
        j["reference"] = ref;
    }
    return j;
}

// CSV rendering of an ablation result: header then one row per subset in
// stored (ascending-accuracy) order. Failed rows leave accuracy_pct empty.
inline std::string render_ablation_csv(const nlohmann::json& ablation) {
    std::string out = "subset,accuracy_pct,n\n";
    for (const auto& row : ablation.at("rows")) {
        out += row.at("subset").get<std::string>();
        out += ',';
        if (!row.at("failed").get<bool>()) {
            out += row.at("accuracy_pct").get<std::string>();
        }
        out += ',';
        out += std::to_string(row.at("n").get<int>());
        out += '\n';
    }
    return out;
}

inline std::string render_ablation_report(const nlohmann::json& ablation) {
    std::string out;
    out += "Task: " + ablation.at("task").get<std::string>();
    out += "   seed: " + std::to_string(ablation.at("seed").get<uint64_t>());
    out += "   head: " + ablation.at("head").get<std::string>() + "\n\n";
    char line[128];
    std::snprintf(line, sizeof(line), "%-28s %12s %8s\n", "subset", "accuracy(%)", "n");
    out += line;
    for (const auto& row : ablation.at("rows")) {
        if (row.at("failed").get<bool>()) {
            std::snprintf(line, sizeof(line), "%-28s %12s %8s  (%s)\n",
                          row.at("subset").get<std::string>().c_str(), "failed", "-",
                          row.at("reason").get<std::string>().c_str());
        } else {
            std::snprintf(line, sizeof(line), "%-28s %12s %8d\n",
                          row.at("subset").get<std::string>().c_str(),
                          row.at("accuracy_pct").get<std::string>().c_str(),
                          row.at("n").get<int>());
        }
        out += line;
    }
    if (ablation.contains("reference")) {
        const auto& ref = ablation.at("reference");
        out += "\n" + ref.at("label").get<std::string>() + ":\n";
        for (const auto& [key, value] : ref.at("values").items()) {
            std::snprintf(line, sizeof(line), "%-28s %12s\n", key.c_str(),
                          format_pct(value.get<double>()).c_str());
            out += line;
        }
    }
    return out;
}

struct AblationFiles {
    std::filesystem::path json;
    std::filesystem::path csv;
    std::filesystem::path report;
};

// Trains and scores every configured subset, writes ablation.json /
// ablation.csv / report.txt plus per-subset history files, and returns the
// machine-readable result.
inline nlohmann::json run_ablation(const RunConfig& cfg, AblationFiles* files = nullptr) {
    if (cfg.manifest_path.empty()) throw ConfigError("manifest path not set");
    if (cfg.cache_dir.empty()) throw ConfigError("cache directory not set");
    if (cfg.out_dir.empty()) throw ConfigError("output directory not set");
    DatasetManifest manifest = load_manifest(cfg.manifest_path);
    EmbeddingCache cache{std::filesystem::path(cfg.cache_dir)};
    std::filesystem::create_directories(cfg.out_dir);

    std::vector<SubsetOutcome> outcomes;
    for (const auto& subset : cfg.subsets) {
        SubsetOutcome o = run_subset(cfg, manifest, cache, subset);
        write_history(std::filesystem::path(cfg.out_dir) / ("history-" + o.key + ".jsonl"),
                      o.history);
        outcomes.push_back(std::move(o));
    }
    nlohmann::json result = ablation_to_json(cfg, std::move(outcomes));

    AblationFiles out;
    out.json = std::filesystem::path(cfg.out_dir) / "ablation.json";
    out.csv = std::filesystem::path(cfg.out_dir) / "ablation.csv";
    out.report = std::filesystem::path(cfg.out_dir) / "report.txt";
    {
        std::ofstream f(out.json, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + out.json.string());
        f << result.dump(2) << "\n";
    }
    {
        std::ofstream f(out.csv, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + out.csv.string());
        f << render_ablation_csv(result);
    }
    {
        std::ofstream f(out.report, std::ios::binary | std::ios::trunc);
        if (!f) throw Error("cannot write " + out.report.string());
        f << render_ablation_report(result);
    }
    if (files) *files = out;
    return result;
}

// --- standalone evaluation ------------------------------------------------

inline nlohmann::json eval_report_to_json(const EvalReport& rep, Task task) {
    const LabelSpace& space = label_space(task);
    nlohmann::json j;
    j["accuracy"] = rep.accuracy;
    j["accuracy_pct"] = format_pct(rep.accuracy);
    j["n_examples"] = rep.n_examples;
    j["skipped_null_labels"] = rep.skipped_null_labels;
    nlohmann::json per_class;
    for (int c = 0; c < space.size(); ++c) {
        per_class[space.name(c)] = {{"precision", rep.precision[static_cast<size_t>(c)]},
                                    {"recall", rep.recall[static_cast<size_t>(c)]}};
    }
    j["per_class"] = per_class;
    nlohmann::json confusion = nlohmann::json::array();
    for (Eigen::Index r = 0; r < rep.confusion.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < rep.confusion.cols(); ++c) {
            row.push_back(static_cast<int>(rep.confusion(r, c)));
        }
        confusion.push_back(row);
    }
    j["confusion"] = confusion;
    return j;
}

// Rebuilds the model a checkpoint describes and scores it on one split.
// The checkpoint header carries everything needed to validate inputs
// (task, subset, dims, producer) so a mismatched cache fails loudly.
inline nlohmann::json evaluate_checkpoint(const std::filesystem::path& ckpt_path,
                                          const DatasetManifest& manifest, Split split,
                                          const std::filesystem::path& cache_dir) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    std::string kind = ckpt.header.value("kind", "");
    auto task = parse_task(ckpt.header.value("task", ""));
    if (!task) throw FormatError("checkpoint missing task: " + ckpt_path.string());
    const int L = label_space(*task).size();
    EvalReport rep;

    if (kind == "fusion") {
        std::vector<Modality> subset;
        for (const auto& name : ckpt.header.at("subset")) {
            auto m = parse_modality(name.get<std::string>());
            if (!m) throw FormatError("bad modality in checkpoint header");
            subset.push_back(*m);
        }
        std::map<Modality, int> dims;
        for (const auto& [name, d] : ckpt.header.at("dims").items()) {
            auto m = parse_modality(name);
            if (!m) throw FormatError("bad modality in checkpoint dims");
            dims[*m] = d.get<int>();
        }
        std::vector<int> widths;
        for (const auto& w : ckpt.header.at("mlp_widths")) widths.push_back(w.get<int>());
        EmbeddingCache cache{cache_dir};
        FeatureSet data = assemble_features(manifest, split, subset, cache,
                                            ckpt.header.value("producer", ""), dims,
                                            ckpt.header.value("l2_normalize", false),
                                            *task);
        FeatureClassifier model(widths, 0);
        restore_params(ckpt.params, model);
        rep = evaluate_model(model, data.x, data.y, L);
        rep.skipped_null_labels = data.skipped_null;
    } else if (kind == "video") {
        const auto& vc = ckpt.header.at("video");
        TemporalEncoderConfig cfg;
        cfg.num_layers = vc.at("num_layers").get<int>();
        cfg.num_heads = vc.at("num_heads").get<int>();
        cfg.hidden = vc.at("hidden").get<int>();
        cfg.attention_window = vc.at("attention_window").get<int>();
        cfg.ffn_multiplier = vc.at("ffn_multiplier").get<int>();
        cfg.dropout = vc.at("dropout").get<double>();
        int spatial = vc.at("spatial_dim").get<int>();
        FrameSamplingPolicy policy{vc.at("max_frames").get<int>()};
        StubFrameSource source;
        StubSpatialExtractor extractor(spatial);
        std::vector<FrameFeatureSequence> xs;
        std::vector<int> ys;
        int skipped = 0;
        auto records = manifest.records_in(split);
        std::sort(records.begin(), records.end(),
                  [](const UtteranceRecord* a, const UtteranceRecord* b) {
                      return a->utterance_id < b->utterance_id;
                  });
        for (const auto* r : records) {
            auto label = r->label_for(*task);
            if (!label || !r->video_ref) {
                ++skipped;
                continue;
            }
            auto frames = sample_frames(*r->video_ref, source, policy);
            xs.push_back(spatial_features(r->utterance_id, frames, extractor));
            ys.push_back(*label);
        }
        VideoModel model(spatial, cfg, L, 0);
        restore_params(ckpt.params, model);
        rep = evaluate_model(model, xs, ys, L);
        rep.skipped_null_labels = skipped;
    } else if (kind == "facial") {
        const auto& fc = ckpt.header.at("facial");
        FacialModelConfig cfg;
        cfg.recurrent_hidden = fc.at("recurrent_hidden").get<int>();
        cfg.attention_dim = fc.at("attention_dim").get<int>();
        cfg.dropout = fc.at("dropout").get<double>();
        int face_dim = fc.at("face_dim").get<int>();
        StubFaceTrackProvider provider(fc.at("face_frames").get<int>(), face_dim);
        std::vector<Mat> xs;
        std::vector<int> ys;
        int skipped = 0;
        auto records = manifest.records_in(split);
        std::sort(records.begin(), records.end(),
                  [](const UtteranceRecord* a, const UtteranceRecord* b) {
                      return a->utterance_id < b->utterance_id;
                  });
        for (const auto* r : records) {
            auto label = r->label_for(*task);
            if (!label) {
                ++skipped;
                continue;
            }
            FaceTrack track = acquire_face_track(*r, provider);
            if (track.empty()) {
                ++skipped;
                continue;
            }
            xs.push_back(track.face_frames);
            ys.push_back(*label);
        }
        FacialModel model(face_dim, cfg, L, 0);
        restore_params(ckpt.params, model);
        rep = evaluate_model(model, xs, ys, L);
        rep.skipped_null_labels = skipped;
    } else {
        throw FormatError("unknown checkpoint kind \"" + kind + "\" in " +
                          ckpt_path.string());
    }

    nlohmann::json j = eval_report_to_json(rep, *task);
    j["split"] = std::string(to_string(split));
    j["checkpoint"] = ckpt_path.filename().string();
    j["task"] = std::string(to_string(*task));
    return j;
}

} // namespace mmfuse
