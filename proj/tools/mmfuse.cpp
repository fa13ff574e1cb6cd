// Command-line surface for the fusion experiment framework. Subcommands
// cover the pipeline end to end: synthesize data, populate the embedding
// cache, train, evaluate, sweep modality subsets, and re-render reports.
// Every failure class maps to its own exit code (see --help footer).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmfuse/mmfuse.hpp"

namespace {

using namespace mmfuse;

constexpr int kExitOk = 0;
constexpr int kExitInternal = 1;
constexpr int kExitUsage = 2;
constexpr int kExitManifest = 3;
constexpr int kExitFormat = 4;
constexpr int kExitEncodeThreshold = 5;
constexpr int kExitTrain = 6;
constexpr int kExitReport = 7;

constexpr const char* kExitTable =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  usage or configuration error\n"
    "  3  manifest invalid (line-numbered diagnostics on stderr)\n"
    "  4  cache or checkpoint format error\n"
    "  5  encode failure rate above threshold\n"
    "  6  training or evaluation failure\n"
    "  7  report input missing or unreadable\n";

int map_exception(const std::exception& e) {
    if (auto* m = dynamic_cast<const ManifestError*>(&e)) {
        for (const auto& issue : m->issues()) {
            std::cerr << "manifest:" << issue.line << ": " << issue.message << "\n";
        }
        std::cerr << "error: " << e.what() << "\n";
        return kExitManifest;
    }
    std::cerr << "error: " << e.what() << "\n";
    if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
    if (dynamic_cast<const EncodeThresholdError*>(&e)) return kExitEncodeThreshold;
    if (dynamic_cast<const DimensionMismatchError*>(&e)) return kExitFormat;
    if (dynamic_cast<const FormatError*>(&e)) return kExitFormat;
    if (dynamic_cast<const TrainError*>(&e)) return kExitTrain;
    return kExitInternal;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        return map_exception(e);
    }
}

struct GlobalArgs {
    std::string task;
    std::string modalities;
    std::uint64_t seed = 0;
    std::string manifest;
    std::string cache;
    std::string out;
    std::string config;
    CLI::Option* task_opt = nullptr;
    CLI::Option* modalities_opt = nullptr;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* manifest_opt = nullptr;
    CLI::Option* cache_opt = nullptr;
    CLI::Option* out_opt = nullptr;
    CLI::Option* config_opt = nullptr;
};

// File config first, then global flags, then --set overrides, so the most
// specific source wins.
RunConfig build_run_config(const GlobalArgs& g, const std::vector<std::string>& sets) {
    RunConfig cfg;
    if (g.config_opt->count() > 0) apply_config_file(cfg, g.config);
    if (g.task_opt->count() > 0) apply_config_kv(cfg, "task", g.task);
    if (g.seed_opt->count() > 0) apply_config_kv(cfg, "seed", std::to_string(g.seed));
    if (g.manifest_opt->count() > 0) cfg.manifest_path = g.manifest;
    if (g.cache_opt->count() > 0) cfg.cache_dir = g.cache;
    if (g.out_opt->count() > 0) cfg.out_dir = g.out;
    if (g.modalities_opt->count() > 0) {
        cfg.subsets = {parse_subset(g.modalities)};
    }
    for (const auto& kv : sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("--set expects key=value, got \"" + kv + "\"");
        }
        apply_config_kv(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    return cfg;
}

EncoderSpec parse_encoder_spec(const std::string& text, Modality m) {
    auto colon = text.rfind(':');
    if (colon == std::string::npos || colon + 1 >= text.size()) {
        throw ConfigError("--encoder expects NAME:DIM, got \"" + text + "\"");
    }
    std::string name = text.substr(0, colon);
    int dim = 0;
    try {
        size_t used = 0;
        dim = std::stoi(text.substr(colon + 1), &used);
        if (used != text.size() - colon - 1) throw std::invalid_argument(text);
    } catch (const std::exception&) {
        throw ConfigError("encoder dim in \"" + text + "\" is not an integer");
    }
    if (dim < 1) throw ConfigError("encoder dim must be positive");
    EncoderSpec spec;
    spec.modality = m;
    spec.dim = static_cast<uint32_t>(dim);
    if (name == "stub") {
        spec.kind = EncoderKind::stub;
        spec.producer_id = "stub-" + std::to_string(dim);
    } else {
        spec.kind = EncoderKind::external_adapter;
        spec.producer_id = name;
    }
    return spec;
}

std::vector<Modality> encode_modalities(const GlobalArgs& g,
                                        const std::vector<std::string>& singles) {
    if (!singles.empty()) {
        std::string joined;
        for (const auto& s : singles) {
            if (!joined.empty()) joined += ',';
            joined += s;
        }
        return parse_subset(joined);
    }
    if (g.modalities_opt->count() > 0) return parse_subset(g.modalities);
    return {kAllModalities.begin(), kAllModalities.end()};
}

int run_encode(const GlobalArgs& g, const std::vector<std::string>& modality_args,
               const std::string& encoder_arg, const std::vector<std::string>& split_args,
               double fail_threshold) {
    if (g.manifest_opt->count() == 0) throw ConfigError("encode needs --manifest");
    if (g.cache_opt->count() == 0) throw ConfigError("encode needs --cache");
    auto modalities = encode_modalities(g, modality_args);
    std::vector<EncoderSpec> specs;
    for (Modality m : modalities) specs.push_back(parse_encoder_spec(encoder_arg, m));

    std::vector<Split> splits;
    if (split_args.empty()) {
        splits = {Split::train, Split::dev, Split::test};
    } else {
        for (const auto& s : split_args) {
            auto sp = parse_split(s);
            if (!sp) throw ConfigError("unknown split \"" + s + "\"");
            splits.push_back(*sp);
        }
    }

    DatasetManifest manifest = load_manifest(g.manifest);
    EmbeddingCache cache{std::filesystem::path(g.cache)};
    EncodePolicy policy{fail_threshold};
    for (Split split : splits) {
        EncodeReport report = encode_split(manifest, specs, split, cache, policy);
        std::cout << to_string(split) << ": " << report.summary() << "\n";
        for (const auto& [id, message] : report.errors) {
            std::cerr << "  " << id << ": " << message << "\n";
        }
    }
    return kExitOk;
}

int run_synth(const GlobalArgs& g, int n_train, int n_dev, int n_test, double noise,
              const std::string& dims_arg, const std::string& info_arg) {
    SynthConfig cfg;
    cfg.n_train = n_train;
    cfg.n_dev = n_dev;
    cfg.n_test = n_test;
    cfg.noise_scale = noise;
    cfg.seed = g.seed;
    if (g.task_opt->count() > 0) {
        auto t = parse_task(g.task);
        if (!t) throw ConfigError("unknown task \"" + g.task + "\"");
        cfg.task = *t;
    }
    auto apply_map = [](const std::string& text, auto&& put) {
        size_t pos = 0;
        while (pos <= text.size()) {
            size_t comma = text.find(',', pos);
            if (comma == std::string::npos) comma = text.size();
            std::string item = text.substr(pos, comma - pos);
            if (item.find_first_not_of(" \t") != std::string::npos) {
                auto colon = item.find(':');
                if (colon == std::string::npos) {
                    throw ConfigError("expected modality:value, got \"" + item + "\"");
                }
                std::string name = item.substr(0, colon);
                size_t a = name.find_first_not_of(" \t");
                size_t b = name.find_last_not_of(" \t");
                name = a == std::string::npos ? "" : name.substr(a, b - a + 1);
                auto m = parse_modality(name);
                if (!m) throw ConfigError("unknown modality \"" + name + "\"");
                put(*m, item.substr(colon + 1));
            }
            pos = comma + 1;
        }
    };
    if (!dims_arg.empty()) {
        apply_map(dims_arg, [&](Modality m, const std::string& v) {
            cfg.dims[m] = std::stoi(v);
        });
    }
    if (!info_arg.empty()) {
        apply_map(info_arg, [&](Modality m, const std::string& v) {
            cfg.informativeness[m] = std::stod(v);
        });
    }

    std::filesystem::path manifest_path;
    std::filesystem::path cache_dir;
    if (g.manifest_opt->count() > 0) manifest_path = g.manifest;
    if (g.cache_opt->count() > 0) cache_dir = g.cache;
    if (g.out_opt->count() > 0) {
        std::filesystem::create_directories(g.out);
        if (manifest_path.empty()) manifest_path = std::filesystem::path(g.out) / "manifest.jsonl";
        if (cache_dir.empty()) cache_dir = std::filesystem::path(g.out) / "cache";
    }
    if (manifest_path.empty() || cache_dir.empty()) {
        throw ConfigError("synth needs --out (or both --manifest and --cache)");
    }

    EmbeddingCache cache{cache_dir};
    DatasetManifest manifest = generate_synth(cfg, cache);
    write_manifest_jsonl(manifest, manifest_path);
    std::cout << "wrote " << manifest.records.size() << " records to "
              << manifest_path.string() << "\n"
              << "cache: " << cache_dir.string() << " (producer \"" << kSynthProducer
              << "\")\n";
    return kExitOk;
}

int run_train(const GlobalArgs& g, const std::vector<std::string>& sets) {
    RunConfig cfg = build_run_config(g, sets);
    if (cfg.subsets.empty()) {
        cfg.subsets = {{kAllModalities.begin(), kAllModalities.end()}};
    }
    cfg.finalize();
    if (cfg.subsets.size() != 1) {
        throw ConfigError("train runs one subset; pass --modalities or one subsets= entry");
    }
    if (cfg.manifest_path.empty()) throw ConfigError("train needs --manifest");
    if (cfg.cache_dir.empty()) throw ConfigError("train needs --cache");
    if (cfg.out_dir.empty()) throw ConfigError("train needs --out");

    DatasetManifest manifest = load_manifest(cfg.manifest_path);
    EmbeddingCache cache{std::filesystem::path(cfg.cache_dir)};
    std::filesystem::create_directories(cfg.out_dir);
    SubsetOutcome o = run_subset(cfg, manifest, cache, cfg.subsets[0]);
    write_history(std::filesystem::path(cfg.out_dir) / ("history-" + o.key + ".jsonl"),
                  o.history);
    if (o.failed) {
        throw TrainError("subset " + o.key + " failed: " + o.reason);
    }
    nlohmann::json j;
    j["subset"] = o.key;
    j["head"] = o.head_used;
    j["best_dev_accuracy"] = o.best_dev_accuracy;
    j["best_epoch"] = o.best_epoch;
    j["test_accuracy"] = o.accuracy;
    j["test_accuracy_pct"] = format_pct(o.accuracy);
    j["n_test"] = o.n;
    j["checkpoint"] = o.checkpoint_file;
    j["history"] = "history-" + o.key + ".jsonl";
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_evaluate(const GlobalArgs& g, const std::string& checkpoint,
                 const std::string& split_arg) {
    if (checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint");
    if (g.manifest_opt->count() == 0) throw ConfigError("evaluate needs --manifest");
    if (g.cache_opt->count() == 0) throw ConfigError("evaluate needs --cache");
    auto split = parse_split(split_arg);
    if (!split) throw ConfigError("unknown split \"" + split_arg + "\"");
    DatasetManifest manifest = load_manifest(g.manifest);
    nlohmann::json j = evaluate_checkpoint(checkpoint, manifest, *split, g.cache);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int run_ablate(const GlobalArgs& g, const std::vector<std::string>& sets,
               const std::string& reference) {
    RunConfig cfg = build_run_config(g, sets);
    if (!reference.empty()) apply_config_kv(cfg, "reference", reference);
    cfg.finalize();
    AblationFiles files;
    nlohmann::json result = run_ablation(cfg, &files);
    std::cout << render_ablation_report(result) << "\nwrote " << files.json.string()
              << ", " << files.csv.string() << ", " << files.report.string() << "\n";
    return kExitOk;
}

int run_report(const GlobalArgs& g, const std::string& in_arg) {
    std::filesystem::path in = in_arg;
    if (in.empty() && g.out_opt->count() > 0) {
        in = std::filesystem::path(g.out) / "ablation.json";
    }
    if (in.empty()) throw ConfigError("report needs --in (or --out with ablation.json)");
    try {
        if (!std::filesystem::exists(in)) {
            throw FormatError("no such result file: " + in.string());
        }
        std::ifstream f(in, std::ios::binary);
        nlohmann::json result = nlohmann::json::parse(f, nullptr, false);
        if (result.is_discarded() || !result.contains("rows")) {
            throw FormatError("unreadable ablation result: " + in.string());
        }
        std::string csv = render_ablation_csv(result);
        std::string text = render_ablation_report(result);
        auto dir = in.parent_path();
        {
            std::ofstream out(dir / "ablation.csv", std::ios::binary | std::ios::trunc);
            out << csv;
        }
        {
            std::ofstream out(dir / "report.txt", std::ios::binary | std::ios::trunc);
            out << text;
        }
        std::cout << text;
        return kExitOk;
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitReport;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multimodal fusion experiment framework"};
    app.footer(kExitTable);
    app.fallthrough(true);
    app.require_subcommand(0, 1);

    GlobalArgs g;
    g.task_opt = app.add_option("--task", g.task, "Task: emotion or sentiment");
    g.modalities_opt =
        app.add_option("--modalities", g.modalities,
                       "Comma-separated modality subset (text,voice,face,video)");
    g.seed_opt = app.add_option("--seed", g.seed, "Base random seed");
    g.manifest_opt = app.add_option("--manifest", g.manifest, "Dataset manifest path");
    g.cache_opt = app.add_option("--cache", g.cache, "Embedding cache directory");
    g.out_opt = app.add_option("--out", g.out, "Output directory");
    g.config_opt = app.add_option("--config", g.config,
                                  "Flat key=value config file (flags override it)");

    auto* enc = app.add_subcommand("encode", "Populate the embedding cache for a manifest");
    std::vector<std::string> enc_modalities;
    std::string enc_encoder = "stub:16";
    std::vector<std::string> enc_splits;
    double enc_threshold = 0.0;
    enc->add_option("--modality", enc_modalities, "Modality to encode (repeatable)");
    enc->add_option("--encoder", enc_encoder,
                    "Encoder spec NAME:DIM; name \"stub\" is the built-in hash encoder");
    enc->add_option("--split", enc_splits, "Split to encode (repeatable; default all)");
    enc->add_option("--fail-threshold", enc_threshold,
                    "Tolerated fraction of failed records (default 0)");

    auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset and cache");
    int synth_train = 600, synth_dev = 200, synth_test = 400;
    double synth_noise = 0.5;
    std::string synth_dims, synth_info;
    synth->add_option("--n-train", synth_train, "Training records (default 600)");
    synth->add_option("--n-dev", synth_dev, "Dev records (default 200)");
    synth->add_option("--n-test", synth_test, "Test records (default 400)");
    synth->add_option("--noise", synth_noise, "Gaussian noise scale (default 0.5)");
    synth->add_option("--dims", synth_dims, "Per-modality dims, e.g. text:24,voice:24");
    synth->add_option("--informativeness", synth_info,
                      "Per-modality label signal in [0,1], e.g. text:0.8,voice:0.5");

    auto* train = app.add_subcommand("train", "Train one classifier on a modality subset");
    std::vector<std::string> train_sets;
    train->add_option("--set", train_sets, "Config override key=value (repeatable)");

    auto* eval = app.add_subcommand("evaluate", "Score a saved checkpoint on a split");
    std::string eval_checkpoint, eval_split = "test";
    eval->add_option("--checkpoint", eval_checkpoint, "Checkpoint file to evaluate");
    eval->add_option("--split", eval_split, "Split to score (default test)");

    auto* ablate = app.add_subcommand("ablate", "Train and score every configured subset");
    std::vector<std::string> ablate_sets;
    std::string ablate_reference;
    ablate->add_option("--set", ablate_sets, "Config override key=value (repeatable)");
    ablate->add_option("--reference", ablate_reference,
                       "\"paper\" attaches published accuracies as labeled metadata");

    auto* report = app.add_subcommand("report", "Re-render reports from ablation.json");
    std::string report_in;
    report->add_option("--in", report_in, "ablation.json to render");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    if (*enc) {
        return guarded([&] {
            return run_encode(g, enc_modalities, enc_encoder, enc_splits, enc_threshold);
        });
    }
    if (*synth) {
        return guarded([&] {
            return run_synth(g, synth_train, synth_dev, synth_test, synth_noise,
                             synth_dims, synth_info);
        });
    }
    if (*train) {
        return guarded([&] { return run_train(g, train_sets); });
    }
    if (*eval) {
        return guarded([&] { return run_evaluate(g, eval_checkpoint, eval_split); });
    }
    if (*ablate) {
        return guarded([&] { return run_ablate(g, ablate_sets, ablate_reference); });
    }
    if (*report) {
        return guarded([&] { return run_report(g, report_in); });
    }
    std::cout << app.help();
    return kExitUsage;
}
