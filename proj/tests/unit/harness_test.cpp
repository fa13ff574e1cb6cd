#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "mmfuse/harness.hpp"
#include "support/tmpdir.hpp"

using namespace mmfuse;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

std::string slurp_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Embedding emb(Modality m, std::vector<float> values) {
    Embedding e;
    e.modality = m;
    e.producer_id = "p";
    e.values = std::move(values);
    return e;
}

UtteranceRecord record(const std::string& id, Split split, int emo) {
    UtteranceRecord r;
    r.utterance_id = id;
    r.dialogue_id = "d";
    r.speaker = "s";
    r.text = "hi";
    r.split = split;
    if (emo >= 0) r.emotion_label = emo;
    return r;
}

SubsetOutcome ok_row(std::vector<Modality> subset, double acc, int n) {
    SubsetOutcome o;
    o.subset = subset;
    o.key = subset_key(subset);
    o.accuracy = acc;
    o.n = n;
    o.best_dev_accuracy = acc;
    o.best_epoch = 0;
    o.checkpoint_file = "checkpoint-" + o.key + ".ckpt";
    return o;
}

// A small, fast end-to-end configuration over synthetic data.
struct AblationFixture {
    TempDir tmp;
    RunConfig cfg;

    explicit AblationFixture(std::vector<std::vector<Modality>> subsets) {
        SynthConfig synth;
        synth.task = Task::sentiment;
        synth.n_train = 60;
        synth.n_dev = 15;
        synth.n_test = 30;
        synth.dims = {{Modality::text, 8},
                      {Modality::voice, 8},
                      {Modality::face, 8},
                      {Modality::video, 8}};
        synth.seed = 9;
        EmbeddingCache cache(tmp / "cache");
        DatasetManifest manifest = generate_synth(synth, cache);
        write_manifest_jsonl(manifest, tmp / "manifest.jsonl");

        cfg.task = Task::sentiment;
        cfg.subsets = std::move(subsets);
        cfg.manifest_path = (tmp / "manifest.jsonl").string();
        cfg.cache_dir = (tmp / "cache").string();
        cfg.out_dir = (tmp / "out").string();
        cfg.seed = 9;
        cfg.train.max_epochs = 2;
        cfg.mlp.hidden_sizes = {16};
        cfg.finalize();
    }
};

} // namespace

TEST_CASE("percent formatting rounds half-way cases to even") {
    CHECK(format_pct(0.66365) == "66.36");
    CHECK(format_pct(0.5) == "50.00");
    CHECK(format_pct(0.0) == "0.00");
    CHECK(format_pct(1.0) == "100.00");
    CHECK(format_pct(0.6636) == "66.36");
    CHECK(format_pct(0.7215) == "72.15");
    CHECK(format_pct(0.2261) == "22.61");
    CHECK(format_pct(0.009) == "0.90");
    CHECK_THROWS_AS(format_pct(-0.1), Error);
    CHECK_THROWS_AS(format_pct(std::numeric_limits<double>::quiet_NaN()), Error);
}

TEST_CASE("subset parsing canonicalizes order and trims whitespace") {
    CHECK(parse_subset("text") == std::vector<Modality>{Modality::text});
    CHECK(parse_subset("voice,text") ==
          (std::vector<Modality>{Modality::text, Modality::voice}));
    CHECK(parse_subset("  face , video ") ==
          (std::vector<Modality>{Modality::face, Modality::video}));
    CHECK(parse_subset("video,face,voice,text").size() == 4);

    CHECK_THROWS_AS(parse_subset("text,audio"), ConfigError);
    CHECK_THROWS_AS(parse_subset("text,text"), ConfigError);
    CHECK_THROWS_AS(parse_subset(""), ConfigError);
    CHECK_THROWS_AS(parse_subset(",,"), ConfigError);
}

TEST_CASE("subset keys join the canonical order with plus signs") {
    CHECK(subset_key({Modality::text}) == "text");
    CHECK(subset_key({Modality::video, Modality::text}) == "text+video");
    CHECK(subset_key({Modality::text, Modality::voice, Modality::face,
                      Modality::video}) == "text+voice+face+video");
    CHECK(subset_key(parse_subset("face,voice")) == "voice+face");
}

TEST_CASE("published reference accuracies are present and labeled") {
    const auto& emo = reference_accuracies(Task::emotion);
    REQUIRE(emo.size() == 9);
    CHECK(emo.at("text") == 0.6434);
    CHECK(emo.at("face") == 0.2261);
    CHECK(emo.at("text+voice+face+video") == 0.6636);

    const auto& sen = reference_accuracies(Task::sentiment);
    REQUIRE(sen.size() == 9);
    CHECK(sen.at("voice") == 0.5620);
    CHECK(sen.at("voice+face+video") == 0.4958);
    CHECK(sen.at("text+voice+face+video") == 0.7215);

    CHECK(std::string(kReferenceLabel) == "reference, not reproduced");
}

TEST_CASE("config assignments cover every documented key") {
    RunConfig cfg;
    apply_config_kv(cfg, "task", "sentiment");
    CHECK(cfg.task == Task::sentiment);
    apply_config_kv(cfg, "seed", "42");
    CHECK(cfg.seed == 42);
    apply_config_kv(cfg, "subsets", "text; voice,face");
    REQUIRE(cfg.subsets.size() == 2);
    CHECK(cfg.subsets[1] == (std::vector<Modality>{Modality::voice, Modality::face}));
    apply_config_kv(cfg, "mlp_hidden", "64, 32");
    CHECK(cfg.mlp.hidden_sizes == std::vector<int>{64, 32});
    apply_config_kv(cfg, "mlp_dropout", "0.25");
    CHECK(cfg.mlp.dropout == 0.25);
    apply_config_kv(cfg, "dims", "text:8, video:12");
    CHECK(cfg.dims.at(Modality::text) == 8);
    CHECK(cfg.dims.at(Modality::video) == 12);
    apply_config_kv(cfg, "l2_normalize", "true");
    CHECK(cfg.l2_normalize);
    apply_config_kv(cfg, "batch_size", "8");
    CHECK(cfg.train.batch_size == 8);
    apply_config_kv(cfg, "max_epochs", "3");
    CHECK(cfg.train.max_epochs == 3);
    apply_config_kv(cfg, "max_steps", "100");
    CHECK(cfg.train.max_steps == 100);
    apply_config_kv(cfg, "max_steps", "none");
    CHECK_FALSE(cfg.train.max_steps.has_value());
    apply_config_kv(cfg, "lr", "0.01");
    CHECK(cfg.train.lr == 0.01);
    apply_config_kv(cfg, "weight_decay", "0.001");
    CHECK(cfg.train.weight_decay == 0.001);
    apply_config_kv(cfg, "head", "native");
    CHECK(cfg.head == "native");
    apply_config_kv(cfg, "miss_threshold", "0.5");
    CHECK(cfg.miss_threshold == 0.5);
    apply_config_kv(cfg, "reference", "paper");
    CHECK(cfg.reference_paper);
    apply_config_kv(cfg, "reference", "none");
    CHECK_FALSE(cfg.reference_paper);
    apply_config_kv(cfg, "video_layers", "3");
    CHECK(cfg.video.num_layers == 3);
    apply_config_kv(cfg, "facial_hidden", "128");
    CHECK(cfg.facial.recurrent_hidden == 128);
    apply_config_kv(cfg, "max_frames", "16");
    CHECK(cfg.max_frames == 16);
}

TEST_CASE("config assignments reject bad values and unknown keys") {
    RunConfig cfg;
    CHECK_THROWS_AS(apply_config_kv(cfg, "task", "mood"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "batch_size", "four"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "lr", "1e-3x"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "l2_normalize", "yes"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "reference", "maybe"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "dims", "text=8"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "dims", "smell:8"), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "subsets", " ; "), ConfigError);
    CHECK_THROWS_AS(apply_config_kv(cfg, "no_such_key", "1"), ConfigError);
}

TEST_CASE("config files apply in order with comments ignored") {
    TempDir tmp;
    fs::path path = tmp / "run.conf";
    {
        std::ofstream out(path);
        out << "# experiment defaults\n"
            << "\n"
            << "task = sentiment\n"
            << "lr = 0.1\n"
            << "lr = 0.2\n"
            << "  seed=7  \n";
    }
    RunConfig cfg;
    apply_config_file(cfg, path);
    CHECK(cfg.task == Task::sentiment);
    CHECK(cfg.train.lr == 0.2); // later line wins
    CHECK(cfg.seed == 7);

    // flags applied after the file override it
    apply_config_kv(cfg, "lr", "0.5");
    CHECK(cfg.train.lr == 0.5);
}

TEST_CASE("config file errors carry the file and line number") {
    TempDir tmp;
    fs::path path = tmp / "run.conf";
    {
        std::ofstream out(path);
        out << "task = emotion\n"
            << "seed = 1\n"
            << "lr = banana\n";
    }
    RunConfig cfg;
    CHECK_THROWS_WITH(apply_config_file(cfg, path),
                      Catch::Matchers::ContainsSubstring(":3:") &&
                          Catch::Matchers::ContainsSubstring("lr"));

    {
        std::ofstream out(path);
        out << "just words\n";
    }
    CHECK_THROWS_WITH(apply_config_file(cfg, path),
                      Catch::Matchers::ContainsSubstring(":1:"));

    CHECK_THROWS_AS(apply_config_file(cfg, tmp / "absent.conf"), ConfigError);
}

TEST_CASE("finalize fills in the default subset list") {
    RunConfig cfg;
    cfg.finalize();
    REQUIRE(cfg.subsets.size() == 5); // one per modality plus all four
    CHECK(subset_key(cfg.subsets[0]) == "text");
    CHECK(subset_key(cfg.subsets[3]) == "video");
    CHECK(subset_key(cfg.subsets[4]) == "text+voice+face+video");
    CHECK(cfg.train.task == cfg.task);
    CHECK(cfg.train.seed == cfg.seed);
}

TEST_CASE("finalize rejects inconsistent configurations") {
    RunConfig cfg;
    cfg.head = "detached";
    CHECK_THROWS_AS(cfg.finalize(), ConfigError);

    cfg = RunConfig{};
    cfg.miss_threshold = 1.5;
    CHECK_THROWS_AS(cfg.finalize(), ConfigError);

    cfg = RunConfig{};
    cfg.subsets = {{Modality::text}, {Modality::text}};
    CHECK_THROWS_AS(cfg.finalize(), ConfigError);

    cfg = RunConfig{};
    cfg.train.batch_size = 0;
    CHECK_THROWS_AS(cfg.finalize(), ConfigError);
}

TEST_CASE("explicit dims win over cache probing") {
    TempDir tmp;
    EmbeddingCache cache(tmp / "cache");
    cache.put(CacheKey{"u1", Modality::text, "p"}, emb(Modality::text, {1, 2, 3}));
    cache.write_index("p");

    RunConfig cfg;
    cfg.producer = "p";
    auto probed = resolve_dims(cfg, cache, {Modality::text});
    CHECK(probed.at(Modality::text) == 3);

    cfg.dims[Modality::text] = 7;
    auto configured = resolve_dims(cfg, cache, {Modality::text});
    CHECK(configured.at(Modality::text) == 7);

    CHECK_THROWS_AS(resolve_dims(cfg, cache, {Modality::voice}), ConfigError);

    cfg.dims[Modality::voice] = 0;
    CHECK_THROWS_AS(resolve_dims(cfg, cache, {Modality::voice}), ConfigError);
}

TEST_CASE("feature assembly sorts by id, zero-fills misses, skips null labels") {
    TempDir tmp;
    EmbeddingCache cache(tmp / "cache");
    DatasetManifest manifest;
    manifest.records = {
        record("b", Split::train, 2),
        record("a", Split::train, 1),
        record("c", Split::train, -1), // no emotion label
        record("d", Split::dev, 0),    // other split, ignored here
    };
    cache.put(CacheKey{"a", Modality::text, "p"}, emb(Modality::text, {1, 2}));
    cache.put(CacheKey{"a", Modality::voice, "p"}, emb(Modality::voice, {3, 4, 5}));
    cache.put(CacheKey{"b", Modality::text, "p"}, emb(Modality::text, {6, 7}));
    // b.voice deliberately missing

    std::map<Modality, int> dims{{Modality::text, 2}, {Modality::voice, 3}};
    FeatureSet feats = assemble_features(manifest, Split::train,
                                         {Modality::text, Modality::voice}, cache, "p",
                                         dims, false, Task::emotion);
    CHECK(feats.width == 5);
    REQUIRE(feats.ids == std::vector<std::string>{"a", "b"});
    CHECK(feats.y == std::vector<int>{1, 2});
    CHECK(feats.skipped_null == 1);
    CHECK(feats.total_pairs == 4);
    CHECK(feats.missing_pairs == 1);

    REQUIRE(feats.x.size() == 2);
    CHECK(feats.x[0](0) == 1.0);
    CHECK(feats.x[0](4) == 5.0);
    CHECK(feats.x[1](1) == 7.0); // b.text present
    CHECK(feats.x[1](2) == 0.0); // b.voice zero-filled
    CHECK(feats.x[1](3) == 0.0);
    CHECK(feats.x[1](4) == 0.0);
}

TEST_CASE("ablation rows sort by ascending accuracy with failures last") {
    RunConfig cfg;
    cfg.finalize();

    SubsetOutcome failed;
    failed.subset = {Modality::video};
    failed.key = "video";
    failed.failed = true;
    failed.reason = "no labeled training records";

    std::vector<SubsetOutcome> outcomes{
        ok_row({Modality::text}, 0.7, 100),
        ok_row({Modality::voice}, 0.5, 100),
        failed,
        ok_row({Modality::face}, 0.5, 100),
    };
    nlohmann::json j = ablation_to_json(cfg, outcomes);

    REQUIRE(j["rows"].size() == 4);
    // equal accuracies tie-break on key: "face" < "voice"
    CHECK(j["rows"][0]["subset"] == "face");
    CHECK(j["rows"][1]["subset"] == "voice");
    CHECK(j["rows"][2]["subset"] == "text");
    CHECK(j["rows"][3]["subset"] == "video");
    CHECK(j["rows"][3]["failed"] == true);
    CHECK(j["rows"][3]["accuracy"].is_null());
    CHECK(j["rows"][3]["reason"] == "no labeled training records");
    CHECK(j["rows"][3]["n"] == 0);

    CHECK(j["rows"][2]["accuracy"] == 0.7);
    CHECK(j["rows"][2]["accuracy_pct"] == "70.00");
    CHECK(j["rows"][2]["modalities"] == nlohmann::json::array({"text"}));
    CHECK(j["rows"][2]["checkpoint"] == "checkpoint-text.ckpt");
    CHECK(j["task"] == "emotion");
    CHECK_FALSE(j.contains("reference"));
}

TEST_CASE("the reference block appears only on request") {
    RunConfig cfg;
    cfg.reference_paper = true;
    cfg.finalize();
    nlohmann::json j = ablation_to_json(cfg, {ok_row({Modality::text}, 0.6, 10)});
    REQUIRE(j.contains("reference"));
    CHECK(j["reference"]["label"] == "reference, not reproduced");
    CHECK(j["reference"]["values"].size() == 9);
    CHECK(j["reference"]["values"]["text"] == 0.6434);
}

TEST_CASE("csv rendering is exact") {
    RunConfig cfg;
    cfg.finalize();
    SubsetOutcome failed;
    failed.subset = {Modality::face};
    failed.key = "face";
    failed.failed = true;
    failed.reason = "x";
    nlohmann::json j = ablation_to_json(
        cfg, {ok_row({Modality::text}, 0.66365, 280), failed,
              ok_row({Modality::text, Modality::voice}, 0.25, 4)});
    CHECK(render_ablation_csv(j) ==
          "subset,accuracy_pct,n\n"
          "text+voice,25.00,4\n"
          "text,66.36,280\n"
          "face,,0\n");
}

TEST_CASE("the text report lines up columns and appends references") {
    RunConfig cfg;
    cfg.seed = 3;
    cfg.reference_paper = true;
    cfg.finalize();
    nlohmann::json j = ablation_to_json(cfg, {ok_row({Modality::text}, 0.5, 10)});
    std::string report = render_ablation_report(j);

    auto padl = [](const std::string& s, size_t w) {
        return std::string(w > s.size() ? w - s.size() : 0, ' ') + s;
    };
    auto padr = [](const std::string& s, size_t w) {
        return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
    };
    CHECK(report.find("Task: emotion   seed: 3   head: shared\n") != std::string::npos);
    CHECK(report.find(padr("subset", 28) + " " + padl("accuracy(%)", 12) + " " +
                      padl("n", 8) + "\n") != std::string::npos);
    CHECK(report.find(padr("text", 28) + " " + padl("50.00", 12) + " " + padl("10", 8) +
                      "\n") != std::string::npos);
    CHECK(report.find("reference, not reproduced:\n") != std::string::npos);
    CHECK(report.find(padr("text+voice+face+video", 28) + " " + padl("66.36", 12) +
                      "\n") != std::string::npos);
}

TEST_CASE("a full ablation writes all artifacts and is rerun-identical") {
    AblationFixture fx({{Modality::text}, {Modality::text, Modality::voice}});
    nlohmann::json first = run_ablation(fx.cfg);

    REQUIRE(first["rows"].size() == 2);
    for (const auto& row : first["rows"]) {
        CHECK(row["failed"] == false);
        CHECK(row["n"] == 30);
        CHECK(row["cache_miss_rate"] == 0.0);
    }
    fs::path out = fs::path(fx.cfg.out_dir);
    CHECK(fs::exists(out / "ablation.json"));
    CHECK(fs::exists(out / "ablation.csv"));
    CHECK(fs::exists(out / "report.txt"));
    CHECK(fs::exists(out / "checkpoint-text.ckpt"));
    CHECK(fs::exists(out / "checkpoint-text+voice.ckpt"));
    CHECK(fs::exists(out / "history-text.jsonl"));

    // history carries one json line per epoch with finite losses
    std::ifstream hist(out / "history-text.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(hist, line)) {
        auto h = nlohmann::json::parse(line);
        CHECK(h.contains("epoch"));
        CHECK(h["train_loss"].is_number());
        CHECK(h.contains("dev_accuracy"));
        ++lines;
    }
    CHECK(lines == 2);

    std::string json_bytes = slurp_text(out / "ablation.json");
    CHECK(json_bytes.back() == '\n');

    // a rerun into a fresh output directory reproduces ablation.json exactly
    AblationFixture fx2({{Modality::text}, {Modality::text, Modality::voice}});
    run_ablation(fx2.cfg);
    CHECK(slurp_text(fs::path(fx2.cfg.out_dir) / "ablation.json") == json_bytes);

    // and the csv matches a re-render of the stored json
    CHECK(slurp_text(out / "ablation.csv") ==
          render_ablation_csv(nlohmann::json::parse(json_bytes)));
}

TEST_CASE("excessive cache misses fail the subset rather than training on zeros") {
    AblationFixture fx({{Modality::voice}});
    fx.cfg.cache_dir = (fx.tmp / "empty-cache").string(); // nothing in it
    fx.cfg.dims[Modality::voice] = 8;                     // skip probing
    nlohmann::json j = run_ablation(fx.cfg);
    REQUIRE(j["rows"].size() == 1);
    CHECK(j["rows"][0]["failed"] == true);
    CHECK(j["rows"][0]["cache_miss_rate"] == 1.0);
    std::string reason = j["rows"][0]["reason"].get<std::string>();
    CHECK(reason.find("cache miss rate") != std::string::npos);
}

TEST_CASE("a saved checkpoint reproduces its recorded test accuracy") {
    AblationFixture fx({{Modality::text, Modality::voice}});
    nlohmann::json j = run_ablation(fx.cfg);
    REQUIRE(j["rows"].size() == 1);
    double recorded = j["rows"][0]["accuracy"].get<double>();

    DatasetManifest manifest = load_manifest(fx.cfg.manifest_path);
    nlohmann::json eval = evaluate_checkpoint(
        fs::path(fx.cfg.out_dir) / j["rows"][0]["checkpoint"].get<std::string>(),
        manifest, Split::test, fx.cfg.cache_dir);
    CHECK(eval["accuracy"].get<double>() == recorded);
    CHECK(eval["n_examples"] == 30);
    CHECK(eval["task"] == "sentiment");
    CHECK(eval["split"] == "test");
    CHECK(eval["per_class"].size() == 3);
    CHECK(eval["confusion"].size() == 3);

    // dev split scores too, just against different rows
    nlohmann::json dev = evaluate_checkpoint(
        fs::path(fx.cfg.out_dir) / "checkpoint-text+voice.ckpt", manifest, Split::dev,
        fx.cfg.cache_dir);
    CHECK(dev["n_examples"] == 15);
}

TEST_CASE("checkpoints of unknown kind are rejected at evaluation") {
    TempDir tmp;
    ParamStore store;
    store.add("w", 1, 1);
    save_checkpoint(tmp / "odd.ckpt", {{"kind", "bogus"}, {"task", "emotion"}}, store);
    DatasetManifest manifest;
    CHECK_THROWS_AS(
        evaluate_checkpoint(tmp / "odd.ckpt", manifest, Split::test, tmp.path()),
        FormatError);

    save_checkpoint(tmp / "naked.ckpt", {{"kind", "fusion"}}, store);
    CHECK_THROWS_AS(
        evaluate_checkpoint(tmp / "naked.ckpt", manifest, Split::test, tmp.path()),
        FormatError);
}
