#pragma once

// Dataset manifest ingestion. Two accepted encodings:
//   - JSONL: one JSON object per line, fields exactly matching
//     UtteranceRecord, nulls explicit, labels as indices.
//   - CSV adapter: header row
//     utterance_id,dialogue_id,speaker,text,audio_ref,video_ref,
//     emotion_label,sentiment_label,split
//     where label columns hold label *names* and empty cells mean null.
// Validation reports every problem with the 1-based line it occurred on.

#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mmfuse/labels.hpp"

namespace mmfuse {

struct UtteranceRecord {
    std::string utterance_id;
    std::string dialogue_id;
    std::string speaker;
    std::string text; // always present; audio/video may be absent
    std::optional<std::string> audio_ref;
    std::optional<std::string> video_ref;
    std::optional<int> emotion_label;
    std::optional<int> sentiment_label;
    Split split = Split::train;

    std::optional<int> label_for(Task task) const {
        return task == Task::emotion ? emotion_label : sentiment_label;
    }

    bool operator==(const UtteranceRecord&) const = default;
};

struct DatasetManifest {
    std::string source_name;
    std::vector<UtteranceRecord> records;

    std::vector<const UtteranceRecord*> records_in(Split split) const {
        std::vector<const UtteranceRecord*> out;
        for (const auto& r : records) {
            if (r.split == split) out.push_back(&r);
        }
        return out;
    }

    bool operator==(const DatasetManifest&) const = default;
};

struct ManifestIssue {
    int line = 0; // 1-based; 0 for whole-file problems
    std::string message;
};

struct ManifestParse {
    DatasetManifest manifest;
    std::vector<ManifestIssue> issues;

    bool ok() const { return issues.empty(); }
};

class ManifestError : public Error {
public:
    ManifestError(std::string what, std::vector<ManifestIssue> issues)
        : Error(std::move(what)), issues_(std::move(issues)) {}
    const std::vector<ManifestIssue>& issues() const { return issues_; }

private:
    std::vector<ManifestIssue> issues_;
};

namespace detail {

inline const char* kManifestFields[] = {
    "utterance_id", "dialogue_id", "speaker",       "text",
    "audio_ref",    "video_ref",   "emotion_label", "sentiment_label",
    "split"};

// Cross-record checks shared by both parsers: id uniqueness (which also
// makes the split partition disjoint) and label ranges.
inline void check_record(const UtteranceRecord& r, int line,
                         std::set<std::string>& seen_ids,
                         std::vector<ManifestIssue>& issues) {
    if (r.utterance_id.empty()) {
        issues.push_back({line, "utterance_id must be nonempty"});
    } else if (!seen_ids.insert(r.utterance_id).second) {
        issues.push_back({line, "duplicate utterance_id \"" + r.utterance_id + "\""});
    }
    if (r.emotion_label &&
        !label_space(Task::emotion).contains(*r.emotion_label)) {
        issues.push_back({line, "emotion label out of range: " +
                                    std::to_string(*r.emotion_label)});
    }
    if (r.sentiment_label &&
        !label_space(Task::sentiment).contains(*r.sentiment_label)) {
        issues.push_back({line, "sentiment label out of range: " +
                                    std::to_string(*r.sentiment_label)});
    }
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool in_quote = false;
    for (size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (c == '"') {
            if (in_quote && i + 1 < line.size() && line[i + 1] == '"') {
                cur.push_back('"'); // escaped quote
                ++i;
            } else {
                in_quote = !in_quote;
            }
            continue;
        }
        if (c == ',' && !in_quote) {
            fields.push_back(cur);
            cur.clear();
            continue;
        }
        cur.push_back(c);
    }
    fields.push_back(cur);
    return fields;
}

} // namespace detail

inline ManifestParse parse_manifest_jsonl(std::istream& in,
                                          std::string source_name) {
    ManifestParse out;
    out.manifest.source_name = std::move(source_name);
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            out.issues.push_back({line_no, "not a JSON object"});
            continue;
        }
        bool bad = false;
        for (const char* field : detail::kManifestFields) {
            if (!j.contains(field)) {
                out.issues.push_back({line_no, std::string("missing required field \"") + field + "\""});
                bad = true;
            }
        }
        for (auto it = j.begin(); it != j.end(); ++it) {
            bool known = false;
            for (const char* field : detail::kManifestFields) {
                if (it.key() == field) { known = true; break; }
            }
            if (!known) {
                out.issues.push_back({line_no, "unknown field \"" + it.key() + "\""});
                bad = true;
            }
        }
        if (bad) continue;

        UtteranceRecord r;
        auto want_string = [&](const char* key, std::string& dst) {
            if (!j[key].is_string()) {
                out.issues.push_back({line_no, std::string("field \"") + key + "\" must be a string"});
                bad = true;
                return;
            }
            dst = j[key].get<std::string>();
        };
        auto want_opt_string = [&](const char* key, std::optional<std::string>& dst) {
            if (j[key].is_null()) { dst = std::nullopt; return; }
            if (!j[key].is_string()) {
                out.issues.push_back({line_no, std::string("field \"") + key + "\" must be a string or null"});
                bad = true;
                return;
            }
            dst = j[key].get<std::string>();
        };
        auto want_opt_int = [&](const char* key, std::optional<int>& dst) {
            if (j[key].is_null()) { dst = std::nullopt; return; }
            if (!j[key].is_number_integer()) {
                out.issues.push_back({line_no, std::string("field \"") + key + "\" must be an integer or null"});
                bad = true;
                return;
            }
            dst = j[key].get<int>();
        };
        want_string("utterance_id", r.utterance_id);
        want_string("dialogue_id", r.dialogue_id);
        want_string("speaker", r.speaker);
        want_string("text", r.text);
        want_opt_string("audio_ref", r.audio_ref);
        want_opt_string("video_ref", r.video_ref);
        want_opt_int("emotion_label", r.emotion_label);
        want_opt_int("sentiment_label", r.sentiment_label);
        if (j["split"].is_string()) {
            auto sp = parse_split(j["split"].get<std::string>());
            if (!sp) {
                out.issues.push_back({line_no, "unknown split \"" + j["split"].get<std::string>() + "\""});
                bad = true;
            } else {
                r.split = *sp;
            }
        } else {
            out.issues.push_back({line_no, "field \"split\" must be a string"});
            bad = true;
        }
        if (bad) continue;
        detail::check_record(r, line_no, seen_ids, out.issues);
        out.manifest.records.push_back(std::move(r));
    }
    return out;
}

inline ManifestParse parse_manifest_csv(std::istream& in,
                                        std::string source_name) {
    ManifestParse out;
    out.manifest.source_name = std::move(source_name);
    std::set<std::string> seen_ids;
    std::string line;
    int line_no = 0;

    if (!std::getline(in, line)) {
        out.issues.push_back({0, "empty file (missing CSV header)"});
        return out;
    }
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto header = detail::split_csv_line(line);
    std::vector<std::string> expected(std::begin(detail::kManifestFields),
                                      std::end(detail::kManifestFields));
    if (header != expected) {
        out.issues.push_back({1, "unexpected CSV header"});
        return out;
    }

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != expected.size()) {
            out.issues.push_back({line_no, "expected " + std::to_string(expected.size()) +
                                               " fields, got " + std::to_string(f.size())});
            continue;
        }
        UtteranceRecord r;
        r.utterance_id = f[0];
        r.dialogue_id = f[1];
        r.speaker = f[2];
        r.text = f[3];
        r.audio_ref = f[4].empty() ? std::nullopt : std::optional<std::string>(f[4]);
        r.video_ref = f[5].empty() ? std::nullopt : std::optional<std::string>(f[5]);
        bool bad = false;
        auto map_label = [&](Task task, const std::string& cell, std::optional<int>& dst) {
            if (cell.empty()) { dst = std::nullopt; return; }
            auto idx = label_space(task).index(cell);
            if (!idx) {
                out.issues.push_back({line_no, std::string("unknown ") +
                                                   std::string(to_string(task)) +
                                                   " label \"" + cell + "\""});
                bad = true;
                return;
            }
            dst = *idx;
        };
        map_label(Task::emotion, f[6], r.emotion_label);
        map_label(Task::sentiment, f[7], r.sentiment_label);
        auto sp = parse_split(f[8]);
        if (!sp) {
            out.issues.push_back({line_no, "unknown split \"" + f[8] + "\""});
            bad = true;
        } else {
            r.split = *sp;
        }
        if (bad) continue;
        detail::check_record(r, line_no, seen_ids, out.issues);
        out.manifest.records.push_back(std::move(r));
    }
    return out;
}

// Dispatches on extension: .csv -> CSV adapter, anything else -> JSONL.
inline ManifestParse parse_manifest_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        ManifestParse out;
        out.issues.push_back({0, "cannot open " + path.string()});
        return out;
    }
    if (path.extension() == ".csv") return parse_manifest_csv(in, path.string());
    return parse_manifest_jsonl(in, path.string());
}

// Throwing wrapper; the issue list rides along in the exception.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    auto parsed = parse_manifest_file(path);
    if (!parsed.ok()) {
        std::ostringstream msg;
        msg << "invalid manifest " << path.string() << " (" << parsed.issues.size()
            << " problem" << (parsed.issues.size() == 1 ? "" : "s") << ")";
        throw ManifestError(msg.str(), std::move(parsed.issues));
    }
    return std::move(parsed.manifest);
}

inline nlohmann::json record_to_json(const UtteranceRecord& r) {
    nlohmann::json j;
    j["utterance_id"] = r.utterance_id;
    j["dialogue_id"] = r.dialogue_id;
    j["speaker"] = r.speaker;
    j["text"] = r.text;
    j["audio_ref"] = r.audio_ref ? nlohmann::json(*r.audio_ref) : nlohmann::json(nullptr);
    j["video_ref"] = r.video_ref ? nlohmann::json(*r.video_ref) : nlohmann::json(nullptr);
    j["emotion_label"] = r.emotion_label ? nlohmann::json(*r.emotion_label) : nlohmann::json(nullptr);
    j["sentiment_label"] = r.sentiment_label ? nlohmann::json(*r.sentiment_label) : nlohmann::json(nullptr);
    j["split"] = std::string(to_string(r.split));
    return j;
}

inline void write_manifest_jsonl(const DatasetManifest& m, std::ostream& out) {
    for (const auto& r : m.records) {
        out << record_to_json(r).dump() << "\n";
    }
}

inline void write_manifest_jsonl(const DatasetManifest& m,
                                 const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest " + path.string());
    write_manifest_jsonl(m, out);
}

} // namespace mmfuse
