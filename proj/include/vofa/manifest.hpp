#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vofa/text.hpp"

namespace vofa {

struct ManifestError : std::runtime_error {
    explicit ManifestError(const std::string& what) : std::runtime_error(what) {}
};

struct QaPair {
    std::string question;
    std::string answer;
};

struct ManifestRecord {
    std::string clip_id;
    std::string frames_path;
    std::vector<std::string> captions;
    std::vector<QaPair> qa;
};

struct DatasetManifest {
    std::vector<ManifestRecord> records;

    std::vector<std::string> all_captions() const {
        std::vector<std::string> out;
        for (const auto& r : records)
            for (const auto& c : r.captions) out.push_back(c);
        return out;
    }
};

// One JSON object per line: {clip_id, frames_path, captions, qa}.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest " + path.string());
    DatasetManifest manifest;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        ManifestRecord rec;
        try {
            rec.clip_id = j.at("clip_id").get<std::string>();
            rec.frames_path = j.at("frames_path").get<std::string>();
            for (const auto& c : j.at("captions")) rec.captions.push_back(c.get<std::string>());
            for (const auto& q : j.at("qa"))
                rec.qa.push_back({q.at("question").get<std::string>(), q.at("answer").get<std::string>()});
        } catch (const nlohmann::json::exception& e) {
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
        if (rec.captions.empty() && rec.qa.empty())
            throw ManifestError(path.string() + ":" + std::to_string(lineno) +
                                ": record must have at least one caption or qa pair");
        if (!seen.insert(rec.clip_id).second)
            throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": duplicate clip_id " +
                                rec.clip_id);
        manifest.records.push_back(std::move(rec));
    }
    return manifest;
}

inline nlohmann::ordered_json record_to_json(const ManifestRecord& rec) {
    nlohmann::ordered_json j;
    j["clip_id"] = rec.clip_id;
    j["frames_path"] = rec.frames_path;
    j["captions"] = rec.captions;
    auto qa = nlohmann::ordered_json::array();
    for (const auto& q : rec.qa) qa.push_back({{"question", q.question}, {"answer", q.answer}});
    j["qa"] = qa;
    return j;
}

inline void save_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw ManifestError("cannot write manifest " + path.string());
    for (const auto& rec : manifest.records) out << record_to_json(rec).dump() << "\n";
}

// The prompt templates every task uses; kept with the vocabulary builder so
// the vocab always covers them.
inline const std::vector<std::string>& prompt_templates() {
    static const std::vector<std::string> kPrompts = {
        "What does the video describe?",
        "Does the video describe",
        "What is the correct frame order in the video?",
        "Are the frames in the video in the correct order?",
    };
    return kPrompts;
}

// Vocabulary over captions, questions and answers of all manifests, plus the
// prompt templates, yes/no, and the digit words 0..31 used as frame-order
// targets.
inline TextTokenizer build_vocab(const std::vector<const DatasetManifest*>& manifests) {
    std::vector<std::string> texts;
    for (const auto* m : manifests)
        for (const auto& r : m->records) {
            for (const auto& c : r.captions) texts.push_back(c);
            for (const auto& q : r.qa) {
                texts.push_back(q.question);
                texts.push_back(q.answer);
            }
        }
    for (const auto& p : prompt_templates()) texts.push_back(p);
    texts.push_back("yes no");
    for (int i = 0; i < 32; ++i) texts.push_back(std::to_string(i));
    return TextTokenizer::build(texts);
}

}  // namespace vofa
