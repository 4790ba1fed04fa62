#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vofa/checkpoint.hpp"
#include "vofa/optim.hpp"
#include "vofa/synth.hpp"
#include "vofa/tasks.hpp"

namespace vofa {

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ConfigError(where + ": unknown key \"" + it.key() + "\"");
}

}  // namespace detail

// One training stage: image_text (single-frame captioning surrogate), ipt
// (the mixed video-text pre-training), or finetune (downstream task, with
// optional SCST).
struct StageSpec {
    std::string stage;  // image_text | ipt | finetune
    std::string train_manifest;
    std::string val_manifest;
    MixSchedule mix;             // ipt only
    std::string task = "caption";  // finetune: caption | qa
    int epochs = 1;
    int batch_size = 8;
    double lr = 1e-3;
    bool scst = false;
    int eval_every = 0;  // steps between validations; 0 = once per epoch

    void validate() const {
        if (stage != "image_text" && stage != "ipt" && stage != "finetune")
            throw ConfigError("stage must be image_text, ipt or finetune, got \"" + stage + "\"");
        if (scst && stage != "finetune") throw ConfigError("scst is only valid in the finetune stage");
        if (task != "caption" && task != "qa") throw ConfigError("task must be caption or qa");
        if (train_manifest.empty()) throw ConfigError("stage " + stage + " needs train_manifest");
        if (epochs < 0 || batch_size < 1) throw ConfigError("stage " + stage + ": bad epochs/batch_size");
    }
};

struct RunConfig {
    uint64_t seed = 0;
    int n_frames = 8;
    int frame_px = 32;
    ModelConfig model;
    AdamWConfig optimizer;  // lr comes from the stage
    std::vector<StageSpec> stages;
    int eval_beam = 4;
    int eval_max_len = 16;
    double eval_length_penalty = 1.0;
};

inline StageSpec stage_from_json(const nlohmann::json& j, const std::string& where) {
    detail::reject_unknown(j,
                           {"stage", "train_manifest", "val_manifest", "mix", "task", "epochs", "batch_size",
                            "lr", "scst", "eval_every"},
                           where);
    StageSpec s;
    s.stage = j.at("stage").get<std::string>();
    s.train_manifest = j.value("train_manifest", "");
    s.val_manifest = j.value("val_manifest", "");
    s.task = j.value("task", "caption");
    s.epochs = j.value("epochs", 1);
    s.batch_size = j.value("batch_size", 8);
    s.lr = j.value("lr", 1e-3);
    s.scst = j.value("scst", false);
    s.eval_every = j.value("eval_every", 0);
    if (j.contains("mix")) {
        const auto& m = j.at("mix");
        detail::reject_unknown(m, {"caption", "match", "fom_every", "fom_variant"}, where + ".mix");
        s.mix.caption_per_instance = m.value("caption", 1);
        s.mix.match_per_instance = m.value("match", 1);
        s.mix.fom_every = m.value("fom_every", 8);
        const std::string v = m.value("fom_variant", "contrastive");
        if (v == "contrastive") s.mix.fom_variant = FomVariant::contrastive;
        else if (v == "generative") s.mix.fom_variant = FomVariant::generative;
        else if (v == "both") s.mix.fom_variant = FomVariant::both;
        else throw ConfigError(where + ".mix: unknown fom_variant \"" + v + "\"");
    }
    s.validate();
    return s;
}

inline nlohmann::ordered_json stage_to_json(const StageSpec& s) {
    nlohmann::ordered_json j;
    j["stage"] = s.stage;
    j["train_manifest"] = s.train_manifest;
    j["val_manifest"] = s.val_manifest;
    if (s.stage == "ipt") {
        j["mix"] = {{"caption", s.mix.caption_per_instance},
                    {"match", s.mix.match_per_instance},
                    {"fom_every", s.mix.fom_every},
                    {"fom_variant", s.mix.fom_variant == FomVariant::contrastive
                                        ? "contrastive"
                                        : (s.mix.fom_variant == FomVariant::generative ? "generative" : "both")}};
    }
    j["task"] = s.task;
    j["epochs"] = s.epochs;
    j["batch_size"] = s.batch_size;
    j["lr"] = s.lr;
    j["scst"] = s.scst;
    j["eval_every"] = s.eval_every;
    return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j, {"seed", "data", "model", "optimizer", "stages", "eval"}, "config");
    RunConfig c;
    c.seed = j.value("seed", uint64_t{0});
    if (j.contains("data")) {
        const auto& d = j.at("data");
        detail::reject_unknown(d, {"n_frames", "frame_px"}, "data");
        c.n_frames = d.value("n_frames", 8);
        c.frame_px = d.value("frame_px", 32);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        detail::reject_unknown(m,
                               {"hidden", "enc_layers", "dec_layers", "heads", "ffn_multiple", "vocab",
                                "patch_size", "frame_px", "max_frames", "max_text_len", "variant",
                                "fid_temporal_embeddings", "tie_output"},
                               "model");
        c.model.hidden = m.value("hidden", 64);
        c.model.enc_layers = m.value("enc_layers", 2);
        c.model.dec_layers = m.value("dec_layers", 2);
        c.model.heads = m.value("heads", 4);
        c.model.ffn_multiple = m.value("ffn_multiple", 4);
        c.model.vocab = m.value("vocab", 0);  // 0: sized from the corpus vocabulary
        c.model.patch_size = m.value("patch_size", 16);
        c.model.max_frames = m.value("max_frames", 8);
        c.model.max_text_len = m.value("max_text_len", 32);
        const std::string v = m.value("variant", "full");
        if (v != "full" && v != "fid") throw ConfigError("model.variant must be full or fid");
        c.model.variant = v == "full" ? Variant::full : Variant::fid;
        c.model.fid_temporal_embeddings = m.value("fid_temporal_embeddings", false);
        c.model.tie_output = m.value("tie_output", false);
    }
    c.model.frame_px = c.frame_px;
    if (c.model.max_frames < c.n_frames) c.model.max_frames = std::max(8, c.n_frames);
    if (j.contains("optimizer")) {
        const auto& o = j.at("optimizer");
        detail::reject_unknown(o, {"beta1", "beta2", "eps", "weight_decay"}, "optimizer");
        c.optimizer.beta1 = o.value("beta1", 0.9);
        c.optimizer.beta2 = o.value("beta2", 0.999);
        c.optimizer.eps = o.value("eps", 1e-8);
        c.optimizer.weight_decay = o.value("weight_decay", 0.01);
    }
    if (j.contains("stages")) {
        int idx = 0;
        for (const auto& s : j.at("stages")) {
            c.stages.push_back(stage_from_json(s, "stages[" + std::to_string(idx) + "]"));
            ++idx;
        }
    }
    if (j.contains("eval")) {
        const auto& e = j.at("eval");
        detail::reject_unknown(e, {"beam", "max_len", "length_penalty"}, "eval");
        c.eval_beam = e.value("beam", 4);
        c.eval_max_len = e.value("max_len", 16);
        c.eval_length_penalty = e.value("length_penalty", 1.0);
    }
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

inline SyntheticSpec synth_spec_from_json(const nlohmann::json& j) {
    detail::reject_unknown(j,
                           {"n_clips", "frames_per_clip", "canvas_px", "shapes", "colors", "two_event_fraction",
                            "qa_fraction", "distractor_fraction", "static_scenes", "seed"},
                           "synth spec");
    SyntheticSpec s;
    s.n_clips = j.value("n_clips", 32);
    s.frames_per_clip = j.value("frames_per_clip", 8);
    s.canvas_px = j.value("canvas_px", 32);
    if (j.contains("shapes")) s.shapes = j.at("shapes").get<std::vector<std::string>>();
    if (j.contains("colors")) s.colors = j.at("colors").get<std::vector<std::string>>();
    s.two_event_fraction = j.value("two_event_fraction", 0.4);
    s.qa_fraction = j.value("qa_fraction", 0.25);
    s.distractor_fraction = j.value("distractor_fraction", 0.35);
    s.static_scenes = j.value("static_scenes", false);
    s.seed = j.value("seed", uint64_t{0});
    return s;
}

inline SyntheticSpec load_synth_spec(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open synth spec " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return synth_spec_from_json(j);
}

}  // namespace vofa
