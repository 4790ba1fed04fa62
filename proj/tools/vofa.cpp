// vofa: synthetic-corpus generation, staged training, evaluation, and one-off
// caption/QA inference for the toy video-to-text pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vofa/beam.hpp"
#include "vofa/checkpoint.hpp"
#include "vofa/config.hpp"
#include "vofa/frame_io.hpp"
#include "vofa/metrics.hpp"
#include "vofa/synth.hpp"
#include "vofa/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitCheckpoint = 4;

std::optional<uint64_t> env_seed() {
    const char* s = std::getenv("VOFA_SEED");
    if (!s || !*s) return std::nullopt;
    return std::strtoull(s, nullptr, 10);
}

// "--set a.b=c" overrides applied to the raw config JSON before parsing.
void apply_overrides(json& j, const std::vector<std::string>& sets) {
    for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw vofa::ConfigError("--set expects key=value, got \"" + kv + "\"");
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        json* cur = &j;
        size_t pos = 0;
        auto descend = [&](const std::string& part, bool last) -> json* {
            const bool numeric = !part.empty() && part.find_first_not_of("0123456789") == std::string::npos;
            if (cur->is_array() && numeric) {
                const size_t idx = std::stoul(part);
                if (idx >= cur->size()) throw vofa::ConfigError("--set: index " + part + " out of range");
                return &(*cur)[idx];
            }
            if (!last && !cur->contains(part)) (*cur)[part] = json::object();
            return &(*cur)[part];
        };
        while (true) {
            const auto dot = key.find('.', pos);
            const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
            if (dot == std::string::npos) {
                json parsed;
                try {
                    parsed = json::parse(val);
                } catch (const json::exception&) {
                    parsed = val;  // plain string
                }
                *descend(part, true) = parsed;
                break;
            }
            cur = descend(part, false);
            pos = dot + 1;
        }
    }
}

// "--ipt-tasks caption,match,fom_con" rewrites the mix of every ipt stage.
void apply_ipt_tasks(json& j, const std::string& tasks) {
    bool caption = false, match = false, fom_con = false, fom_gen = false;
    std::string cur;
    auto flush = [&] {
        if (cur == "caption") caption = true;
        else if (cur == "match") match = true;
        else if (cur == "fom_con") fom_con = true;
        else if (cur == "fom_gen") fom_gen = true;
        else if (!cur.empty()) throw vofa::ConfigError("--ipt-tasks: unknown task \"" + cur + "\"");
        cur.clear();
    };
    for (char c : tasks) {
        if (c == ',') flush();
        else cur.push_back(c);
    }
    flush();
    if (!j.contains("stages")) return;
    for (auto& s : j["stages"]) {
        if (s.value("stage", "") != "ipt") continue;
        json mix;
        mix["caption"] = caption ? 1 : 0;
        mix["match"] = match ? 1 : 0;
        mix["fom_every"] = (fom_con || fom_gen) ? 8 : 0;
        mix["fom_variant"] = fom_con && fom_gen ? "both" : (fom_gen ? "generative" : "contrastive");
        s["mix"] = mix;
    }
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, bool png,
              std::optional<uint64_t> seed_override) {
    auto spec = vofa::load_synth_spec(spec_path);
    if (auto s = env_seed()) spec.seed = *s;
    if (seed_override) spec.seed = *seed_override;

    std::error_code ec;
    fs::create_directories(fs::path(out_dir) / "clips", ec);
    if (ec) {
        std::cerr << "cannot create " << out_dir << ": " << ec.message() << "\n";
        return kExitIo;
    }

    auto corpus = vofa::generate_synthetic_corpus(spec);
    for (size_t i = 0; i < corpus.clips.size(); ++i) {
        auto& rec = corpus.manifest.records[i];
        if (png) {
            rec.frames_path = "clips/" + corpus.clips[i].clip_id;
            vofa::write_clip_png_dir(fs::path(out_dir) / rec.frames_path, corpus.clips[i]);
        } else {
            vofa::write_clip_vofr(fs::path(out_dir) / rec.frames_path, corpus.clips[i]);
        }
    }
    vofa::save_manifest(fs::path(out_dir) / "manifest.jsonl", corpus.manifest);

    int qa_count = 0;
    for (const auto& r : corpus.manifest.records) qa_count += static_cast<int>(r.qa.size());
    ordered_json summary;
    summary["n_clips"] = spec.n_clips;
    summary["frames_per_clip"] = spec.frames_per_clip;
    summary["canvas_px"] = spec.canvas_px;
    summary["two_event_clips"] = corpus.two_event_count();
    summary["two_event_fraction"] = static_cast<double>(corpus.two_event_count()) / spec.n_clips;
    summary["qa_pairs"] = qa_count;
    summary["seed"] = spec.seed;
    summary["manifest"] = (fs::path(out_dir) / "manifest.jsonl").string();
    std::cout << summary.dump() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir, const std::string& resume,
              const std::vector<std::string>& sets, const std::string& ipt_tasks,
              std::optional<uint64_t> seed_override, const std::string& dump_samples_path) {
    std::ifstream in(config_path);
    if (!in) {
        std::cerr << "cannot open config " << config_path << "\n";
        return kExitIo;
    }
    json raw = json::parse(in);
    apply_overrides(raw, sets);
    if (!ipt_tasks.empty()) apply_ipt_tasks(raw, ipt_tasks);
    auto cfg = vofa::run_config_from_json(raw);
    if (auto s = env_seed()) cfg.seed = *s;
    if (seed_override) cfg.seed = *seed_override;

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) {
        std::cerr << "cannot create " << out_dir << ": " << ec.message() << "\n";
        return kExitIo;
    }

    vofa::Trainer trainer(cfg, fs::path(config_path).parent_path());
    if (!resume.empty()) {
        trainer.resume_from(vofa::load_checkpoint(resume));
    } else {
        trainer.init_fresh();
    }

    std::ofstream curve(fs::path(out_dir) / "curve.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
    auto save = [&](const fs::path& path, const ordered_json& extra) {
        vofa::save_checkpoint(path, trainer.model(), trainer.tokenizer().tokens(), &trainer.optimizer(),
                              trainer.step(), trainer.seed(), extra);
    };

    vofa::Trainer::Hooks hooks;
    hooks.on_step = [&](int64_t step, double loss) {
        ordered_json j;
        j["step"] = step;
        j["loss"] = loss;
        curve << j.dump() << "\n";
    };
    hooks.on_eval = [&](const vofa::EvalReport& report, bool is_best) {
        auto rj = vofa::report_to_json(report);
        std::ofstream rf(fs::path(out_dir) / ("report_" + std::to_string(report.step) + ".json"));
        rf << rj.dump(2) << "\n";
        ordered_json j;
        j["step"] = report.step;
        j["metric"] = report.has_accuracy ? report.accuracy : report.cider_d;
        j["split"] = report.split;
        curve << j.dump() << "\n";
        if (is_best) {
            auto extra = trainer.position();
            extra["n_frames"] = trainer.config().n_frames;
            save(fs::path(out_dir) / "ckpt_best.vofa", extra);
        }
    };
    hooks.on_epoch_end = [&](int stage_idx, int epoch_idx) {
        curve.flush();
        auto extra = trainer.position_after(stage_idx, epoch_idx);
        extra["n_frames"] = trainer.config().n_frames;
        save(fs::path(out_dir) / "ckpt_last.vofa", extra);
    };
    std::ofstream dump;
    if (!dump_samples_path.empty()) dump.open(dump_samples_path);
    hooks.on_epoch_samples = [&](int, int, const std::vector<vofa::Seq2SeqSample>& samples) {
        if (dump.is_open()) vofa::dump_samples(dump, samples);
    };
    hooks.on_stage_end = [&](int stage_idx) {
        auto extra = trainer.position();
        extra["stage_idx"] = stage_idx + 1;
        extra["epoch_idx"] = 0;
        extra["n_frames"] = trainer.config().n_frames;
        save(fs::path(out_dir) / ("ckpt_stage" + std::to_string(stage_idx) + ".vofa"), extra);
        save(fs::path(out_dir) / "ckpt_last.vofa", extra);
    };

    trainer.run(hooks);
    return 0;
}

struct LoadedCheckpoint {
    vofa::Checkpoint ck;
    vofa::TextTokenizer tok;
    int n_frames = 8;
};

LoadedCheckpoint open_checkpoint(const std::string& path) {
    LoadedCheckpoint lc{vofa::load_checkpoint(path), {}, 8};
    lc.tok = vofa::TextTokenizer::from_tokens(lc.ck.vocab);
    lc.n_frames = lc.ck.extra.value("n_frames", 8);
    return lc;
}

vofa::Tensor<float> encode_clip(const LoadedCheckpoint& lc, const std::string& frames_path,
                                const std::vector<int>& prompt) {
    vofa::VideoClip raw = vofa::load_clip(frames_path);
    vofa::VideoClip sized = (raw.h == lc.ck.cfg.frame_px && raw.w == lc.ck.cfg.frame_px)
                                ? std::move(raw)
                                : vofa::resize_shorter_side(raw, lc.ck.cfg.frame_px);
    auto clip = std::make_shared<const vofa::VideoClip>(vofa::sample_frames_linear(sized, lc.n_frames));
    vofa::Seq2SeqSample s;
    s.source_tokens = prompt;
    s.clip = clip;
    s.frame_order = vofa::identity_order(clip->t);
    s.target_tokens = {vofa::TextTokenizer::kBos, vofa::TextTokenizer::kEos};
    return vofa::encode<float>(nullptr, lc.ck.model, s);
}

void print_decode(const LoadedCheckpoint& lc, const vofa::DecodeResult& out, bool as_json,
                  double length_penalty) {
    if (!as_json) {
        std::cout << lc.tok.detokenize(out.tokens) << "\n";
        return;
    }
    ordered_json j;
    j["text"] = lc.tok.detokenize(out.tokens);
    j["score"] = out.score;
    j["finished"] = out.finished;
    auto arr = ordered_json::array();
    for (const auto& h : out.hypotheses) {
        ordered_json e;
        e["text"] = lc.tok.detokenize(h.tokens);
        e["score"] = h.score(length_penalty);
        arr.push_back(std::move(e));
    }
    j["hypotheses"] = std::move(arr);
    std::cout << j.dump() << "\n";
}

int cmd_eval(const std::string& ckpt_path, const std::string& manifest_path, const std::string& task, int beam,
             int max_len, double length_penalty) {
    auto lc = open_checkpoint(ckpt_path);
    auto data = vofa::load_dataset(manifest_path, lc.ck.cfg.frame_px, lc.n_frames);
    if (task == "qa" && data.qa_items.empty())
        throw vofa::ManifestError("eval --task qa: manifest " + manifest_path + " has no \"qa\" pairs");
    auto report = vofa::evaluate_split(lc.ck.model, data, task, lc.tok, beam, max_len, length_penalty,
                                       manifest_path, "eval");
    report.step = lc.ck.step;
    report.seed = lc.ck.run_seed;
    std::cout << vofa::report_to_json(report).dump(2) << "\n";
    return 0;
}

int cmd_caption(const std::string& ckpt_path, const std::string& frames, int beam, int max_len,
                double length_penalty, bool as_json) {
    auto lc = open_checkpoint(ckpt_path);
    auto enc = encode_clip(lc, frames, lc.tok.tokenize(vofa::kCaptionPrompt));
    auto out = vofa::beam_search(lc.ck.model, enc, beam, max_len, length_penalty);
    print_decode(lc, out, as_json, length_penalty);
    return 0;
}

int cmd_qa(const std::string& ckpt_path, const std::string& frames, const std::string& question, int beam,
           int max_len, double length_penalty, bool as_json) {
    auto lc = open_checkpoint(ckpt_path);
    auto enc = encode_clip(lc, frames, lc.tok.tokenize(question));
    auto out = vofa::beam_search(lc.ck.model, enc, beam, max_len, length_penalty);
    print_decode(lc, out, as_json, length_penalty);
    return 0;
}

int cmd_score(const std::string& pred_path, const std::string& ref_path) {
    std::ifstream pf(pred_path), rf(ref_path);
    if (!pf || !rf) {
        std::cerr << "cannot open " << (!pf ? pred_path : ref_path) << "\n";
        return kExitIo;
    }
    std::map<std::string, std::vector<std::string>> refs_by_id;
    std::string line;
    int lineno = 0;
    while (std::getline(rf, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = json::parse(line);
        std::vector<std::string> caps;
        if (j.contains("captions")) caps = j.at("captions").get<std::vector<std::string>>();
        else if (j.contains("text")) caps = {j.at("text").get<std::string>()};
        else throw vofa::ManifestError(ref_path + ":" + std::to_string(lineno) + ": needs captions or text");
        refs_by_id[j.at("clip_id").get<std::string>()] = std::move(caps);
    }
    std::vector<vofa::Tokens> hyps;
    std::vector<std::vector<vofa::Tokens>> refs;
    lineno = 0;
    while (std::getline(pf, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto j = json::parse(line);
        const std::string id = j.at("clip_id").get<std::string>();
        auto it = refs_by_id.find(id);
        if (it == refs_by_id.end())
            throw vofa::ManifestError(pred_path + ":" + std::to_string(lineno) + ": no references for " + id);
        hyps.push_back(vofa::to_tokens(j.at("text").get<std::string>()));
        std::vector<vofa::Tokens> r;
        for (const auto& c : it->second) r.push_back(vofa::to_tokens(c));
        refs.push_back(std::move(r));
    }
    vofa::EvalReport report;
    report.dataset = pred_path;
    report.split = "score";
    report.bleu4 = vofa::bleu4(hyps, refs);
    report.rouge_l = vofa::rouge_l(hyps, refs);
    report.cider_d = vofa::cider_d(hyps, refs);
    report.n_items = static_cast<int>(hyps.size());
    std::cout << vofa::report_to_json(report).dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"toy two-stage video-to-text pipeline"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, resume, ckpt, manifest, frames, question, task = "caption";
    std::string predictions, references, ipt_tasks, dump_samples_path;
    std::vector<std::string> sets;
    bool png = false, as_json = false;
    int beam = 4, max_len = 16;
    double length_penalty = 1.0;
    std::optional<uint64_t> seed;

    auto* synth = app.add_subcommand("synth", "generate a synthetic video-caption corpus");
    synth->add_option("spec", spec_path, "synthetic spec JSON")->required();
    synth->add_option("out", out_dir, "output directory")->required();
    synth->add_flag("--png", png, "write PNG frame directories instead of VOFR files");
    synth->add_option("--seed", seed, "override the spec seed");

    auto* train = app.add_subcommand("train", "run the staged training pipeline");
    train->add_option("config", config_path, "run config JSON")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--resume", resume, "checkpoint to resume from");
    train->add_option("--seed", seed, "override config seed");
    train->add_option("--set", sets, "override a config key: --set stages.0.epochs=3");
    train->add_option("--ipt-tasks", ipt_tasks, "comma list of caption,match,fom_con,fom_gen for ipt stages");
    train->add_option("--dump-samples", dump_samples_path,
                      "write every epoch's sample stream as JSON-lines to this file");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
    eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval->add_option("--manifest", manifest, "dataset manifest")->required();
    eval->add_option("--task", task, "caption or qa");
    eval->add_option("--beam", beam, "beam width");
    eval->add_option("--max-len", max_len, "decode length limit");
    eval->add_option("--length-penalty", length_penalty, "beam length penalty");

    auto* caption = app.add_subcommand("caption", "caption a single clip");
    caption->add_option("--ckpt", ckpt)->required();
    caption->add_option("--frames", frames, "clip path (VOFR file or PNG directory)")->required();
    caption->add_option("--beam", beam);
    caption->add_option("--max-len", max_len);
    caption->add_option("--length-penalty", length_penalty);
    caption->add_flag("--json", as_json, "emit JSON with per-beam hypotheses");

    auto* qa = app.add_subcommand("qa", "answer a question about a clip");
    qa->add_option("--ckpt", ckpt)->required();
    qa->add_option("--frames", frames)->required();
    qa->add_option("--question", question)->required();
    qa->add_option("--beam", beam);
    qa->add_option("--max-len", max_len);
    qa->add_option("--length-penalty", length_penalty);
    qa->add_flag("--json", as_json);

    auto* score = app.add_subcommand("score", "score predictions against references");
    score->add_option("--predictions", predictions, "JSON-lines of {clip_id, text}")->required();
    score->add_option("--references", references, "JSON-lines of {clip_id, captions} (manifest works)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(spec_path, out_dir, png, seed);
        if (train->parsed()) return cmd_train(config_path, out_dir, resume, sets, ipt_tasks, seed, dump_samples_path);
        if (eval->parsed()) return cmd_eval(ckpt, manifest, task, beam, max_len, length_penalty);
        if (caption->parsed()) return cmd_caption(ckpt, frames, beam, max_len, length_penalty, as_json);
        if (qa->parsed()) return cmd_qa(ckpt, frames, question, beam, max_len, length_penalty, as_json);
        if (score->parsed()) return cmd_score(predictions, references);
    } catch (const vofa::TrainError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDiverged;
    } catch (const vofa::CheckpointError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitCheckpoint;
    } catch (const vofa::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
