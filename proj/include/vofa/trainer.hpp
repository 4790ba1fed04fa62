#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vofa/beam.hpp"
#include "vofa/checkpoint.hpp"
#include "vofa/config.hpp"
#include "vofa/frame_io.hpp"
#include "vofa/manifest.hpp"
#include "vofa/metrics.hpp"
#include "vofa/model.hpp"
#include "vofa/optim.hpp"
#include "vofa/tasks.hpp"

namespace vofa {

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

// A manifest with its clips preprocessed (resize to frame_px, linear-sample
// to n_frames) and flattened into training units.
struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<std::shared_ptr<const VideoClip>> clips;  // aligned with manifest.records
    std::vector<Instance> instances;                      // (clip, caption) pairs
    std::vector<std::string> captions;
    struct QaItem {
        std::shared_ptr<const VideoClip> clip;
        QaPair qa;
    };
    std::vector<QaItem> qa_items;
    std::vector<std::vector<Tokens>> refs_by_record;  // caption tokens per record
};

inline LoadedDataset load_dataset(const std::filesystem::path& manifest_path, int frame_px, int n_frames) {
    LoadedDataset data;
    data.manifest = load_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    for (size_t i = 0; i < data.manifest.records.size(); ++i) {
        const auto& rec = data.manifest.records[i];
        VideoClip raw = load_clip(base / rec.frames_path);
        raw.clip_id = rec.clip_id;
        VideoClip sized = (raw.h == frame_px && raw.w == frame_px) ? std::move(raw)
                                                                   : resize_shorter_side(raw, frame_px);
        auto clip = std::make_shared<const VideoClip>(sample_frames_linear(sized, n_frames));
        data.clips.push_back(clip);
        std::vector<Tokens> refs;
        for (const auto& c : rec.captions) {
            data.instances.push_back({clip, c, static_cast<int>(i)});
            data.captions.push_back(c);
            refs.push_back(to_tokens(c));
        }
        data.refs_by_record.push_back(std::move(refs));
        for (const auto& qa : rec.qa) data.qa_items.push_back({clip, qa});
    }
    return data;
}

// Mean over all non-PAD target tokens in the batch of the token-level cross
// entropy (per-sample CE means recombined by token count).
template <class R>
Tensor<R> compute_loss(Tape<R>* tape, const VideoToTextModel<R>& model, const std::vector<Seq2SeqSample>& batch) {
    if (batch.empty()) throw TrainError("compute_loss: empty batch");
    std::vector<std::pair<Tensor<R>, int64_t>> parts;
    int64_t total = 0;
    for (const auto& s : batch) {
        auto enc = encode(tape, model, s);
        auto logits = forward_teacher_forced(tape, model, s, enc);
        auto targets = teacher_forced_targets(s);
        int64_t n = 0;
        for (int t : targets) n += t != TextTokenizer::kPad ? 1 : 0;
        if (n == 0) continue;
        auto ce = cross_entropy_from_logits(tape, logits, std::move(targets), TextTokenizer::kPad);
        parts.emplace_back(std::move(ce), n);
        total += n;
    }
    if (total == 0) throw TrainError("compute_loss: batch has no non-PAD target tokens");
    Tensor<R> loss = scale(tape, parts[0].first, static_cast<double>(parts[0].second) / static_cast<double>(total));
    for (size_t i = 1; i < parts.size(); ++i)
        loss = add(tape, loss,
                   scale(tape, parts[i].first, static_cast<double>(parts[i].second) / static_cast<double>(total)));
    return loss;
}

struct ScstStats {
    int used = 0;
    int skipped = 0;
    double mean_reward_sampled = 0.0;
    double mean_reward_greedy = 0.0;
};

// Self-critical step: reward is CIDEr-D, baseline is the model's own greedy
// decode. Returns the surrogate loss -(r(y_s) - r(y_g)) log P(y_s) averaged
// over the batch, or nothing when no sample produced a gradient.
template <class R>
std::optional<Tensor<R>> scst_step(Tape<R>* tape, const VideoToTextModel<R>& model,
                                   const std::vector<Instance>& batch,
                                   const std::vector<std::vector<Tokens>>& refs_by_record,
                                   const CiderScorer& scorer, const TextTokenizer& tok, int max_len, Rng& rng,
                                   ScstStats* stats = nullptr) {
    std::optional<Tensor<R>> loss;
    ScstStats local;
    auto to_words = [&](const std::vector<int>& ids) {
        Tokens words;
        for (int id : ids)
            if (id != TextTokenizer::kPad && id != TextTokenizer::kBos && id != TextTokenizer::kEos)
                words.push_back(tok.token(id));
        return words;
    };

    for (const auto& inst : batch) {
        Seq2SeqSample probe = make_caption_sample(inst.clip, inst.caption, tok);
        auto enc_plain = encode<R>(nullptr, model, probe);
        auto greedy = greedy_decode(model, enc_plain, max_len);
        auto sampled = sample_decode(model, enc_plain, max_len, rng);
        if (sampled.empty()) sampled = sample_decode(model, enc_plain, max_len, rng);
        if (sampled.empty()) {
            ++local.skipped;
            continue;
        }
        const auto& refs = refs_by_record.at(static_cast<size_t>(inst.record));
        const double r_s = scorer.item_score(to_words(sampled), refs);
        const double r_g = scorer.item_score(to_words(greedy), refs);
        local.mean_reward_sampled += r_s;
        local.mean_reward_greedy += r_g;
        ++local.used;
        if (r_s == r_g) continue;  // zero advantage, zero gradient contribution

        Seq2SeqSample rollout = probe;
        rollout.target_tokens = tok.with_bos_eos(sampled);
        auto enc = encode(tape, model, rollout);
        auto logits = forward_teacher_forced(tape, model, rollout, enc);
        auto ce = cross_entropy_from_logits(tape, logits, teacher_forced_targets(rollout), TextTokenizer::kPad);
        const double n_tok = static_cast<double>(sampled.size() + 1);
        auto part = scale(tape, ce, (r_s - r_g) * n_tok / static_cast<double>(batch.size()));
        loss = loss ? add(tape, *loss, part) : part;
    }
    if (stats) {
        *stats = local;
        if (local.used > 0) {
            stats->mean_reward_sampled /= local.used;
            stats->mean_reward_greedy /= local.used;
        }
    }
    return loss;
}

// Beam-decodes every item of the split and scores it.
template <class R>
EvalReport evaluate_split(const VideoToTextModel<R>& model, const LoadedDataset& data, const std::string& task,
                          const TextTokenizer& tok, int beam, int max_len, double length_penalty,
                          const std::string& dataset_name, const std::string& split_name) {
    EvalReport report;
    report.dataset = dataset_name;
    report.split = split_name;
    report.beam = beam;

    if (task == "qa") {
        std::vector<std::string> preds, answers;
        for (const auto& item : data.qa_items) {
            Seq2SeqSample s = make_qa_sample(item.clip, item.qa.question, item.qa.answer, tok);
            auto enc = encode<R>(nullptr, model, s);
            auto out = beam_search(model, enc, beam, max_len, length_penalty);
            preds.push_back(tok.detokenize(out.tokens));
            answers.push_back(item.qa.answer);
        }
        report.has_accuracy = true;
        report.accuracy = exact_match_accuracy(preds, answers);
        report.n_items = static_cast<int>(preds.size());
        return report;
    }

    std::vector<Tokens> hyps;
    std::vector<std::vector<Tokens>> refs;
    for (size_t i = 0; i < data.manifest.records.size(); ++i) {
        const auto& rec = data.manifest.records[i];
        if (rec.captions.empty()) continue;
        Seq2SeqSample s = make_caption_sample(data.clips[i], rec.captions[0], tok);
        auto enc = encode<R>(nullptr, model, s);
        auto out = beam_search(model, enc, beam, max_len, length_penalty);
        hyps.push_back(to_tokens(tok.detokenize(out.tokens)));
        refs.push_back(data.refs_by_record[i]);
    }
    report.bleu4 = bleu4(hyps, refs);
    report.rouge_l = rouge_l(hyps, refs);
    report.cider_d = cider_d(hyps, refs);
    report.n_items = static_cast<int>(hyps.size());
    return report;
}

// Drives the staged run: image_text -> ipt -> finetune (whatever the config
// lists, in order), with deterministic per-epoch sample streams, periodic
// validation, and resumable position.
class Trainer {
public:
    struct Hooks {
        std::function<void(int64_t step, double loss)> on_step;
        std::function<void(const EvalReport&, bool is_best)> on_eval;
        std::function<void(int stage_idx, int epoch_idx)> on_epoch_end;
        std::function<void(int stage_idx)> on_stage_end;
        // the fully built (shuffled) sample stream of each epoch, for shard dumps
        std::function<void(int stage_idx, int epoch_idx, const std::vector<Seq2SeqSample>&)> on_epoch_samples;
    };

    Trainer(RunConfig cfg, std::filesystem::path base_dir) : cfg_(std::move(cfg)), base_(std::move(base_dir)) {}

    // Fresh run: vocabulary over every stage manifest, freshly initialized model.
    void init_fresh() {
        std::vector<DatasetManifest> manifests;
        for (const auto& s : cfg_.stages) {
            manifests.push_back(load_manifest(resolve(s.train_manifest)));
            if (!s.val_manifest.empty()) manifests.push_back(load_manifest(resolve(s.val_manifest)));
        }
        std::vector<const DatasetManifest*> ptrs;
        for (const auto& m : manifests) ptrs.push_back(&m);
        tok_ = build_vocab(ptrs);
        cfg_.model.vocab = tok_.size();
        model_ = VideoToTextModel<float>::init(cfg_.model, cfg_.seed);
        opt_.cfg = cfg_.optimizer;
        stage_idx_ = 0;
        epoch_idx_ = 0;
        step_ = 0;
        best_metric_ = -1.0;
    }

    void resume_from(const Checkpoint& ck) {
        tok_ = TextTokenizer::from_tokens(ck.vocab);
        cfg_.model = ck.cfg;
        model_ = ck.model;
        for (auto& p : model_.params()) p.tensor->set_requires_grad(true);
        if (ck.has_optimizer) opt_ = ck.optimizer;
        step_ = ck.step;
        stage_idx_ = ck.extra.value("stage_idx", 0);
        epoch_idx_ = ck.extra.value("epoch_idx", 0);
        best_metric_ = ck.extra.value("best_metric", -1.0);
    }

    void run(const Hooks& hooks) {
        validate_stages();
        for (; stage_idx_ < static_cast<int>(cfg_.stages.size()); ++stage_idx_, epoch_idx_ = 0)
            run_stage(cfg_.stages[static_cast<size_t>(stage_idx_)], hooks);
    }

    void run_stage(const StageSpec& spec, const Hooks& hooks) {
        LoadedDataset& train = dataset(spec.train_manifest, stage_frames(spec));
        LoadedDataset* val = spec.val_manifest.empty() ? nullptr : &dataset(spec.val_manifest, cfg_.n_frames);
        opt_.cfg.lr = spec.lr;

        std::optional<CiderScorer> scst_scorer;
        if (spec.scst) scst_scorer.emplace(train.refs_by_record);

        auto params = model_.params();
        std::vector<Tensor<float>*> param_ptrs;
        for (auto& p : params) param_ptrs.push_back(p.tensor);

        for (; epoch_idx_ < spec.epochs; ++epoch_idx_) {
            Rng rng(cfg_.seed, "stage" + std::to_string(stage_idx_) + ":epoch", static_cast<uint64_t>(epoch_idx_));
            const size_t n_units = spec.scst ? train.instances.size() : 0;
            std::vector<Seq2SeqSample> samples;
            std::vector<Instance> scst_units;
            if (spec.scst) {
                scst_units = train.instances;
                rng.shuffle(scst_units);
            } else {
                samples = epoch_samples(spec, train, rng);
                if (hooks.on_epoch_samples) hooks.on_epoch_samples(stage_idx_, epoch_idx_, samples);
            }
            const size_t total = spec.scst ? n_units : samples.size();

            for (size_t begin = 0; begin < total; begin += static_cast<size_t>(spec.batch_size)) {
                const size_t end = std::min(total, begin + static_cast<size_t>(spec.batch_size));
                Tape<float> tape;
                std::optional<Tensor<float>> loss;
                if (spec.scst) {
                    std::vector<Instance> batch(scst_units.begin() + static_cast<std::ptrdiff_t>(begin),
                                                scst_units.begin() + static_cast<std::ptrdiff_t>(end));
                    loss = scst_step(&tape, model_, batch, train.refs_by_record, *scst_scorer, tok_,
                                     cfg_.eval_max_len, rng);
                } else {
                    std::vector<Seq2SeqSample> batch(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                                     samples.begin() + static_cast<std::ptrdiff_t>(end));
                    loss = compute_loss(&tape, model_, batch);
                }
                double loss_val = 0.0;
                if (loss) {
                    loss_val = static_cast<double>(loss->item());
                    if (!std::isfinite(loss_val))
                        throw TrainError("loss diverged (NaN) at step " + std::to_string(step_));
                    auto grads = backpropagate(tape, *loss);
                    std::vector<Tensor<float>> grad_list;
                    grad_list.reserve(params.size());
                    for (auto& p : params) grad_list.push_back(grad_of(tape, grads, *p.tensor));
                    optimizer_step(param_ptrs, grad_list, opt_);
                }
                ++step_;
                if (hooks.on_step) hooks.on_step(step_, loss_val);
                if (spec.eval_every > 0 && val && step_ % spec.eval_every == 0)
                    do_eval(spec, *val, hooks);
            }
            if (spec.eval_every == 0 && val) do_eval(spec, *val, hooks);
            if (hooks.on_epoch_end) hooks.on_epoch_end(stage_idx_, epoch_idx_);
        }
        if (hooks.on_stage_end) hooks.on_stage_end(stage_idx_);
    }

    std::vector<Seq2SeqSample> epoch_samples(const StageSpec& spec, LoadedDataset& train, Rng& rng) {
        std::vector<Seq2SeqSample> out;
        if (spec.stage == "ipt") return schedule_epoch(train.instances, train.captions, spec.mix, tok_, rng);
        if (spec.stage == "finetune" && spec.task == "qa") {
            for (const auto& item : train.qa_items)
                out.push_back(make_qa_sample(item.clip, item.qa.question, item.qa.answer, tok_));
        } else {
            for (const auto& inst : train.instances) out.push_back(make_caption_sample(inst.clip, inst.caption, tok_));
        }
        rng.shuffle(out);
        return out;
    }

    EvalReport evaluate(const std::string& manifest_rel, const std::string& task, const std::string& split) {
        LoadedDataset& data = dataset(manifest_rel, cfg_.n_frames);
        return evaluate_split(model_, data, task, tok_, cfg_.eval_beam, cfg_.eval_max_len,
                              cfg_.eval_length_penalty, manifest_rel, split);
    }

    nlohmann::ordered_json position() const {
        nlohmann::ordered_json j;
        j["stage_idx"] = stage_idx_;
        j["epoch_idx"] = epoch_idx_;
        j["best_metric"] = best_metric_;
        return j;
    }

    // checkpoint position at an epoch boundary records the NEXT epoch
    nlohmann::ordered_json position_after(int stage_idx, int epoch_idx) const {
        nlohmann::ordered_json j;
        j["stage_idx"] = stage_idx;
        j["epoch_idx"] = epoch_idx + 1;
        j["best_metric"] = best_metric_;
        return j;
    }

    VideoToTextModel<float>& model() { return model_; }
    const RunConfig& config() const { return cfg_; }
    TextTokenizer& tokenizer() { return tok_; }
    AdamWState<float>& optimizer() { return opt_; }
    int64_t step() const { return step_; }
    uint64_t seed() const { return cfg_.seed; }

    LoadedDataset& dataset(const std::string& rel, int n_frames) {
        const std::string key = rel + "#" + std::to_string(n_frames);
        auto it = datasets_.find(key);
        if (it != datasets_.end()) return it->second;
        auto [ins, ok] = datasets_.emplace(key, load_dataset(resolve(rel), cfg_.frame_px, n_frames));
        return ins->second;
    }

private:
    void validate_stages() const {
        if (cfg_.stages.empty()) throw ConfigError("config lists no stages");
        for (const auto& s : cfg_.stages) {
            s.validate();
            if (s.stage == "ipt" && cfg_.n_frames < 4)
                throw ConfigError("ipt requires clips with at least 4 frames, data.n_frames = " +
                                  std::to_string(cfg_.n_frames));
        }
    }

    int stage_frames(const StageSpec& spec) const { return spec.stage == "image_text" ? 1 : cfg_.n_frames; }

    void do_eval(const StageSpec& spec, LoadedDataset& val, const Hooks& hooks) {
        auto report = evaluate_split(model_, val, spec.task, tok_, cfg_.eval_beam, cfg_.eval_max_len,
                                     cfg_.eval_length_penalty, spec.val_manifest, "val");
        report.step = step_;
        report.seed = cfg_.seed;
        const double metric = spec.task == "qa" ? report.accuracy : report.cider_d;
        const bool is_best = metric > best_metric_;
        if (is_best) best_metric_ = metric;
        if (hooks.on_eval) hooks.on_eval(report, is_best);
    }

    std::filesystem::path resolve(const std::string& rel) const {
        std::filesystem::path p(rel);
        return p.is_absolute() ? p : base_ / p;
    }

    RunConfig cfg_;
    std::filesystem::path base_;
    TextTokenizer tok_;
    VideoToTextModel<float> model_;
    AdamWState<float> opt_;
    std::map<std::string, LoadedDataset> datasets_;
    int stage_idx_ = 0;
    int epoch_idx_ = 0;
    int64_t step_ = 0;
    double best_metric_ = -1.0;
};

}  // namespace vofa
