#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vofa/manifest.hpp"
#include "vofa/rng.hpp"
#include "vofa/text.hpp"
#include "vofa/video.hpp"

namespace vofa {

struct TaskError : std::runtime_error {
    explicit TaskError(const std::string& what) : std::runtime_error(what) {}
};

enum class TaskTag { caption, match, fom_gen, fom_con, qa };

inline const char* task_name(TaskTag t) {
    switch (t) {
        case TaskTag::caption: return "caption";
        case TaskTag::match: return "match";
        case TaskTag::fom_gen: return "fom_gen";
        case TaskTag::fom_con: return "fom_con";
        case TaskTag::qa: return "qa";
    }
    return "?";
}

// The unified seq2seq unit. `frame_order[i]` is the original position of the
// i-th frame actually shown to the model; identity order means the clip is
// untouched.
struct Seq2SeqSample {
    std::vector<int> source_tokens;
    std::shared_ptr<const VideoClip> clip;
    std::vector<int> frame_order;
    std::vector<int> target_tokens;  // BOS ... EOS
    TaskTag tag = TaskTag::caption;
};

inline std::vector<int> identity_order(int n) {
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    return order;
}

inline constexpr const char* kCaptionPrompt = "What does the video describe?";
inline constexpr const char* kFomGenPrompt = "What is the correct frame order in the video?";
inline constexpr const char* kFomConPrompt = "Are the frames in the video in the correct order?";

inline Seq2SeqSample make_caption_sample(std::shared_ptr<const VideoClip> clip, const std::string& caption,
                                         const TextTokenizer& tok) {
    if (caption.empty()) throw TaskError("caption must be non-empty");
    Seq2SeqSample s;
    s.source_tokens = tok.tokenize(kCaptionPrompt);
    s.clip = std::move(clip);
    s.frame_order = identity_order(s.clip->t);
    s.target_tokens = tok.with_bos_eos(tok.tokenize(caption));
    s.tag = TaskTag::caption;
    return s;
}

// Positive with probability 1/2 (target "yes"); otherwise a negative caption
// drawn uniformly from the corpus, resampled until it differs as a string.
inline Seq2SeqSample make_matching_sample(std::shared_ptr<const VideoClip> clip, const std::string& caption,
                                          const std::vector<std::string>& corpus_captions,
                                          const TextTokenizer& tok, Rng& rng) {
    Seq2SeqSample s;
    s.clip = std::move(clip);
    s.frame_order = identity_order(s.clip->t);
    s.tag = TaskTag::match;

    const bool positive = rng.next_double() < 0.5;
    std::string shown = caption;
    if (!positive) {
        bool any_other = false;
        for (const auto& c : corpus_captions)
            if (c != caption) {
                any_other = true;
                break;
            }
        if (!any_other) throw TaskError("matching negatives need at least two distinct captions in the corpus");
        do {
            shown = corpus_captions[rng.next_below(corpus_captions.size())];
        } while (shown == caption);
    }
    s.source_tokens = tok.tokenize("Does the video describe " + shown + "?");
    s.target_tokens = tok.with_bos_eos({tok.id(positive ? "yes" : "no")});
    return s;
}

namespace detail {

// Shuffles k = max(2, round(0.25 n)) distinct positions with a permutation
// that moves every selected position. Returns new-index -> original-index.
inline std::vector<int> shuffled_frame_order(int n, Rng& rng) {
    const int k = std::max(2, static_cast<int>(std::lround(0.25 * n)));
    std::vector<int> all = identity_order(n);
    rng.shuffle(all);
    std::vector<int> selected(all.begin(), all.begin() + k);
    std::sort(selected.begin(), selected.end());

    std::vector<int> target = selected;
    if (k == 2) {
        std::swap(target[0], target[1]);
    } else {
        bool fixed_point;
        do {
            rng.shuffle(target);
            fixed_point = false;
            for (int i = 0; i < k; ++i) fixed_point = fixed_point || target[static_cast<size_t>(i)] == selected[static_cast<size_t>(i)];
        } while (fixed_point);
    }

    std::vector<int> order = identity_order(n);
    for (int i = 0; i < k; ++i) order[static_cast<size_t>(selected[static_cast<size_t>(i)])] = target[static_cast<size_t>(i)];
    return order;
}

}  // namespace detail

// Target is the original position of every frame in the shuffled clip, as
// digit words ("0 1 5 3 4 2 6 7" for a 2-and-5 swap of 8 frames).
inline Seq2SeqSample make_fom_generative_sample(std::shared_ptr<const VideoClip> clip, const TextTokenizer& tok,
                                                Rng& rng) {
    if (clip->t < 4) throw TaskError("frame order modeling needs at least 4 frames, got " + std::to_string(clip->t));
    Seq2SeqSample s;
    s.clip = std::move(clip);
    s.frame_order = detail::shuffled_frame_order(s.clip->t, rng);
    s.source_tokens = tok.tokenize(kFomGenPrompt);
    std::vector<int> digits;
    for (int p : s.frame_order) digits.push_back(tok.id(std::to_string(p)));
    s.target_tokens = tok.with_bos_eos(std::move(digits));
    s.tag = TaskTag::fom_gen;
    return s;
}

inline Seq2SeqSample make_fom_contrastive_sample(std::shared_ptr<const VideoClip> clip, const TextTokenizer& tok,
                                                 Rng& rng) {
    if (clip->t < 4) throw TaskError("frame order modeling needs at least 4 frames, got " + std::to_string(clip->t));
    Seq2SeqSample s;
    s.clip = std::move(clip);
    s.source_tokens = tok.tokenize(kFomConPrompt);
    const bool positive = rng.next_double() < 0.5;
    s.frame_order = positive ? identity_order(s.clip->t) : detail::shuffled_frame_order(s.clip->t, rng);
    s.target_tokens = tok.with_bos_eos({tok.id(positive ? "yes" : "no")});
    s.tag = TaskTag::fom_con;
    return s;
}

inline Seq2SeqSample make_qa_sample(std::shared_ptr<const VideoClip> clip, const std::string& question,
                                    const std::string& answer, const TextTokenizer& tok) {
    if (question.empty() || answer.empty()) throw TaskError("qa question and answer must be non-empty");
    Seq2SeqSample s;
    s.source_tokens = tok.tokenize(question);
    s.clip = std::move(clip);
    s.frame_order = identity_order(s.clip->t);
    s.target_tokens = tok.with_bos_eos(tok.tokenize(answer));
    s.tag = TaskTag::qa;
    return s;
}

enum class FomVariant { contrastive, generative, both };

// Per-instance sample counts for one pre-training epoch: one captioning and
// one matching sample per instance, one FOM sample per `fom_every` instances.
struct MixSchedule {
    int caption_per_instance = 1;
    int match_per_instance = 1;
    int fom_every = 8;  // 0 disables FOM
    FomVariant fom_variant = FomVariant::contrastive;
};

// A source instance: one (clip, caption) pair. `record` indexes the manifest
// record the pair came from.
struct Instance {
    std::shared_ptr<const VideoClip> clip;
    std::string caption;
    int record = -1;
};

// One JSON line per sample for offline inspection of an epoch stream.
inline void dump_samples(std::ostream& out, const std::vector<Seq2SeqSample>& samples) {
    for (const auto& s : samples) {
        nlohmann::ordered_json j;
        j["task_tag"] = task_name(s.tag);
        j["source_tokens"] = s.source_tokens;
        j["target_tokens"] = s.target_tokens;
        j["clip_id"] = s.clip ? s.clip->clip_id : "";
        j["frame_order"] = s.frame_order;
        out << j.dump() << "\n";
    }
}

// Emits exactly N*caption + N*match + floor(N/fom_every) samples, globally
// shuffled with the given stream.
inline std::vector<Seq2SeqSample> schedule_epoch(const std::vector<Instance>& instances,
                                                 const std::vector<std::string>& corpus_captions,
                                                 const MixSchedule& schedule, const TextTokenizer& tok, Rng& rng) {
    std::vector<Seq2SeqSample> out;
    int fom_counter = 0;
    int fom_alternate = 0;
    for (size_t i = 0; i < instances.size(); ++i) {
        const auto& inst = instances[i];
        for (int k = 0; k < schedule.caption_per_instance; ++k)
            out.push_back(make_caption_sample(inst.clip, inst.caption, tok));
        for (int k = 0; k < schedule.match_per_instance; ++k)
            out.push_back(make_matching_sample(inst.clip, inst.caption, corpus_captions, tok, rng));
        if (schedule.fom_every > 0 && ++fom_counter == schedule.fom_every) {
            fom_counter = 0;
            FomVariant v = schedule.fom_variant;
            if (v == FomVariant::both) v = (fom_alternate++ % 2 == 0) ? FomVariant::contrastive : FomVariant::generative;
            out.push_back(v == FomVariant::contrastive ? make_fom_contrastive_sample(inst.clip, tok, rng)
                                                       : make_fom_generative_sample(inst.clip, tok, rng));
        }
    }
    rng.shuffle(out);
    return out;
}

}  // namespace vofa
