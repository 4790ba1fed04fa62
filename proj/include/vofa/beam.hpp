#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vofa/model.hpp"
#include "vofa/rng.hpp"
#include "vofa/tensor.hpp"
#include "vofa/text.hpp"

namespace vofa {

struct BeamHypothesis {
    std::vector<int> tokens;  // generated tokens, EOS stripped
    double sum_logprob = 0.0;
    int steps = 0;  // log-probs accumulated (includes the EOS step)
    bool finished = false;

    double score(double length_penalty) const {
        return sum_logprob / std::pow(static_cast<double>(std::max(1, steps)), length_penalty);
    }
};

struct DecodeResult {
    std::vector<int> tokens;
    double score = 0.0;
    bool finished = true;  // false: max_len hit with no EOS, best unfinished returned
    std::vector<BeamHypothesis> hypotheses;
};

namespace detail {

template <class R>
std::vector<double> next_log_probs(const VideoToTextModel<R>& m, const Tensor<R>& enc_states,
                                   const std::vector<int>& generated) {
    std::vector<int> input;
    input.reserve(generated.size() + 1);
    input.push_back(TextTokenizer::kBos);
    input.insert(input.end(), generated.begin(), generated.end());
    auto logits = decoder_logits<R>(nullptr, m, input, enc_states);
    const int v = logits.dim(1);
    const int last = logits.dim(0) - 1;
    std::vector<double> lp(static_cast<size_t>(v));
    double mx = logits(last, 0);
    for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(logits(last, j)));
    double denom = 0.0;
    for (int j = 0; j < v; ++j) denom += std::exp(static_cast<double>(logits(last, j)) - mx);
    const double log_denom = std::log(denom) + mx;
    for (int j = 0; j < v; ++j) lp[static_cast<size_t>(j)] = static_cast<double>(logits(last, j)) - log_denom;
    return lp;
}

}  // namespace detail

// Length-normalized beam search; ties broken toward the lexicographically
// smaller token sequence, so results are deterministic.
template <class R>
DecodeResult beam_search(const VideoToTextModel<R>& m, const Tensor<R>& enc_states, int beam, int max_len,
                         double length_penalty = 1.0) {
    if (beam < 1) throw ModelError("beam must be >= 1");

    std::vector<BeamHypothesis> live = {BeamHypothesis{}};
    std::vector<BeamHypothesis> finished;

    for (int step = 0; step < max_len && !live.empty(); ++step) {
        struct Cand {
            double sum;
            std::vector<int> tokens;  // includes the new token
            int next;
        };
        std::vector<Cand> cands;
        cands.reserve(live.size() * 8);
        for (const auto& hyp : live) {
            auto lp = detail::next_log_probs(m, enc_states, hyp.tokens);
            for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
                if (v == TextTokenizer::kPad || v == TextTokenizer::kBos) continue;
                Cand c;
                c.sum = hyp.sum_logprob + lp[static_cast<size_t>(v)];
                c.tokens = hyp.tokens;
                c.tokens.push_back(v);
                c.next = v;
                cands.push_back(std::move(c));
            }
        }
        const size_t keep = std::min(static_cast<size_t>(beam), cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.sum != b.sum) return a.sum > b.sum;
                              return a.tokens < b.tokens;
                          });
        cands.resize(keep);

        live.clear();
        for (auto& c : cands) {
            BeamHypothesis hyp;
            hyp.sum_logprob = c.sum;
            hyp.steps = step + 1;
            if (c.next == TextTokenizer::kEos) {
                hyp.tokens.assign(c.tokens.begin(), c.tokens.end() - 1);
                hyp.finished = true;
                finished.push_back(std::move(hyp));
            } else {
                hyp.tokens = std::move(c.tokens);
                live.push_back(std::move(hyp));
            }
        }
    }

    auto better = [&](const BeamHypothesis& a, const BeamHypothesis& b) {
        const double sa = a.score(length_penalty), sb = b.score(length_penalty);
        if (sa != sb) return sa > sb;
        return a.tokens < b.tokens;
    };

    DecodeResult result;
    std::vector<BeamHypothesis> pool = finished.empty() ? live : finished;
    std::sort(pool.begin(), pool.end(), better);
    if (pool.size() > static_cast<size_t>(beam)) pool.resize(static_cast<size_t>(beam));
    result.hypotheses = pool;
    result.finished = !finished.empty();
    if (!pool.empty()) {
        result.tokens = pool.front().tokens;
        result.score = pool.front().score(length_penalty);
    } else {
        result.finished = false;
    }
    return result;
}

// One multinomial rollout from the decoder's softmax at each step, with pad
// and bos masked out; may return an empty sequence when EOS is drawn first.
template <class R>
std::vector<int> sample_decode(const VideoToTextModel<R>& m, const Tensor<R>& enc_states, int max_len, Rng& rng) {
    std::vector<int> tokens;
    for (int step = 0; step < max_len; ++step) {
        auto lp = detail::next_log_probs(m, enc_states, tokens);
        double total = 0.0;
        for (int v = 0; v < static_cast<int>(lp.size()); ++v)
            if (v != TextTokenizer::kPad && v != TextTokenizer::kBos) total += std::exp(lp[static_cast<size_t>(v)]);
        const double u = rng.next_double() * total;
        int chosen = TextTokenizer::kEos;
        double acc = 0.0;
        for (int v = 0; v < static_cast<int>(lp.size()); ++v) {
            if (v == TextTokenizer::kPad || v == TextTokenizer::kBos) continue;
            acc += std::exp(lp[static_cast<size_t>(v)]);
            if (u < acc) {
                chosen = v;
                break;
            }
        }
        if (chosen == TextTokenizer::kEos) break;
        tokens.push_back(chosen);
    }
    return tokens;
}

template <class R>
std::vector<int> greedy_decode(const VideoToTextModel<R>& m, const Tensor<R>& enc_states, int max_len) {
    return beam_search(m, enc_states, 1, max_len).tokens;
}

}  // namespace vofa
