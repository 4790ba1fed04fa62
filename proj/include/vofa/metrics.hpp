#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vofa/text.hpp"

namespace vofa {

struct MetricError : std::runtime_error {
    explicit MetricError(const std::string& what) : std::runtime_error(what) {}
};

using Tokens = std::vector<std::string>;

namespace ngram {

constexpr int kMaxOrder = 4;

// n-gram multiset for orders 1..4, keyed by '\x1f'-joined tokens.
inline std::unordered_map<std::string, int> count(const Tokens& tokens, int order) {
    std::unordered_map<std::string, int> counts;
    const int n = static_cast<int>(tokens.size());
    for (int i = 0; i + order <= n; ++i) {
        std::string key = tokens[static_cast<size_t>(i)];
        for (int j = 1; j < order; ++j) {
            key.push_back('\x1f');
            key += tokens[static_cast<size_t>(i + j)];
        }
        ++counts[key];
    }
    return counts;
}

inline std::vector<std::unordered_map<std::string, int>> count_all(const Tokens& tokens) {
    std::vector<std::unordered_map<std::string, int>> out;
    for (int n = 1; n <= kMaxOrder; ++n) out.push_back(count(tokens, n));
    return out;
}

}  // namespace ngram

// Corpus-level BLEU@4: clipped n-gram precision with brevity penalty against
// the closest reference length. Any zero precision zeroes the geometric mean.
inline double bleu4(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs) {
    if (hyps.size() != refs.size()) throw MetricError("bleu4: hypothesis/reference count mismatch");
    if (hyps.empty()) return 0.0;
    double num[ngram::kMaxOrder] = {0, 0, 0, 0};
    double den[ngram::kMaxOrder] = {0, 0, 0, 0};
    int64_t hyp_len = 0, ref_len = 0;

    for (size_t i = 0; i < hyps.size(); ++i) {
        if (refs[i].empty()) throw MetricError("bleu4: item " + std::to_string(i) + " has no references");
        const int c = static_cast<int>(hyps[i].size());
        hyp_len += c;
        int best_r = static_cast<int>(refs[i][0].size());
        for (const auto& r : refs[i]) {
            const int rl = static_cast<int>(r.size());
            if (std::abs(rl - c) < std::abs(best_r - c) || (std::abs(rl - c) == std::abs(best_r - c) && rl < best_r))
                best_r = rl;
        }
        ref_len += best_r;

        for (int n = 1; n <= ngram::kMaxOrder; ++n) {
            auto hc = ngram::count(hyps[i], n);
            std::unordered_map<std::string, int> max_ref;
            for (const auto& r : refs[i])
                for (const auto& [g, k] : ngram::count(r, n)) max_ref[g] = std::max(max_ref[g], k);
            for (const auto& [g, k] : hc) {
                den[n - 1] += k;
                auto it = max_ref.find(g);
                if (it != max_ref.end()) num[n - 1] += std::min(k, it->second);
            }
        }
    }

    double log_p = 0.0;
    for (int n = 0; n < ngram::kMaxOrder; ++n) {
        if (num[n] <= 0.0 || den[n] <= 0.0) return 0.0;
        log_p += std::log(num[n] / den[n]);
    }
    if (hyp_len == 0) return 0.0;
    const double bp = std::exp(std::min(0.0, 1.0 - static_cast<double>(ref_len) / hyp_len));
    return bp * std::exp(log_p / ngram::kMaxOrder);
}

// LCS-based F-measure with beta = 1.2 (max precision/recall over references,
// the standard captioning convention); corpus score is the item mean.
inline double rouge_l_item(const Tokens& hyp, const std::vector<Tokens>& refs, double beta = 1.2) {
    if (hyp.empty() || refs.empty()) return 0.0;
    auto lcs = [](const Tokens& a, const Tokens& b) {
        const size_t n = a.size(), m = b.size();
        std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
        for (size_t i = 1; i <= n; ++i) {
            for (size_t j = 1; j <= m; ++j)
                cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
            std::swap(prev, cur);
        }
        return prev[m];
    };
    double pmax = 0.0, rmax = 0.0;
    for (const auto& r : refs) {
        if (r.empty()) continue;
        const double l = lcs(hyp, r);
        pmax = std::max(pmax, l / static_cast<double>(hyp.size()));
        rmax = std::max(rmax, l / static_cast<double>(r.size()));
    }
    if (pmax == 0.0 || rmax == 0.0) return 0.0;
    return (1.0 + beta * beta) * pmax * rmax / (rmax + beta * beta * pmax);
}

inline double rouge_l(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs) {
    if (hyps.size() != refs.size()) throw MetricError("rouge_l: hypothesis/reference count mismatch");
    if (hyps.empty()) return 0.0;
    double total = 0.0;
    for (size_t i = 0; i < hyps.size(); ++i) total += rouge_l_item(hyps[i], refs[i]);
    return total / static_cast<double>(hyps.size());
}

// CIDEr-D: TF-IDF n-gram cosine with count clipping and a gaussian length
// penalty (sigma = 6), scaled to [0, 10]. Document frequencies come from the
// reference corpus; a single-item corpus degenerates (idf -> 1) and is
// permitted.
class CiderScorer {
public:
    explicit CiderScorer(const std::vector<std::vector<Tokens>>& ref_corpus, double sigma = 6.0) : sigma_(sigma) {
        for (const auto& refs : ref_corpus) {
            std::set<std::string> seen;
            for (const auto& r : refs)
                for (int n = 1; n <= ngram::kMaxOrder; ++n)
                    for (const auto& [g, k] : ngram::count(r, n)) seen.insert(g);
            for (const auto& g : seen) ++df_[g];
        }
        n_items_ = ref_corpus.size();
        log_corpus_ = n_items_ <= 1 ? 1.0 : std::log(static_cast<double>(n_items_));
    }

    double item_score(const Tokens& hyp, const std::vector<Tokens>& refs) const {
        if (refs.empty()) throw MetricError("cider_d: item has no references");
        const auto hv = vectorize(hyp);
        double acc = 0.0;
        for (const auto& r : refs) acc += sim(hv, vectorize(r));
        return 10.0 * acc / static_cast<double>(refs.size());
    }

    size_t corpus_size() const { return n_items_; }

private:
    struct Vec {
        std::vector<std::unordered_map<std::string, double>> tfidf;
        std::vector<double> norm;
        int length = 0;
    };

    Vec vectorize(const Tokens& tokens) const {
        Vec v;
        v.tfidf.resize(ngram::kMaxOrder);
        v.norm.assign(ngram::kMaxOrder, 0.0);
        v.length = static_cast<int>(tokens.size());
        for (int n = 1; n <= ngram::kMaxOrder; ++n) {
            for (const auto& [g, k] : ngram::count(tokens, n)) {
                auto it = df_.find(g);
                const double df = it == df_.end() ? 0.0 : static_cast<double>(it->second);
                const double idf = log_corpus_ - std::log(std::max(1.0, df));
                const double w = k * idf;
                v.tfidf[n - 1][g] = w;
                v.norm[n - 1] += w * w;
            }
            v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
        }
        return v;
    }

    double sim(const Vec& hyp, const Vec& ref) const {
        const double delta = hyp.length - ref.length;
        const double penalty = std::exp(-(delta * delta) / (2.0 * sigma_ * sigma_));
        double total = 0.0;
        for (int n = 0; n < ngram::kMaxOrder; ++n) {
            double val = 0.0;
            for (const auto& [g, hw] : hyp.tfidf[n]) {
                auto it = ref.tfidf[n].find(g);
                if (it != ref.tfidf[n].end()) val += std::min(hw, it->second) * it->second;
            }
            if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) val /= hyp.norm[n] * ref.norm[n];
            total += val * penalty;
        }
        return total / ngram::kMaxOrder;
    }

    std::unordered_map<std::string, int> df_;
    size_t n_items_ = 0;
    double log_corpus_ = 1.0;
    double sigma_;
};

inline double cider_d(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs) {
    if (hyps.size() != refs.size()) throw MetricError("cider_d: hypothesis/reference count mismatch");
    if (hyps.empty()) return 0.0;
    CiderScorer scorer(refs);
    double total = 0.0;
    for (size_t i = 0; i < hyps.size(); ++i) total += scorer.item_score(hyps[i], refs[i]);
    return total / static_cast<double>(hyps.size());
}

// lowercase, strip punctuation, collapse whitespace
inline std::string normalize_answer(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char ch : s) {
        const unsigned char u = static_cast<unsigned char>(ch);
        if (std::isalnum(u)) {
            if (pending_space && !out.empty()) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        } else {
            pending_space = true;
        }
    }
    return out;
}

inline double exact_match_accuracy(const std::vector<std::string>& predictions,
                                   const std::vector<std::string>& answers) {
    if (predictions.size() != answers.size())
        throw MetricError("exact_match_accuracy: " + std::to_string(predictions.size()) + " predictions vs " +
                          std::to_string(answers.size()) + " answers");
    if (predictions.empty()) return 0.0;
    int hit = 0;
    for (size_t i = 0; i < predictions.size(); ++i)
        hit += normalize_answer(predictions[i]) == normalize_answer(answers[i]) ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(predictions.size());
}

inline Tokens to_tokens(const std::string& text) { return TextTokenizer::split_words(text); }

// Per-dataset metric report.
struct EvalReport {
    std::string dataset;
    std::string split;
    int64_t step = 0;
    double bleu4 = 0.0;
    double rouge_l = 0.0;
    double cider_d = 0.0;
    bool has_accuracy = false;
    double accuracy = 0.0;
    int beam = 1;
    int n_items = 0;
    uint64_t seed = 0;
    std::string notes = "METEOR excluded (external lexical resources)";
};

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
    nlohmann::ordered_json metrics;
    metrics["bleu4"] = r.bleu4;
    metrics["rouge_l"] = r.rouge_l;
    metrics["cider_d"] = r.cider_d;
    if (r.has_accuracy) metrics["accuracy"] = r.accuracy;
    nlohmann::ordered_json j;
    j["dataset"] = r.dataset;
    j["split"] = r.split;
    j["step"] = r.step;
    j["metrics"] = metrics;
    j["beam"] = r.beam;
    j["n_items"] = r.n_items;
    j["seed"] = r.seed;
    j["notes"] = r.notes;
    return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.step = j.at("step").get<int64_t>();
    const auto& m = j.at("metrics");
    r.bleu4 = m.at("bleu4").get<double>();
    r.rouge_l = m.at("rouge_l").get<double>();
    r.cider_d = m.at("cider_d").get<double>();
    if (m.contains("accuracy")) {
        r.has_accuracy = true;
        r.accuracy = m.at("accuracy").get<double>();
    }
    r.beam = j.at("beam").get<int>();
    r.n_items = j.at("n_items").get<int>();
    r.seed = j.at("seed").get<uint64_t>();
    r.notes = j.value("notes", "");
    return r;
}

}  // namespace vofa
