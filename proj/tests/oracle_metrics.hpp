#pragma once

// Brute-force reference implementations of BLEU@4 and CIDEr-D used to verify
// the production scorers. Written against the metric definitions directly:
// n-grams as token vectors in ordered maps, no shared helpers with
// vofa/metrics.hpp.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Sentence = std::vector<std::string>;
using Gram = std::vector<std::string>;

inline std::map<Gram, int> grams_of(const Sentence& s, int n) {
    std::map<Gram, int> out;
    if (static_cast<int>(s.size()) < n) return out;
    for (size_t i = 0; i + n <= s.size(); ++i) {
        Gram g;
        for (int j = 0; j < n; ++j) g.push_back(s[i + static_cast<size_t>(j)]);
        out[g] += 1;
    }
    return out;
}

inline double bleu4(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs) {
    if (hyps.empty()) return 0.0;
    double clipped[5] = {0, 0, 0, 0, 0};
    double totals[5] = {0, 0, 0, 0, 0};
    long hyp_chars = 0, ref_chars = 0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        hyp_chars += static_cast<long>(hyps[i].size());
        long best = -1;
        for (const auto& r : refs[i]) {
            const long rl = static_cast<long>(r.size());
            const long c = static_cast<long>(hyps[i].size());
            if (best < 0 || std::labs(rl - c) < std::labs(best - c) ||
                (std::labs(rl - c) == std::labs(best - c) && rl < best))
                best = rl;
        }
        ref_chars += best;
        for (int n = 1; n <= 4; ++n) {
            auto hg = grams_of(hyps[i], n);
            for (const auto& [g, count] : hg) {
                int allowed = 0;
                for (const auto& r : refs[i]) {
                    auto rg = grams_of(r, n);
                    auto it = rg.find(g);
                    if (it != rg.end() && it->second > allowed) allowed = it->second;
                }
                clipped[n] += std::min(count, allowed);
                totals[n] += count;
            }
        }
    }
    double geo = 0;
    for (int n = 1; n <= 4; ++n) {
        if (clipped[n] == 0 || totals[n] == 0) return 0.0;
        geo += 0.25 * std::log(clipped[n] / totals[n]);
    }
    if (hyp_chars == 0) return 0.0;
    const double bp = hyp_chars >= ref_chars ? 1.0 : std::exp(1.0 - static_cast<double>(ref_chars) / hyp_chars);
    return bp * std::exp(geo);
}

struct TfIdf {
    std::map<Gram, double> w[4];
    double norm[4] = {0, 0, 0, 0};
    int len = 0;
};

inline double cider_d(const std::vector<Sentence>& hyps, const std::vector<std::vector<Sentence>>& refs,
                      double sigma = 6.0) {
    if (hyps.empty()) return 0.0;
    // document frequency: number of items whose reference set contains the gram
    std::map<Gram, int> df;
    for (const auto& rs : refs) {
        std::set<Gram> present;
        for (const auto& r : rs)
            for (int n = 1; n <= 4; ++n)
                for (const auto& [g, c] : grams_of(r, n)) present.insert(g);
        for (const auto& g : present) df[g] += 1;
    }
    const double logn = refs.size() <= 1 ? 1.0 : std::log(static_cast<double>(refs.size()));

    auto vectorize = [&](const Sentence& s) {
        TfIdf v;
        v.len = static_cast<int>(s.size());
        for (int n = 1; n <= 4; ++n) {
            for (const auto& [g, c] : grams_of(s, n)) {
                auto it = df.find(g);
                const double d = it == df.end() ? 0.0 : it->second;
                const double weight = c * (logn - std::log(std::max(1.0, d)));
                v.w[n - 1][g] = weight;
                v.norm[n - 1] += weight * weight;
            }
            v.norm[n - 1] = std::sqrt(v.norm[n - 1]);
        }
        return v;
    };

    double corpus = 0.0;
    for (size_t i = 0; i < hyps.size(); ++i) {
        const TfIdf h = vectorize(hyps[i]);
        double item = 0.0;
        for (const auto& r : refs[i]) {
            const TfIdf rv = vectorize(r);
            const double delta = h.len - rv.len;
            const double pen = std::exp(-delta * delta / (2 * sigma * sigma));
            double sim = 0.0;
            for (int n = 0; n < 4; ++n) {
                double dot = 0.0;
                for (const auto& [g, hw] : h.w[n]) {
                    auto it = rv.w[n].find(g);
                    if (it != rv.w[n].end()) dot += std::min(hw, it->second) * it->second;
                }
                if (h.norm[n] > 0 && rv.norm[n] > 0) dot /= h.norm[n] * rv.norm[n];
                sim += dot * pen;
            }
            item += sim / 4.0;
        }
        corpus += 10.0 * item / static_cast<double>(refs[i].size());
    }
    return corpus / static_cast<double>(hyps.size());
}

}  // namespace oracle
