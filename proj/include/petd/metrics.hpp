#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "petd/errors.hpp"
#include "petd/mat.hpp"

namespace petd {

// Fraction of examples whose target appears in the first k ranked ids.
inline real hit_at_k(const std::vector<std::vector<int>>& rankings, const std::vector<int>& targets, int k) {
    if (k < 1) throw UsageError("k must be >= 1");
    if (rankings.size() != targets.size()) throw UsageError("rankings and targets differ in length");
    if (rankings.empty()) return 0.0;
    int hits = 0;
    for (size_t i = 0; i < rankings.size(); ++i) {
        const auto& r = rankings[i];
        const int kk = std::min<int>(k, static_cast<int>(r.size()));
        for (int j = 0; j < kk; ++j)
            if (r[j] == targets[i]) {
                ++hits;
                break;
            }
    }
    return static_cast<real>(hits) / rankings.size();
}

namespace metric_detail {

inline std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& toks, int n) {
    std::map<std::vector<std::string>, int> counts;
    if (static_cast<int>(toks.size()) < n) return counts;
    for (size_t i = 0; i + n <= toks.size(); ++i)
        ++counts[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
    return counts;
}

}  // namespace metric_detail

// Corpus-level BLEU-n: geometric mean of clipped modified precisions of
// orders 1..n, times the brevity penalty.
inline real bleu_n(const std::vector<std::vector<std::string>>& hypotheses,
                   const std::vector<std::vector<std::string>>& references, int n) {
    if (n < 1 || n > 4) throw UsageError("bleu order must be in [1, 4]");
    if (hypotheses.size() != references.size()) throw UsageError("hypotheses and references differ in length");
    if (hypotheses.empty()) return 0.0;
    size_t hyp_len = 0, ref_len = 0;
    std::vector<long> clipped(n, 0), total(n, 0);
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        hyp_len += hypotheses[i].size();
        ref_len += references[i].size();
        for (int order = 1; order <= n; ++order) {
            auto hc = metric_detail::ngram_counts(hypotheses[i], order);
            auto rc = metric_detail::ngram_counts(references[i], order);
            for (const auto& [gram, count] : hc) {
                auto it = rc.find(gram);
                clipped[order - 1] += std::min(count, it == rc.end() ? 0 : it->second);
                total[order - 1] += count;
            }
        }
    }
    if (hyp_len == 0) return 0.0;
    real log_prec = 0.0;
    for (int order = 0; order < n; ++order) {
        if (total[order] == 0 || clipped[order] == 0) return 0.0;
        log_prec += std::log(static_cast<real>(clipped[order]) / total[order]);
    }
    const real bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - static_cast<real>(ref_len) / hyp_len);
    return bp * std::exp(log_prec / n);
}

// Unique n-grams over total n-grams, pooled across the whole corpus.
inline real distinct_n(const std::vector<std::vector<std::string>>& hypotheses, int n) {
    if (n < 1) throw UsageError("distinct order must be >= 1");
    std::map<std::vector<std::string>, int> pool;
    long total = 0;
    for (const auto& h : hypotheses)
        for (const auto& [gram, count] : metric_detail::ngram_counts(h, n)) {
            pool[gram] += count;
            total += count;
        }
    if (total == 0) return 0.0;
    return static_cast<real>(pool.size()) / total;
}

struct PrfScores {
    real precision = 0.0;
    real recall = 0.0;
    real f1 = 0.0;
};

// Micro-averaged precision/recall/F1 over selected-vs-gold id sets.
inline PrfScores persona_prf(const std::vector<std::vector<int>>& selected,
                             const std::vector<std::vector<int>>& gold) {
    if (selected.size() != gold.size()) throw UsageError("selected and gold differ in length");
    if (selected.empty()) throw DataError("persona scoring requires gold annotations");
    long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < selected.size(); ++i) {
        for (int s : selected[i]) {
            if (std::find(gold[i].begin(), gold[i].end(), s) != gold[i].end())
                ++tp;
            else
                ++fp;
        }
        for (int g : gold[i])
            if (std::find(selected[i].begin(), selected[i].end(), g) == selected[i].end()) ++fn;
    }
    PrfScores out;
    out.precision = (tp + fp) > 0 ? static_cast<real>(tp) / (tp + fp) : 0.0;
    out.recall = (tp + fn) > 0 ? static_cast<real>(tp) / (tp + fn) : 0.0;
    out.f1 = (out.precision + out.recall) > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

struct MetricReport {
    real hit1 = 0.0, hit3 = 0.0, hit5 = 0.0;
    real ppl = 0.0;
    real bleu1 = 0.0, bleu2 = 0.0;
    real distinct1 = 0.0, distinct2 = 0.0;
    bool has_prf = false;
    PrfScores prf;
    int n_examples = 0;
    int n_generation_examples = 0;
    int n_decoded = 0;
    int contrastive_skips = 0;
    int split_fallbacks = 0;

    nlohmann::json to_json() const {
        nlohmann::json j{{"hit1", hit1},
                         {"hit3", hit3},
                         {"hit5", hit5},
                         {"ppl", ppl},
                         {"bleu1", bleu1},
                         {"bleu2", bleu2},
                         {"distinct1", distinct1},
                         {"distinct2", distinct2},
                         {"n_examples", n_examples},
                         {"n_generation_examples", n_generation_examples},
                         {"n_decoded", n_decoded},
                         {"contrastive_skips", contrastive_skips},
                         {"split_fallbacks", split_fallbacks}};
        if (has_prf) {
            j["persona_precision"] = prf.precision;
            j["persona_recall"] = prf.recall;
            j["persona_f1"] = prf.f1;
        }
        return j;
    }
};

}  // namespace petd
