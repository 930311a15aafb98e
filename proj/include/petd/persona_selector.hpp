#pragma once

#include <algorithm>
#include <vector>

#include "petd/encoding.hpp"
#include "petd/nn.hpp"

namespace petd {

// Relevance of each user persona to the upcoming turn:
// score(j) = MLP([pool(H_C); e_u; pool(H~_tp)]) . e_p_j
inline Node* persona_relevance(Tape& t, const Mlp& scorer, Node* pooled_ctx, Node* e_u, Node* pooled_tp,
                               Node* user_personas) {
    Node* features = t.concat_cols({pooled_ctx, e_u, pooled_tp});
    return t.matmul_nt(scorer.apply(t, features), user_personas);
}

struct PersonaSplit {
    std::vector<int> positive;  // indices into the user's persona list
    std::vector<int> negative;
    bool fallback_used = false;  // no score reached the threshold; argmax promoted
};

// Threshold split at score >= 0. An empty positive set promotes the
// top-scoring persona (ties toward the lower index).
inline PersonaSplit split_persona_sets(const Mat& scores) {
    if (scores.rows != 1 || scores.cols < 1) throw UsageError("persona scores must be a non-empty row");
    PersonaSplit split;
    for (int j = 0; j < scores.cols; ++j)
        (scores(0, j) >= 0.0 ? split.positive : split.negative).push_back(j);
    if (split.positive.empty()) {
        int best = 0;
        for (int j = 1; j < scores.cols; ++j)
            if (scores(0, j) > scores(0, best)) best = j;
        split.positive.push_back(best);
        split.negative.erase(std::find(split.negative.begin(), split.negative.end(), best));
        split.fallback_used = true;
    }
    return split;
}

struct PersonaAggregates {
    Node* positive = nullptr;  // 1 x d
    Node* negative = nullptr;  // null when the negative set is empty
};

// Within-set softmax mixtures of persona embeddings. The negative set uses
// softmax of the negated scores, so the least relevant personas dominate it.
inline PersonaAggregates aggregate_persona_sets(Tape& t, Node* scores, Node* user_personas,
                                                const PersonaSplit& split) {
    PersonaAggregates agg;
    auto mix = [&](const std::vector<int>& idx, bool negate) {
        std::vector<Node*> score_parts;
        score_parts.reserve(idx.size());
        for (int j : idx) score_parts.push_back(t.slice_cols(scores, j, j + 1));
        Node* s = t.concat_cols(score_parts);
        if (negate) s = t.scale(s, -1.0);
        Node* w = t.softmax_rows(s);                         // 1 x |set|
        Node* emb = t.gather_rows(user_personas, idx);       // |set| x d
        return t.matmul(w, emb);                             // 1 x d
    };
    agg.positive = mix(split.positive, false);
    if (!split.negative.empty()) agg.negative = mix(split.negative, true);
    return agg;
}

// Topic distribution induced by a persona-set vector: softmax over all topics
// of h W_g e_t.
inline Node* persona_topic_score(Tape& t, Node* h_set, Node* W_g, Node* topic_table) {
    return t.softmax_rows(t.matmul_nt(t.matmul(h_set, W_g), topic_table));
}

struct ContrastiveLoss {
    Node* value = nullptr;
    bool clamped = false;  // difference was at or below the floor; zero gradient
};

// -log(max(g_pos - g_neg, eps)). On the clamped branch the loss is a constant.
inline ContrastiveLoss contrastive_loss(Tape& t, Node* g_pos, Node* g_neg, real eps = 1e-6) {
    ContrastiveLoss out;
    Node* diff = t.sub(g_pos, g_neg);
    if (diff->val(0, 0) <= eps) {
        Mat floor(1, 1);
        floor(0, 0) = -std::log(eps);
        out.value = t.leaf(floor);
        out.clamped = true;
    } else {
        out.value = t.scale(t.logn(diff), -1.0);
    }
    return out;
}

}  // namespace petd
