#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "petd/encoding.hpp"
#include "petd/errors.hpp"
#include "petd/nn.hpp"

namespace petd {

// Bilinear persona-topic correspondence: e_p * W * e_t.
inline Node* persona_topic_affinity(Tape& t, Node* e_p, Node* W, Node* e_t) {
    return t.matmul_nt(t.matmul(e_p, W), e_t);
}

// Value-level dense affinity used when refreshing the top-k topic sets.
inline Mat affinity_matrix(const Mat& persona_table, const Mat& W, const Mat& topic_table) {
    return matmul_nt(matmul(persona_table, W), topic_table);
}

struct PersonaTopicSets {
    std::vector<std::vector<int>> topic_ids;  // per persona, k ids sorted by descending score
};

// Top-k topics per persona by affinity; ties broken toward the lower topic id.
inline PersonaTopicSets build_persona_topic_sets(const Mat& persona_table, const Mat& W,
                                                 const Mat& topic_table, int k) {
    const int n_topics = topic_table.rows;
    if (k > n_topics) throw UsageError("k exceeds the number of topics");
    const Mat scores = affinity_matrix(persona_table, W, topic_table);
    PersonaTopicSets sets;
    sets.topic_ids.resize(persona_table.rows);
    std::vector<int> order(n_topics);
    for (int p = 0; p < persona_table.rows; ++p) {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            if (scores(p, a) != scores(p, b)) return scores(p, a) > scores(p, b);
            return a < b;
        });
        sets.topic_ids[p].assign(order.begin(), order.begin() + k);
    }
    return sets;
}

// Relevance of each of the user's personas to each turn:
// score(i, j) = MLP([h_c_i; e_u; h_t_i]) . e_p_j
inline Node* turn_persona_relevance(Tape& t, const Mlp& scorer, Node* H_C, Node* e_u, Node* H_tp,
                                    Node* user_personas) {
    Node* features = t.concat_cols({H_C, t.tile_row(e_u, H_C->val.rows), H_tp});
    return t.matmul_nt(scorer.apply(t, features), user_personas);
}

// Hard 0/1 mask: 1 exactly where the score is >= 0 (sigmoid >= 0.5).
// Not differentiable; gradients reach the scores only through the
// score-times-mask product in the aggregation below.
inline Mat threshold_mask(const Mat& scores) {
    Mat m(scores.rows, scores.cols);
    for (size_t i = 0; i < scores.a.size(); ++i) m.a[i] = scores.a[i] >= 0.0 ? 1.0 : 0.0;
    return m;
}

// Per-persona pooled global topic vector: G_j = sum_k affinity(j, t_k) e_{t_k}
// over that persona's current topic set. Affinities are live so gradients
// reach W and the embeddings; only set membership is frozen between refreshes.
inline Node* persona_global_topic_vectors(Tape& t, Node* W, Node* persona_rows, Node* topic_table,
                                          const std::vector<int>& persona_ids,
                                          const PersonaTopicSets& sets) {
    std::vector<Node*> rows;
    rows.reserve(persona_ids.size());
    for (size_t j = 0; j < persona_ids.size(); ++j) {
        Node* e_p = t.slice_rows(persona_rows, static_cast<int>(j), static_cast<int>(j) + 1);
        const auto& ids = sets.topic_ids.at(persona_ids[j]);
        Node* topics = t.gather_rows(topic_table, ids);          // k x d
        Node* scores = t.matmul_nt(t.matmul(e_p, W), topics);    // 1 x k
        rows.push_back(t.matmul(scores, topics));                // 1 x d
    }
    return t.concat_rows(rows);
}

struct ExpansionFfn {
    Mlp mlp;

    static ExpansionFfn create(ParamStore& ps, const std::string& prefix, int d, int hidden,
                               Activation act, Rng& rng) {
        ExpansionFfn f;
        f.mlp = Mlp::create(ps, prefix, d, hidden, d, act, rng);
        return f;
    }
};

// Global-enhanced topic rows: FFN(h_t + (scores * mask) @ G).
inline Node* aggregate_global_topics(Tape& t, Node* H_tp, Node* turn_scores, const Mat& mask_01,
                                     Node* persona_topic_vectors, const ExpansionFfn& ffn) {
    Node* gated = t.mask(turn_scores, mask_01);
    Node* mixed = t.matmul(gated, persona_topic_vectors);
    return ffn.mlp.apply(t, t.add(H_tp, mixed));
}

// Second pass over the enhanced topic path with its own encoder parameters.
inline Node* reencode_topic_path(Tape& t, const Encoder& enc, const ModelConfig& cfg, Node* enhanced,
                                 bool train, Rng& rng) {
    if (enhanced->val.rows < 1) throw UsageError("topic path must contain at least one topic");
    return enc.apply(t, enhanced, cfg.dropout, rng, train);
}

}  // namespace petd
