#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "petd/errors.hpp"
#include "petd/nn.hpp"

namespace petd {

// Next-topic distribution: softmax over all topics of
// MLP([pool(H_C); e_u; pool(H~_tp); h_pos]) . e_t.
inline Node* topic_distribution(Tape& t, const Mlp& scorer, Node* pooled_ctx, Node* e_u, Node* pooled_tp,
                                Node* h_pos, Node* topic_table) {
    Node* features = t.concat_cols({pooled_ctx, e_u, pooled_tp, h_pos});
    return t.softmax_rows(t.matmul_nt(scorer.apply(t, features), topic_table));
}

inline Node* topic_loss(Tape& t, Node* probs, int target) {
    if (target < 0 || target >= probs->val.cols) throw UsageError("target topic out of range");
    return t.neg_log_pick_sum(probs, {{target}});
}

// Descending probability, ties toward the lower topic id.
inline std::vector<int> rank_topics(const Mat& probs) {
    std::vector<int> order(probs.cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs(0, a) != probs(0, b)) return probs(0, a) > probs(0, b);
        return a < b;
    });
    return order;
}

inline std::vector<int> predict_topk(const std::vector<int>& ranking, int k) {
    if (k > static_cast<int>(ranking.size())) throw UsageError("k exceeds the number of topics");
    return std::vector<int>(ranking.begin(), ranking.begin() + k);
}

}  // namespace petd
