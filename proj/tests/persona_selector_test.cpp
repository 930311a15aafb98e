#include <gtest/gtest.h>

#include "petd/persona_selector.hpp"

using namespace petd;

namespace {

Mat random_mat(int r, int c, Rng& rng, real scale = 1.0) {
    Mat m(r, c);
    for (auto& v : m.a) v = rng.normal(0.0, scale);
    return m;
}

Mat row(std::initializer_list<real> vals) {
    Mat m(1, static_cast<int>(vals.size()));
    int i = 0;
    for (real v : vals) m(0, i++) = v;
    return m;
}

TEST(Relevance, ZeroMlpOutputLandsPersonaInPositiveSet) {
    const int d = 4;
    ParamStore ps;
    Rng rng(3);
    Mlp mlp = Mlp::create(ps, "f", 3 * d, 2 * d, d, Activation::gelu, rng);
    ps.at("f.w2").value.zero();
    ps.at("f.b2").value.zero();
    Tape t;
    Mat pc = random_mat(1, d, rng), eu = random_mat(1, d, rng), pt = random_mat(1, d, rng),
        pe = random_mat(3, d, rng);
    Node* s = persona_relevance(t, mlp, t.leaf(pc), t.leaf(eu), t.leaf(pt), t.leaf(pe));
    for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(s->val(0, j), 0.0);
    PersonaSplit split = split_persona_sets(s->val);
    EXPECT_EQ(split.positive.size(), 3u);  // boundary scores count as positive
    EXPECT_TRUE(split.negative.empty());
}

TEST(Relevance, DoublingPersonaEmbeddingDoublesScore) {
    const int d = 5;
    ParamStore ps;
    Rng rng(4);
    Mlp mlp = Mlp::create(ps, "f", 3 * d, 2 * d, d, Activation::gelu, rng);
    Tape t;
    Mat pc = random_mat(1, d, rng), eu = random_mat(1, d, rng), pt = random_mat(1, d, rng),
        pe = random_mat(1, d, rng);
    Node* s1 = persona_relevance(t, mlp, t.leaf(pc), t.leaf(eu), t.leaf(pt), t.leaf(pe));
    Mat pe2 = pe;
    for (auto& v : pe2.a) v *= 2.0;
    Node* s2 = persona_relevance(t, mlp, t.leaf(pc), t.leaf(eu), t.leaf(pt), t.leaf(pe2));
    EXPECT_NEAR(s2->val(0, 0), 2.0 * s1->val(0, 0), 1e-10);
}

TEST(Relevance, MatchesLayerOracle) {
    const int d = 4;
    ParamStore ps;
    Rng rng(5);
    Mlp mlp = Mlp::create(ps, "f", 3 * d, 2 * d, d, Activation::gelu, rng);
    Mat pc = random_mat(1, d, rng), eu = random_mat(1, d, rng), pt = random_mat(1, d, rng),
        pe = random_mat(2, d, rng);
    Tape t;
    Node* s = persona_relevance(t, mlp, t.leaf(pc), t.leaf(eu), t.leaf(pt), t.leaf(pe));

    const Mat& W1 = ps.at("f.w1").value;
    const Mat& b1 = ps.at("f.b1").value;
    const Mat& W2 = ps.at("f.w2").value;
    const Mat& b2 = ps.at("f.b2").value;
    std::vector<real> x;
    for (int j = 0; j < d; ++j) x.push_back(pc(0, j));
    for (int j = 0; j < d; ++j) x.push_back(eu(0, j));
    for (int j = 0; j < d; ++j) x.push_back(pt(0, j));
    std::vector<real> h(W1.cols, 0.0);
    for (int j = 0; j < W1.cols; ++j) {
        for (int i = 0; i < W1.rows; ++i) h[j] += x[i] * W1(i, j);
        h[j] += b1(0, j);
        h[j] = 0.5 * h[j] * (1.0 + std::erf(h[j] / std::sqrt(2.0)));
    }
    for (int p = 0; p < 2; ++p) {
        real expect = 0.0;
        for (int j = 0; j < d; ++j) {
            real zj = b2(0, j);
            for (int i = 0; i < W2.rows; ++i) zj += h[i] * W2(i, j);
            expect += zj * pe(p, j);
        }
        EXPECT_NEAR(s->val(0, p), expect, 1e-10);
    }
}

TEST(Split, ThresholdAndZeroBoundary) {
    PersonaSplit s = split_persona_sets(row({0.3, -0.2, 0.0}));
    EXPECT_EQ(s.positive, (std::vector<int>{0, 2}));
    EXPECT_EQ(s.negative, (std::vector<int>{1}));
    EXPECT_FALSE(s.fallback_used);
}

TEST(Split, AllNegativePromotesArgmax) {
    PersonaSplit s = split_persona_sets(row({-0.5, -0.1, -0.9}));
    EXPECT_EQ(s.positive, (std::vector<int>{1}));
    EXPECT_EQ(s.negative, (std::vector<int>{0, 2}));
    EXPECT_TRUE(s.fallback_used);
}

TEST(Split, AllPositiveLeavesNegativeEmpty) {
    PersonaSplit s = split_persona_sets(row({0.5, 0.1, 0.9}));
    EXPECT_EQ(s.positive.size(), 3u);
    EXPECT_TRUE(s.negative.empty());
}

TEST(Aggregates, SingletonPositiveEqualsItsEmbedding) {
    Rng rng(6);
    Mat pe = random_mat(3, 4, rng);
    Tape t;
    Node* scores = t.leaf(row({0.7, -0.3, -0.8}), true);
    PersonaSplit split = split_persona_sets(scores->val);
    ASSERT_EQ(split.positive.size(), 1u);
    PersonaAggregates agg = aggregate_persona_sets(t, scores, t.leaf(pe), split);
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(agg.positive->val(0, j), pe(0, j), 1e-12);
}

TEST(Aggregates, EqualNegativeScoresGiveEqualWeights) {
    Rng rng(7);
    Mat pe = random_mat(3, 4, rng);
    Tape t;
    Node* scores = t.leaf(row({0.5, -0.4, -0.4}));
    PersonaSplit split = split_persona_sets(scores->val);
    PersonaAggregates agg = aggregate_persona_sets(t, scores, t.leaf(pe), split);
    ASSERT_NE(agg.negative, nullptr);
    for (int j = 0; j < 4; ++j)
        EXPECT_NEAR(agg.negative->val(0, j), 0.5 * (pe(1, j) + pe(2, j)), 1e-12);
}

TEST(Aggregates, MatchesSoftmaxOracle) {
    Rng rng(8);
    for (int trial = 0; trial < 10; ++trial) {
        Mat pe = random_mat(3, 5, rng);
        Mat sc = random_mat(1, 3, rng);
        Tape t;
        Node* scores = t.leaf(sc);
        PersonaSplit split = split_persona_sets(sc);
        PersonaAggregates agg = aggregate_persona_sets(t, scores, t.leaf(pe), split);

        // explicit softmax-weighted sums
        auto oracle = [&](const std::vector<int>& idx, real sign) {
            std::vector<real> w(idx.size());
            real total = 0.0;
            for (size_t i = 0; i < idx.size(); ++i) {
                w[i] = std::exp(sign * sc(0, idx[i]));
                total += w[i];
            }
            std::vector<real> out(5, 0.0);
            for (size_t i = 0; i < idx.size(); ++i)
                for (int j = 0; j < 5; ++j) out[j] += w[i] / total * pe(idx[i], j);
            return out;
        };
        auto pos = oracle(split.positive, +1.0);
        for (int j = 0; j < 5; ++j) EXPECT_NEAR(agg.positive->val(0, j), pos[j], 1e-10);
        if (!split.negative.empty()) {
            auto neg = oracle(split.negative, -1.0);
            ASSERT_NE(agg.negative, nullptr);
            for (int j = 0; j < 5; ++j) EXPECT_NEAR(agg.negative->val(0, j), neg[j], 1e-10);
        }
    }
}

TEST(Aggregates, PermutationEquivariant) {
    Rng rng(9);
    Mat pe = random_mat(4, 3, rng);
    Mat sc = random_mat(1, 4, rng);
    Tape t;
    PersonaSplit split = split_persona_sets(sc);
    PersonaAggregates a = aggregate_persona_sets(t, t.leaf(sc), t.leaf(pe), split);

    // permute personas: swap 0 and 3 everywhere
    Mat pe2 = pe, sc2 = sc;
    for (int j = 0; j < 3; ++j) std::swap(pe2(0, j), pe2(3, j));
    std::swap(sc2(0, 0), sc2(0, 3));
    PersonaSplit split2 = split_persona_sets(sc2);
    PersonaAggregates b = aggregate_persona_sets(t, t.leaf(sc2), t.leaf(pe2), split2);
    for (int j = 0; j < 3; ++j) {
        EXPECT_NEAR(a.positive->val(0, j), b.positive->val(0, j), 1e-12);
        if (a.negative && b.negative) EXPECT_NEAR(a.negative->val(0, j), b.negative->val(0, j), 1e-12);
    }
}

TEST(TopicScore, IdenticalTopicEmbeddingsGiveUniform) {
    const int d = 4, n_topics = 6;
    Rng rng(10);
    Mat h = random_mat(1, d, rng);
    Mat W = random_mat(d, d, rng);
    Mat topics(n_topics, d);
    Mat one_row = random_mat(1, d, rng);
    for (int i = 0; i < n_topics; ++i)
        for (int j = 0; j < d; ++j) topics(i, j) = one_row(0, j);
    Tape t;
    Node* g = persona_topic_score(t, t.leaf(h), t.leaf(W), t.leaf(topics));
    for (int i = 0; i < n_topics; ++i) EXPECT_NEAR(g->val(0, i), 1.0 / n_topics, 1e-12);
}

TEST(TopicScore, ScalingPreservesArgmax) {
    const int d = 5, n_topics = 7;
    Rng rng(11);
    Mat h = random_mat(1, d, rng), W = random_mat(d, d, rng), topics = random_mat(n_topics, d, rng);
    Tape t;
    Node* g1 = persona_topic_score(t, t.leaf(h), t.leaf(W), t.leaf(topics));
    Mat h3 = h;
    for (auto& v : h3.a) v *= 3.0;
    Node* g3 = persona_topic_score(t, t.leaf(h3), t.leaf(W), t.leaf(topics));
    auto argmax = [](const Mat& m) {
        int best = 0;
        for (int j = 1; j < m.cols; ++j)
            if (m(0, j) > m(0, best)) best = j;
        return best;
    };
    EXPECT_EQ(argmax(g1->val), argmax(g3->val));
}

TEST(TopicScore, MatchesDenseSoftmaxOracle) {
    const int d = 4, n_topics = 5;
    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        Mat h = random_mat(1, d, rng), W = random_mat(d, d, rng), topics = random_mat(n_topics, d, rng);
        Tape t;
        Node* g = persona_topic_score(t, t.leaf(h), t.leaf(W), t.leaf(topics));
        std::vector<real> logits(n_topics, 0.0);
        for (int i = 0; i < n_topics; ++i)
            for (int a = 0; a < d; ++a)
                for (int b = 0; b < d; ++b) logits[i] += h(0, a) * W(a, b) * topics(i, b);
        real mx = *std::max_element(logits.begin(), logits.end());
        real total = 0.0;
        for (real& l : logits) {
            l = std::exp(l - mx);
            total += l;
        }
        real sum = 0.0;
        for (int i = 0; i < n_topics; ++i) {
            EXPECT_NEAR(g->val(0, i), logits[i] / total, 1e-12);
            sum += g->val(0, i);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Contrastive, DirectSubstitutionAndClamp) {
    Tape t;
    Node* gp = t.leaf(row({0.9}));
    Node* gn = t.leaf(row({0.4}));
    ContrastiveLoss l = contrastive_loss(t, gp, gn);
    EXPECT_NEAR(l.value->val(0, 0), -std::log(0.5), 1e-12);
    EXPECT_FALSE(l.clamped);

    ContrastiveLoss l2 = contrastive_loss(t, t.leaf(row({0.3})), t.leaf(row({0.5})));
    EXPECT_NEAR(l2.value->val(0, 0), -std::log(1e-6), 1e-9);
    EXPECT_TRUE(l2.clamped);
    EXPECT_NEAR(l2.value->val(0, 0), 13.8155, 1e-3);
}

TEST(Contrastive, GradientMatchesFiniteDifference) {
    // d/dg_pos of -log(g_pos - g_neg) at (0.9, 0.4) is -1/0.5 = -2
    Tape t;
    Node* gp = t.leaf(row({0.9}), true);
    Node* gn = t.leaf(row({0.4}), true);
    ContrastiveLoss l = contrastive_loss(t, gp, gn);
    t.backward(l.value);
    EXPECT_NEAR(gp->grad(0, 0), -2.0, 1e-12);
    EXPECT_NEAR(gn->grad(0, 0), 2.0, 1e-12);

    const real step = 1e-7;
    auto eval = [&](real dp) {
        Tape t2;
        return contrastive_loss(t2, t2.leaf(row({0.9 + dp})), t2.leaf(row({0.4}))).value->val(0, 0);
    };
    const real numeric = (eval(step) - eval(-step)) / (2 * step);
    EXPECT_NEAR(numeric, -2.0, 1e-5);
}

TEST(Contrastive, ClampRegionHasZeroGradient) {
    Tape t;
    Node* gp = t.leaf(row({0.2}), true);
    Node* gn = t.leaf(row({0.6}), true);
    ContrastiveLoss l = contrastive_loss(t, gp, gn);
    ASSERT_TRUE(l.clamped);
    t.backward(l.value);
    EXPECT_DOUBLE_EQ(gp->grad(0, 0), 0.0);
    EXPECT_DOUBLE_EQ(gn->grad(0, 0), 0.0);
}

// One gradient step on the scores must reduce the loss on a frozen toy
// problem: minimizing the objective widens the positive-negative gap.
TEST(Contrastive, GradientStepImprovesSeparation) {
    const int d = 6, n_topics = 6;
    Mat W = identity(d);
    Mat topics = identity(d);  // one axis per topic
    const int target = 3;
    // positive personas lean toward the target topic axis, negatives away
    Mat pe(4, d);
    pe(0, target) = 1.0;
    pe(1, target) = 0.6;
    pe(1, 0) = 0.4;
    pe(2, 1) = 1.0;
    pe(3, 2) = 1.0;
    Mat sc = row({0.2, 0.1, -0.2, -0.4});

    auto loss_at = [&](const Mat& scores, Mat* grad_out) {
        Tape t;
        Node* s = t.leaf(scores, grad_out != nullptr);
        PersonaSplit split = split_persona_sets(scores);
        PersonaAggregates agg = aggregate_persona_sets(t, s, t.leaf(pe), split);
        Node* g_pos = persona_topic_score(t, agg.positive, t.leaf(W), t.leaf(topics));
        Node* g_neg = persona_topic_score(t, agg.negative, t.leaf(W), t.leaf(topics));
        ContrastiveLoss cl = contrastive_loss(t, t.pick(g_pos, 0, target), t.pick(g_neg, 0, target));
        if (grad_out) {
            t.backward(cl.value);
            *grad_out = s->grad;
        }
        return cl.value->val(0, 0);
    };
    Mat grad;
    const real before = loss_at(sc, &grad);
    Mat stepped = sc;
    for (size_t i = 0; i < sc.a.size(); ++i) stepped.a[i] -= 0.05 * grad.a[i];
    const real after = loss_at(stepped, nullptr);
    EXPECT_LT(after, before);
}

}  // namespace
