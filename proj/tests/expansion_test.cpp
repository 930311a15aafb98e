#include <gtest/gtest.h>

#include "petd/expansion.hpp"

using namespace petd;

namespace {

Mat random_mat(int r, int c, Rng& rng, real scale = 1.0) {
    Mat m(r, c);
    for (auto& v : m.a) v = rng.normal(0.0, scale);
    return m;
}

TEST(Affinity, OrthogonalAndIdentityCases) {
    Tape t;
    Mat ep(1, 2), et(1, 2);
    ep(0, 0) = 1.0;
    et(0, 1) = 1.0;
    Node* s = persona_topic_affinity(t, t.leaf(ep), t.leaf(identity(2)), t.leaf(et));
    EXPECT_DOUBLE_EQ(s->val(0, 0), 0.0);

    Mat et2(1, 2);
    et2(0, 0) = 1.0;
    Node* s2 = persona_topic_affinity(t, t.leaf(ep), t.leaf(identity(2)), t.leaf(et2));
    EXPECT_DOUBLE_EQ(s2->val(0, 0), 1.0);
}

TEST(Affinity, MatchesTripleLoopOracle) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const int d = 4;
        Mat ep = random_mat(1, d, rng), et = random_mat(1, d, rng), W = random_mat(d, d, rng);
        Tape t;
        Node* s = persona_topic_affinity(t, t.leaf(ep), t.leaf(W), t.leaf(et));
        // hand-rolled triple loop
        real expect = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) expect += ep(0, i) * W(i, j) * et(0, j);
        EXPECT_NEAR(s->val(0, 0), expect, 1e-12);
    }
}

TEST(TopicSets, SaturationWhenKEqualsTopicCount) {
    Rng rng(4);
    Mat P = random_mat(3, 4, rng), W = identity(4), T = random_mat(5, 4, rng);
    auto sets = build_persona_topic_sets(P, W, T, 5);
    for (const auto& ids : sets.topic_ids) {
        EXPECT_EQ(ids.size(), 5u);
        std::vector<int> sorted = ids;
        std::sort(sorted.begin(), sorted.end());
        EXPECT_EQ(sorted, (std::vector<int>{0, 1, 2, 3, 4}));
    }
    EXPECT_THROW(build_persona_topic_sets(P, W, T, 6), UsageError);
}

TEST(TopicSets, TieBreaksTowardLowerId) {
    Mat P(1, 2), W = identity(2), T(3, 2);
    P(0, 0) = 1.0;
    T(0, 0) = 1.0;  // score 1
    T(1, 0) = 2.0;  // score 2
    T(2, 0) = 1.0;  // score 1, ties with topic 0
    auto sets = build_persona_topic_sets(P, W, T, 2);
    EXPECT_EQ(sets.topic_ids[0], (std::vector<int>{1, 0}));
}

TEST(TopicSets, MatchesFullSortOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Mat P = random_mat(4, 6, rng), W = random_mat(6, 6, rng), T = random_mat(9, 6, rng);
        const int k = 1 + rng.uniform_int(9);
        auto sets = build_persona_topic_sets(P, W, T, k);
        Mat S = affinity_matrix(P, W, T);
        for (int p = 0; p < 4; ++p) {
            std::vector<int> order(9);
            std::iota(order.begin(), order.end(), 0);
            std::sort(order.begin(), order.end(), [&](int a, int b) {
                if (S(p, a) != S(p, b)) return S(p, a) > S(p, b);
                return a < b;
            });
            order.resize(k);
            EXPECT_EQ(sets.topic_ids[p], order);
        }
    }
}

TEST(TopicSets, IncreasingKNeverRemovesTopics) {
    Rng rng(6);
    Mat P = random_mat(5, 6, rng), W = random_mat(6, 6, rng), T = random_mat(12, 6, rng);
    auto prev = build_persona_topic_sets(P, W, T, 3);
    for (int k = 4; k <= 12; ++k) {
        auto next = build_persona_topic_sets(P, W, T, k);
        for (size_t p = 0; p < prev.topic_ids.size(); ++p)
            for (int id : prev.topic_ids[p])
                EXPECT_NE(std::find(next.topic_ids[p].begin(), next.topic_ids[p].end(), id),
                          next.topic_ids[p].end());
        prev = next;
    }
}

struct ScorerSetup {
    ParamStore ps;
    Mlp mlp;
    ScorerSetup(int d, uint64_t seed = 11) {
        Rng rng(seed);
        mlp = Mlp::create(ps, "f", 3 * d, 2 * d, d, Activation::gelu, rng);
    }
};

TEST(TurnRelevance, ZeroMlpOutputGivesZeroScoreAndPositiveMask) {
    const int d = 4;
    ScorerSetup s(d);
    // zero the output layer: MLP output is the zero vector
    s.ps.at("f.w2").value.zero();
    s.ps.at("f.b2").value.zero();
    Rng rng(1);
    Tape t;
    Mat hc = random_mat(2, d, rng), ht = random_mat(2, d, rng), eu = random_mat(1, d, rng),
        pe = random_mat(3, d, rng);
    Node* scores = turn_persona_relevance(t, s.mlp, t.leaf(hc), t.leaf(eu), t.leaf(ht), t.leaf(pe));
    for (size_t i = 0; i < scores->val.a.size(); ++i) EXPECT_DOUBLE_EQ(scores->val.a[i], 0.0);
    Mat m = threshold_mask(scores->val);
    for (size_t i = 0; i < m.a.size(); ++i) EXPECT_DOUBLE_EQ(m.a[i], 1.0);  // sigmoid(0) = 0.5 counts in
}

TEST(TurnRelevance, ScoreIsLinearInPersonaEmbedding) {
    const int d = 6;
    ScorerSetup s(d);
    Rng rng(2);
    Mat hc = random_mat(1, d, rng), ht = random_mat(1, d, rng), eu = random_mat(1, d, rng),
        pe = random_mat(1, d, rng);
    Tape t;
    Node* s1 = turn_persona_relevance(t, s.mlp, t.leaf(hc), t.leaf(eu), t.leaf(ht), t.leaf(pe));
    Mat pe3 = pe;
    for (auto& v : pe3.a) v *= 3.0;
    Node* s3 = turn_persona_relevance(t, s.mlp, t.leaf(hc), t.leaf(eu), t.leaf(ht), t.leaf(pe3));
    EXPECT_NEAR(s3->val(0, 0), 3.0 * s1->val(0, 0), 1e-9);
}

TEST(TurnRelevance, MatchesLayerByLayerOracle) {
    const int d = 5;
    ScorerSetup s(d, 21);
    Rng rng(3);
    Mat hc = random_mat(1, d, rng), ht = random_mat(1, d, rng), eu = random_mat(1, d, rng),
        pe = random_mat(2, d, rng);
    Tape t;
    Node* scores = turn_persona_relevance(t, s.mlp, t.leaf(hc), t.leaf(eu), t.leaf(ht), t.leaf(pe));

    // explicit affine + gelu + affine + dot, one layer at a time
    const Mat& W1 = s.ps.at("f.w1").value;
    const Mat& b1 = s.ps.at("f.b1").value;
    const Mat& W2 = s.ps.at("f.w2").value;
    const Mat& b2 = s.ps.at("f.b2").value;
    std::vector<real> x;
    for (int j = 0; j < d; ++j) x.push_back(hc(0, j));
    for (int j = 0; j < d; ++j) x.push_back(eu(0, j));
    for (int j = 0; j < d; ++j) x.push_back(ht(0, j));
    std::vector<real> h(W1.cols, 0.0);
    for (int j = 0; j < W1.cols; ++j) {
        for (int i = 0; i < W1.rows; ++i) h[j] += x[i] * W1(i, j);
        h[j] += b1(0, j);
        h[j] = 0.5 * h[j] * (1.0 + std::erf(h[j] / std::sqrt(2.0)));
    }
    std::vector<real> z(d, 0.0);
    for (int j = 0; j < d; ++j) {
        for (int i = 0; i < W2.rows; ++i) z[j] += h[i] * W2(i, j);
        z[j] += b2(0, j);
    }
    for (int p = 0; p < 2; ++p) {
        real expect = 0.0;
        for (int j = 0; j < d; ++j) expect += z[j] * pe(p, j);
        EXPECT_NEAR(scores->val(0, p), expect, 1e-10);
    }
}

TEST(ThresholdMask, SignRule) {
    Mat s(1, 3);
    s(0, 0) = 0.0;
    s(0, 1) = -0.1;
    s(0, 2) = 3.0;
    Mat m = threshold_mask(s);
    EXPECT_DOUBLE_EQ(m(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(m(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(m(0, 2), 1.0);
}

struct AggSetup {
    ParamStore ps;
    ExpansionFfn ffn;
    AggSetup(int d, Activation act, int hidden, uint64_t seed = 31) {
        Rng rng(seed);
        ffn = ExpansionFfn::create(ps, "ffn", d, hidden, act, rng);
    }
    void make_identity(int d) {
        ps.at("ffn.w1").value = identity(d);
        ps.at("ffn.b1").value.zero();
        ps.at("ffn.w2").value = identity(d);
        ps.at("ffn.b2").value.zero();
    }
};

TEST(Aggregate, AllMasksZeroWithIdentityFfnIsIdentity) {
    const int d = 4;
    AggSetup s(d, Activation::identity, d);
    s.make_identity(d);
    Rng rng(7);
    Mat H = random_mat(3, d, rng);
    Mat scores = random_mat(3, 2, rng);
    Mat zeros(3, 2);
    Mat G = random_mat(2, d, rng);
    Tape t;
    Node* out = aggregate_global_topics(t, t.leaf(H), t.leaf(scores), zeros, t.leaf(G), s.ffn);
    for (size_t i = 0; i < H.a.size(); ++i) EXPECT_NEAR(out->val.a[i], H.a[i], 1e-12);
}

TEST(Aggregate, UnitWeightsAddSingleTopicVector) {
    const int d = 4;
    AggSetup s(d, Activation::identity, d);
    s.make_identity(d);
    Rng rng(8);
    Mat H = random_mat(1, d, rng);
    Mat scores(1, 1);
    scores(0, 0) = 1.0;
    Mat ones(1, 1);
    ones(0, 0) = 1.0;
    Mat G = random_mat(1, d, rng);  // single persona vector: one topic with weight 1
    Tape t;
    Node* out = aggregate_global_topics(t, t.leaf(H), t.leaf(scores), ones, t.leaf(G), s.ffn);
    for (int j = 0; j < d; ++j) EXPECT_NEAR(out->val(0, j), H(0, j) + G(0, j), 1e-12);
}

// Random instance against a nested-loop oracle for the full pipeline:
// per-persona topic pooling, gating, and the feed-forward.
TEST(Aggregate, MatchesNestedLoopOracle) {
    const int d = 4;
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        AggSetup s(d, Activation::identity, d, 100 + trial);
        s.make_identity(d);
        const int n_personas = 3, n_topics = 5, turns = 2, k = 2;
        Mat personas = random_mat(n_personas, d, rng);
        Mat topics = random_mat(n_topics, d, rng);
        Mat W = random_mat(d, d, rng);
        Mat H = random_mat(turns, d, rng);
        Mat scores = random_mat(turns, n_personas, rng);
        Mat mask = threshold_mask(scores);

        PersonaTopicSets sets = build_persona_topic_sets(personas, W, topics, k);
        std::vector<int> pids{0, 1, 2};

        Tape t;
        Node* G = persona_global_topic_vectors(t, t.leaf(W), t.leaf(personas), t.leaf(topics), pids, sets);
        Node* out = aggregate_global_topics(t, t.leaf(H), t.leaf(scores), mask, G, s.ffn);

        // nested-loop oracle (identity FFN)
        for (int i = 0; i < turns; ++i) {
            for (int j = 0; j < d; ++j) {
                real expect = H(i, j);
                for (int p = 0; p < n_personas; ++p) {
                    if (mask(i, p) == 0.0) continue;
                    real inner = 0.0;
                    for (int tk : sets.topic_ids[p]) {
                        real aff = 0.0;
                        for (int a = 0; a < d; ++a)
                            for (int b = 0; b < d; ++b) aff += personas(p, a) * W(a, b) * topics(tk, b);
                        inner += aff * topics(tk, j);
                    }
                    expect += scores(i, p) * inner;
                }
                EXPECT_NEAR(out->val(i, j), expect, 1e-9);
            }
        }
    }
}

// Crossing zero switches a persona's whole contribution on or off; the jump
// equals the magnitude of the gated term at the crossing.
TEST(Aggregate, MaskDiscontinuityEqualsGatedTermNorm) {
    const int d = 4;
    AggSetup s(d, Activation::identity, d);
    s.make_identity(d);
    Rng rng(10);
    Mat H = random_mat(1, d, rng);
    Mat G = random_mat(1, d, rng);
    const real eps = 1e-9;

    auto out_for = [&](real score) {
        Mat sc(1, 1);
        sc(0, 0) = score;
        Tape t;
        Node* o = aggregate_global_topics(t, t.leaf(H), t.leaf(sc), threshold_mask(sc), t.leaf(G), s.ffn);
        Mat v = o->val;
        return v;
    };
    Mat above = out_for(eps);     // mask on: adds eps * G (vanishing)
    Mat below = out_for(-eps);    // mask off entirely
    real jump = 0.0;
    for (int j = 0; j < d; ++j) jump += std::pow(above(0, j) - below(0, j), 2);
    jump = std::sqrt(jump);
    // at the crossing the gated term's norm is ~ eps * |G|, i.e. the jump
    // from the mask alone vanishes smoothly: s' * m' is continuous at 0+
    Mat gnorm(1, d);
    for (int j = 0; j < d; ++j) gnorm(0, j) = G(0, j);
    EXPECT_NEAR(jump, eps * gnorm.norm(), 1e-12);

    // a persona pinned at a positive score contributes its full term
    Mat on = out_for(1.0);
    real contribution = 0.0;
    for (int j = 0; j < d; ++j) contribution += std::pow(on(0, j) - below(0, j), 2);
    EXPECT_NEAR(std::sqrt(contribution), gnorm.norm(), 1e-9);
}

TEST(Reencode, ShapeDeterminismAndFinite) {
    const int d = 8;
    ModelConfig cfg;
    cfg.d = d;
    cfg.enc_layers = 2;
    cfg.enc_heads = 2;
    cfg.dropout = 0.0;
    ParamStore ps;
    Rng init(5);
    Encoder enc = Encoder::create(ps, "enc2", d, cfg.enc_layers, cfg.enc_heads, cfg.ffn(), init);
    Rng rng(6);
    Mat H = random_mat(4, d, rng, 2.0);
    Tape t1, t2;
    Node* a = reencode_topic_path(t1, enc, cfg, t1.leaf(H), false, rng);
    Node* b = reencode_topic_path(t2, enc, cfg, t2.leaf(H), false, rng);
    EXPECT_EQ(a->val.rows, 4);
    EXPECT_EQ(a->val.cols, d);
    EXPECT_TRUE(a->val.all_finite());
    for (size_t i = 0; i < a->val.a.size(); ++i) EXPECT_DOUBLE_EQ(a->val.a[i], b->val.a[i]);
}

}  // namespace
