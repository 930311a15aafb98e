#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "petd/nn.hpp"
#include "petd/tape.hpp"

using namespace petd;

namespace {

Mat random_mat(int r, int c, Rng& rng, real scale = 1.0) {
    Mat m(r, c);
    for (auto& v : m.a) v = rng.normal(0.0, scale);
    return m;
}

// Central finite differences of a scalar-valued graph builder with respect to
// one leaf input.
void check_grad(const std::function<Node*(Tape&, const std::vector<Node*>&)>& build,
                std::vector<Mat> inputs, real tol = 1e-6, real step = 1e-6) {
    Tape t;
    std::vector<Node*> leaves;
    for (auto& m : inputs) leaves.push_back(t.leaf(m, true));
    Node* loss = build(t, leaves);
    ASSERT_EQ(loss->val.rows, 1);
    ASSERT_EQ(loss->val.cols, 1);
    t.backward(loss);

    for (size_t li = 0; li < inputs.size(); ++li) {
        for (size_t i = 0; i < inputs[li].a.size(); ++i) {
            auto eval = [&](real delta) {
                std::vector<Mat> shifted = inputs;
                shifted[li].a[i] += delta;
                Tape t2(false);
                std::vector<Node*> lv;
                for (auto& m : shifted) lv.push_back(t2.leaf(m, false));
                return build(t2, lv)->val(0, 0);
            };
            const real numeric = (eval(step) - eval(-step)) / (2 * step);
            const real analytic = leaves[li]->grad.a[i];
            const real denom = std::max({std::abs(numeric), std::abs(analytic), real(1e-8)});
            EXPECT_NEAR(analytic, numeric, tol * denom)
                << "input " << li << " entry " << i;
        }
    }
}

// Sum of all entries as the scalar head for matrix-valued ops.
Node* sum_all(Tape& t, Node* x) {
    Mat ones_col(x->val.cols, 1);
    ones_col.fill(1.0);
    Mat ones_row(1, x->val.rows);
    ones_row.fill(1.0);
    return t.matmul(t.leaf(ones_row), t.matmul(x, t.leaf(ones_col)));
}

// A weighted sum exposes asymmetric gradients better than a plain sum.
Node* weighted_sum(Tape& t, Node* x, Rng& rng) {
    Mat w = random_mat(x->val.rows, x->val.cols, rng);
    return sum_all(t, t.hadamard(x, t.leaf(w)));
}

TEST(Tape, MatmulGradient) {
    Rng rng(1);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(5);
            return weighted_sum(t, t.matmul(in[0], in[1]), wr);
        },
        {random_mat(3, 4, rng), random_mat(4, 2, rng)});
}

TEST(Tape, MatmulNtGradient) {
    Rng rng(2);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(6);
            return weighted_sum(t, t.matmul_nt(in[0], in[1]), wr);
        },
        {random_mat(3, 4, rng), random_mat(5, 4, rng)});
}

TEST(Tape, SoftmaxGradient) {
    Rng rng(3);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(7);
            return weighted_sum(t, t.softmax_rows(in[0]), wr);
        },
        {random_mat(3, 5, rng)});
}

TEST(Tape, SoftmaxRowsSumToOne) {
    Rng rng(4);
    Tape t;
    Node* p = t.softmax_rows(t.leaf(random_mat(4, 7, rng, 3.0)));
    for (int i = 0; i < 4; ++i) {
        real s = 0.0;
        for (int j = 0; j < 7; ++j) s += p->val(i, j);
        EXPECT_NEAR(s, 1.0, 1e-12);
    }
}

TEST(Tape, GeluGradient) {
    Rng rng(5);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(8);
            return weighted_sum(t, t.gelu(in[0]), wr);
        },
        {random_mat(2, 6, rng)});
}

TEST(Tape, LayerNormGradient) {
    Rng rng(6);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(9);
            return weighted_sum(t, t.layer_norm(in[0], in[1], in[2]), wr);
        },
        {random_mat(3, 6, rng), random_mat(1, 6, rng), random_mat(1, 6, rng)}, 1e-5);
}

TEST(Tape, GatherConcatSliceGradient) {
    Rng rng(7);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(10);
            Node* g = t.gather_rows(in[0], {2, 0, 2, 1});
            Node* c = t.concat_cols({g, t.tile_row(in[1], 4)});
            Node* s = t.slice_cols(c, 1, 5);
            return weighted_sum(t, s, wr);
        },
        {random_mat(3, 3, rng), random_mat(1, 3, rng)});
}

TEST(Tape, ConcatRowsMeanRowsGradient) {
    Rng rng(8);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Rng wr(11);
            Node* c = t.concat_rows({in[0], in[1]});
            return weighted_sum(t, t.mean_rows(c), wr);
        },
        {random_mat(2, 4, rng), random_mat(3, 4, rng)});
}

TEST(Tape, NegLogPickSumGradient) {
    Rng rng(9);
    check_grad(
        [&](Tape& t, const std::vector<Node*>& in) {
            Node* p = t.softmax_rows(in[0]);
            return t.neg_log_pick_sum(p, {{0, 2}, {1}});
        },
        {random_mat(2, 5, rng)});
}

TEST(Tape, AttentionGradientAndWeights) {
    Rng rng(10);
    ParamStore ps;
    Rng init(42);
    AttentionParams ap = AttentionParams::create(ps, "attn", 4, 2, init);
    Mat x = random_mat(3, 4, rng);
    Mat mem = random_mat(5, 4, rng);

    Tape t;
    Node* q = t.leaf(x, true);
    Node* kv = t.leaf(mem, true);
    AttentionCapture cap;
    Node* out = multi_head_attention(t, q, kv, ap, nullptr, &cap);
    ASSERT_EQ(cap.head_weights.size(), 2u);
    for (const Mat& w : cap.head_weights) {
        ASSERT_EQ(w.rows, 3);
        ASSERT_EQ(w.cols, 5);
        for (int i = 0; i < w.rows; ++i) {
            real s = 0.0;
            for (int j = 0; j < w.cols; ++j) s += w(i, j);
            EXPECT_NEAR(s, 1.0, 1e-12);
        }
    }

    Rng wr(12);
    Mat w = random_mat(3, 4, wr);
    Node* loss = sum_all(t, t.hadamard(out, t.leaf(w)));
    t.backward(loss);

    // finite differences on one attention weight matrix
    Param& wq = ps.at("attn.wq");
    const real step = 1e-6;
    for (int idx : {0, 5, 10, 15}) {
        const real saved = wq.value.a[idx];
        auto eval = [&](real delta) {
            wq.value.a[idx] = saved + delta;
            Tape t2(false);
            Node* out2 = multi_head_attention(t2, t2.leaf(x), t2.leaf(mem), ap);
            Node* l2 = sum_all(t2, t2.hadamard(out2, t2.leaf(w)));
            return l2->val(0, 0);
        };
        const real numeric = (eval(step) - eval(-step)) / (2 * step);
        wq.value.a[idx] = saved;
        Tape t3;
        Node* out3 = multi_head_attention(t3, t3.leaf(x), t3.leaf(mem), ap);
        Node* l3 = sum_all(t3, t3.hadamard(out3, t3.leaf(w)));
        t3.backward(l3);
        t3.accumulate_param_grads();
        const real analytic = wq.grad.a[idx];
        const real denom = std::max({std::abs(numeric), std::abs(analytic), real(1e-8)});
        EXPECT_NEAR(analytic, numeric, 1e-6 * denom);
        wq.grad.zero();
    }
}

TEST(Tape, DropoutEvalIsIdentity) {
    Rng rng(11);
    Mat x = random_mat(3, 4, rng);
    Tape t;
    Node* a = t.leaf(x);
    Node* b = t.dropout(a, 0.5, rng, /*train=*/false);
    EXPECT_EQ(a, b);
}

TEST(Tape, MaskZeroesGradient) {
    Rng rng(12);
    Mat x = random_mat(2, 3, rng);
    Mat m(2, 3);
    m(0, 0) = 1.0;
    m(1, 2) = 1.0;
    Tape t;
    Node* a = t.leaf(x, true);
    Node* loss = sum_all(t, t.mask(a, m));
    t.backward(loss);
    EXPECT_NEAR(loss->val(0, 0), x(0, 0) + x(1, 2), 1e-12);
    EXPECT_DOUBLE_EQ(a->grad(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(a->grad(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(a->grad(1, 2), 1.0);
}

TEST(Rng, DeterministicStreams) {
    Rng a(99), b(99);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
    Rng c = Rng(99).child(4);
    Rng d = Rng(99).child(4);
    EXPECT_EQ(c.next_u64(), d.next_u64());
    Rng e = Rng(99).child(5);
    EXPECT_NE(Rng(99).child(4).next_u64(), e.next_u64());
}

}  // namespace
