#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "petd/rng.hpp"
#include "petd/tape.hpp"

namespace petd {

// Owns all named parameters of a model. Creation order is the canonical
// ordering for checkpoints and gradient reports.
class ParamStore {
   public:
    Param& create(const std::string& name, int rows, int cols) {
        if (index_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
        list_.push_back(std::make_unique<Param>(name, rows, cols));
        index_[name] = list_.size() - 1;
        return *list_.back();
    }

    Param& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return *list_[it->second];
    }

    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Param*> all() {
        std::vector<Param*> out;
        out.reserve(list_.size());
        for (auto& p : list_) out.push_back(p.get());
        return out;
    }

    size_t count() const { return list_.size(); }

    size_t scalar_count() const {
        size_t n = 0;
        for (auto& p : list_) n += p->value.size();
        return n;
    }

    void zero_grad() {
        for (auto& p : list_) p->grad.zero();
    }

    real squared_norm() const {
        real s = 0.0;
        for (auto& p : list_)
            for (real v : p->value.a) s += v * v;
        return s;
    }

   private:
    std::vector<std::unique_ptr<Param>> list_;
    std::unordered_map<std::string, size_t> index_;
};

enum class Activation { gelu, relu, identity };

inline Node* activate(Tape& t, Node* x, Activation act) {
    switch (act) {
        case Activation::gelu: return t.gelu(x);
        case Activation::relu: return t.relu(x);
        case Activation::identity: return x;
    }
    return x;
}

// Two-layer feed-forward block: act(x W1 + b1) W2 + b2.
struct Mlp {
    Param* w1 = nullptr;
    Param* b1 = nullptr;
    Param* w2 = nullptr;
    Param* b2 = nullptr;
    Activation act = Activation::gelu;

    static Mlp create(ParamStore& ps, const std::string& prefix, int in, int hidden, int out,
                      Activation act, Rng& rng) {
        Mlp m;
        m.w1 = &ps.create(prefix + ".w1", in, hidden);
        m.b1 = &ps.create(prefix + ".b1", 1, hidden);
        m.w2 = &ps.create(prefix + ".w2", hidden, out);
        m.b2 = &ps.create(prefix + ".b2", 1, out);
        m.act = act;
        rng.fill_normal(m.w1->value, 0.0, std::sqrt(2.0 / (in + hidden)));
        rng.fill_normal(m.w2->value, 0.0, std::sqrt(2.0 / (hidden + out)));
        return m;
    }

    Node* apply(Tape& t, Node* x) const {
        Node* h = t.add_rowvec(t.matmul(x, t.param(*w1)), t.param(*b1));
        h = activate(t, h, act);
        return t.add_rowvec(t.matmul(h, t.param(*w2)), t.param(*b2));
    }
};

struct LayerNormParams {
    Param* gain = nullptr;
    Param* bias = nullptr;

    static LayerNormParams create(ParamStore& ps, const std::string& prefix, int d) {
        LayerNormParams ln;
        ln.gain = &ps.create(prefix + ".gain", 1, d);
        ln.bias = &ps.create(prefix + ".bias", 1, d);
        ln.gain->value.fill(1.0);
        return ln;
    }

    Node* apply(Tape& t, Node* x) const { return t.layer_norm(x, t.param(*gain), t.param(*bias)); }
};

struct AttentionParams {
    Param* wq = nullptr;
    Param* wk = nullptr;
    Param* wv = nullptr;
    Param* wo = nullptr;
    int heads = 1;

    static AttentionParams create(ParamStore& ps, const std::string& prefix, int d, int heads, Rng& rng) {
        if (d % heads != 0) throw std::invalid_argument("model width must be divisible by head count");
        AttentionParams ap;
        ap.wq = &ps.create(prefix + ".wq", d, d);
        ap.wk = &ps.create(prefix + ".wk", d, d);
        ap.wv = &ps.create(prefix + ".wv", d, d);
        ap.wo = &ps.create(prefix + ".wo", d, d);
        ap.heads = heads;
        const real s = std::sqrt(1.0 / d);
        rng.fill_normal(ap.wq->value, 0.0, s);
        rng.fill_normal(ap.wk->value, 0.0, s);
        rng.fill_normal(ap.wv->value, 0.0, s);
        rng.fill_normal(ap.wo->value, 0.0, s);
        return ap;
    }
};

// Per-head softmax attention weights captured for inspection and tests.
struct AttentionCapture {
    std::vector<Mat> head_weights;  // one (n_q x n_kv) matrix per head
};

// Multi-head scaled dot-product attention. Self-attention passes the same
// node for queries and memory; an additive mask (e.g. causal) is optional.
inline Node* multi_head_attention(Tape& t, Node* q_in, Node* kv_in, const AttentionParams& p,
                                  const Mat* additive_mask = nullptr, AttentionCapture* capture = nullptr) {
    const int d = q_in->val.cols;
    const int dh = d / p.heads;
    Node* Q = t.matmul(q_in, t.param(*p.wq));
    Node* K = t.matmul(kv_in, t.param(*p.wk));
    Node* V = t.matmul(kv_in, t.param(*p.wv));
    std::vector<Node*> outs;
    outs.reserve(p.heads);
    for (int h = 0; h < p.heads; ++h) {
        Node* qh = t.slice_cols(Q, h * dh, (h + 1) * dh);
        Node* kh = t.slice_cols(K, h * dh, (h + 1) * dh);
        Node* vh = t.slice_cols(V, h * dh, (h + 1) * dh);
        Node* scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<real>(dh)));
        if (additive_mask) scores = t.add(scores, t.leaf(*additive_mask));
        Node* w = t.softmax_rows(scores);
        if (capture) capture->head_weights.push_back(w->val);
        outs.push_back(t.matmul(w, vh));
    }
    return t.matmul(t.concat_cols(outs), t.param(*p.wo));
}

struct EncoderLayer {
    LayerNormParams ln1, ln2;
    AttentionParams attn;
    Mlp ffn;
};

// Pre-norm transformer encoder over continuous input rows. A zero-layer
// encoder is the identity map.
struct Encoder {
    std::vector<EncoderLayer> layers;
    LayerNormParams final_ln;  // applied only when layers exist
    int d = 0;

    static Encoder create(ParamStore& ps, const std::string& prefix, int d, int n_layers, int heads,
                          int ffn_width, Rng& rng) {
        Encoder e;
        e.d = d;
        for (int l = 0; l < n_layers; ++l) {
            const std::string lp = prefix + ".layer" + std::to_string(l);
            EncoderLayer layer;
            layer.ln1 = LayerNormParams::create(ps, lp + ".ln1", d);
            layer.attn = AttentionParams::create(ps, lp + ".attn", d, heads, rng);
            layer.ln2 = LayerNormParams::create(ps, lp + ".ln2", d);
            layer.ffn = Mlp::create(ps, lp + ".ffn", d, ffn_width, d, Activation::gelu, rng);
            e.layers.push_back(layer);
        }
        if (n_layers > 0) e.final_ln = LayerNormParams::create(ps, prefix + ".final_ln", d);
        return e;
    }

    Node* apply(Tape& t, Node* x, real dropout, Rng& rng, bool train,
                std::vector<AttentionCapture>* captures = nullptr) const {
        for (const auto& layer : layers) {
            AttentionCapture* cap = nullptr;
            if (captures) {
                captures->emplace_back();
                cap = &captures->back();
            }
            Node* normed = layer.ln1.apply(t, x);
            Node* a = multi_head_attention(t, normed, normed, layer.attn, nullptr, cap);
            x = t.add(x, t.dropout(a, dropout, rng, train));
            Node* f = layer.ffn.apply(t, layer.ln2.apply(t, x));
            x = t.add(x, t.dropout(f, dropout, rng, train));
        }
        if (!layers.empty()) x = final_ln.apply(t, x);
        return x;
    }
};

struct DecoderLayer {
    LayerNormParams ln1, ln2, ln3;
    AttentionParams self_attn;
    AttentionParams cross_attn;
    Mlp ffn;
};

struct Decoder {
    std::vector<DecoderLayer> layers;
    LayerNormParams final_ln;
    int d = 0;

    static Decoder create(ParamStore& ps, const std::string& prefix, int d, int n_layers, int heads,
                          int ffn_width, Rng& rng) {
        Decoder dec;
        dec.d = d;
        for (int l = 0; l < n_layers; ++l) {
            const std::string lp = prefix + ".layer" + std::to_string(l);
            DecoderLayer layer;
            layer.ln1 = LayerNormParams::create(ps, lp + ".ln1", d);
            layer.self_attn = AttentionParams::create(ps, lp + ".self", d, heads, rng);
            layer.ln2 = LayerNormParams::create(ps, lp + ".ln2", d);
            layer.cross_attn = AttentionParams::create(ps, lp + ".cross", d, heads, rng);
            layer.ln3 = LayerNormParams::create(ps, lp + ".ln3", d);
            layer.ffn = Mlp::create(ps, lp + ".ffn", d, ffn_width, d, Activation::gelu, rng);
            dec.layers.push_back(layer);
        }
        dec.final_ln = LayerNormParams::create(ps, prefix + ".final_ln", d);
        return dec;
    }

    // x: prefix states (n x d); memory: cross-attention rows (m x d).
    Node* apply(Tape& t, Node* x, Node* memory, real dropout, Rng& rng, bool train,
                std::vector<AttentionCapture>* cross_captures = nullptr) const {
        const int n = x->val.rows;
        Mat causal(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) causal(i, j) = -1e9;
        for (const auto& layer : layers) {
            Node* normed = layer.ln1.apply(t, x);
            Node* a = multi_head_attention(t, normed, normed, layer.self_attn, &causal);
            x = t.add(x, t.dropout(a, dropout, rng, train));
            AttentionCapture* cap = nullptr;
            if (cross_captures) {
                cross_captures->emplace_back();
                cap = &cross_captures->back();
            }
            Node* c = multi_head_attention(t, layer.ln2.apply(t, x), memory, layer.cross_attn, nullptr, cap);
            x = t.add(x, t.dropout(c, dropout, rng, train));
            Node* f = layer.ffn.apply(t, layer.ln3.apply(t, x));
            x = t.add(x, t.dropout(f, dropout, rng, train));
        }
        return final_ln.apply(t, x);
    }
};

}  // namespace petd
