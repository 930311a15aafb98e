#pragma once

#include <memory>
#include <string>
#include <vector>

#include "petd/config.hpp"
#include "petd/corpus.hpp"
#include "petd/encoding.hpp"
#include "petd/expansion.hpp"
#include "petd/persona_selector.hpp"
#include "petd/responder.hpp"
#include "petd/topic_head.hpp"

namespace petd {

enum class Variant {
    full,
    wo_global_topic,
    w_topic_similar,
    w_co_occurrence,
    wo_persona,
    wo_persona_selection,
    w_random_persona_selection,
    wo_auxiliary_task,
    wo_contrastive_learning,
};

inline const std::vector<std::pair<Variant, std::string>>& variant_names() {
    static const std::vector<std::pair<Variant, std::string>> names = {
        {Variant::full, "full"},
        {Variant::wo_global_topic, "wo_global_topic"},
        {Variant::w_topic_similar, "w_topic_similar"},
        {Variant::w_co_occurrence, "w_co_occurrence"},
        {Variant::wo_persona, "wo_persona"},
        {Variant::wo_persona_selection, "wo_persona_selection"},
        {Variant::w_random_persona_selection, "w_random_persona_selection"},
        {Variant::wo_auxiliary_task, "wo_auxiliary_task"},
        {Variant::wo_contrastive_learning, "wo_contrastive_learning"},
    };
    return names;
}

inline std::string variant_name(Variant v) {
    for (const auto& [var, name] : variant_names())
        if (var == v) return name;
    return "?";
}

inline Variant parse_variant(const std::string& s) {
    for (const auto& [var, name] : variant_names())
        if (name == s) return var;
    throw UsageError("unknown ablation variant: " + s);
}

// What the forward pass actually did; ablation tests audit these.
struct StructuralFlags {
    enum class Inner { affinity, topic_similar, co_occurrence, none };
    enum class Split { threshold, all_positive, random_two, none };
    enum class Aux { contrastive, nll, none };

    bool global_aggregation = false;
    Inner inner = Inner::none;
    bool personas_used = false;
    Split split = Split::none;
    Aux aux = Aux::none;
};

struct ForwardOptions {
    bool train = false;
    Variant variant = Variant::full;
    Rng* rng = nullptr;  // dropout and the random-selection variant
    bool want_contrastive = true;
    bool want_generation = true;
    // Raw token surfaces per context sentence, for copying out-of-vocab words
    // typed at inference time. May be null.
    const std::vector<std::vector<std::string>>* context_surfaces = nullptr;
};

struct ForwardResult {
    Node* loss_total = nullptr;
    Node* loss_c = nullptr;
    Node* loss_t = nullptr;
    Node* loss_r = nullptr;
    Mat topic_probs;                 // 1 x |T|
    std::vector<int> topic_ranking;  // descending probability
    std::vector<int> user_personas;  // global persona ids in P_u order
    Mat persona_scores;              // 1 x |P_u| (empty when personas unused)
    PersonaSplit split;
    bool contrastive_skipped = false;  // negative set empty
    bool contrastive_clamped = false;
    int generation_tokens = 0;
    real generation_nll = 0.0;  // mean NLL (value of loss_r)
    int unk_fallbacks = 0;
    StructuralFlags flags;

    // Pipeline nodes reused by greedy decoding on the same tape.
    ContextEncoding ctx;
    Node* enhanced_path = nullptr;  // re-encoded topic path
    Node* e_u = nullptr;
    Node* h_pos = nullptr;
};

struct GreedyResult {
    std::vector<std::string> words;
    std::vector<int> word_ids;  // UNK for copied out-of-vocab words
    int used_topic = 0;
    real copy_fraction = 0.0;  // emitted tokens whose copy mass beat generation mass
    ForwardResult forward;
};

// Corpus-level metadata a trained model must carry to run on its own
// (checkpointing, chat).
struct CorpusMeta {
    std::vector<std::string> vocab_words;
    std::vector<std::string> topic_names;
    std::vector<Persona> personas;
    std::vector<User> users;

    static CorpusMeta from(const Corpus& c, const Vocab& v) {
        CorpusMeta m;
        m.vocab_words = v.words();
        m.topic_names = v.topic_names();
        m.personas = c.personas;
        m.users = c.users;
        return m;
    }
};

class PetdModel {
   public:
    PetdModel(const ModelConfig& cfg, CorpusMeta meta, uint64_t init_seed)
        : cfg_(cfg), meta_(std::move(meta)) {
        vocab_.set_words(meta_.vocab_words, meta_.topic_names);
        const int V = vocab_.size();
        const int T = static_cast<int>(meta_.topic_names.size());
        const int P = static_cast<int>(meta_.personas.size());
        const int U = static_cast<int>(meta_.users.size());
        if (T < 1 || P < 1 || U < 1) throw DataError("model needs at least one topic, persona and user");

        Rng rng(init_seed);
        tables_ = EmbeddingTables::create(params_, V, T, P, U, cfg_.d, cfg_.l_max, rng);
        tables_.persona->value = init_persona_embeddings(meta_.personas, cfg_.d);

        enc_ctx_ = Encoder::create(params_, "enc_ctx", cfg_.d, cfg_.enc_layers, cfg_.enc_heads, cfg_.ffn(), rng);
        enc_tp_ = Encoder::create(params_, "enc_tp", cfg_.d, cfg_.enc_layers, cfg_.enc_heads, cfg_.ffn(), rng);

        W_aff_ = &params_.create("expansion.W", cfg_.d, cfg_.d);
        init_near_identity(W_aff_->value, rng);
        f_expansion_ = Mlp::create(params_, "expansion.mlp", 3 * cfg_.d, cfg_.scorer_hidden(), cfg_.d,
                                   Activation::gelu, rng);
        exp_ffn_ = ExpansionFfn::create(params_, "expansion.ffn", cfg_.d, cfg_.exp_ffn_hidden(),
                                        parse_activation(cfg_.expansion_ffn_act), rng);
        enc_exp_ = Encoder::create(params_, "enc_exp", cfg_.d, cfg_.enc_layers, cfg_.enc_heads, cfg_.ffn(), rng);

        f_selector_ = Mlp::create(params_, "selector.mlp", 3 * cfg_.d, cfg_.scorer_hidden(), cfg_.d,
                                  Activation::gelu, rng);
        W_aux_ = &params_.create("selector.Wg", cfg_.d, cfg_.d);
        init_near_identity(W_aux_->value, rng);

        f_topic_ = Mlp::create(params_, "topichead.mlp", 4 * cfg_.d, cfg_.scorer_hidden(), cfg_.d,
                               Activation::gelu, rng);

        dec_ = Decoder::create(params_, "decoder", cfg_.d, cfg_.dec_layers, cfg_.dec_heads, cfg_.ffn(), rng);
        f_out_ = Mlp::create(params_, "decoder.out", cfg_.d, cfg_.scorer_hidden(), cfg_.d, Activation::gelu, rng);

        topic_token_ids_.reserve(meta_.topic_names.size());
        for (const auto& name : meta_.topic_names) topic_token_ids_.push_back(vocab_.encode(name));

        refresh_topic_sets();
    }

    const ModelConfig& config() const { return cfg_; }
    const CorpusMeta& meta() const { return meta_; }
    const Vocab& vocab() const { return vocab_; }
    ParamStore& params() { return params_; }
    EmbeddingTables& tables() { return tables_; }
    const Encoder& context_encoder() const { return enc_ctx_; }
    const Encoder& path_encoder() const { return enc_tp_; }
    const Encoder& expansion_encoder() const { return enc_exp_; }
    const Decoder& decoder() const { return dec_; }
    const Mlp& expansion_scorer() const { return f_expansion_; }
    const Mlp& selector_scorer() const { return f_selector_; }
    const Mlp& topic_scorer() const { return f_topic_; }
    const Mlp& output_scorer() const { return f_out_; }
    const ExpansionFfn& expansion_ffn() const { return exp_ffn_; }
    Param& affinity_weight() { return *W_aff_; }
    Param& aux_weight() { return *W_aux_; }
    const PersonaTopicSets& topic_sets() const { return topic_sets_; }

    int topic_count() const { return tables_.topic->value.rows; }

    // Persona-specific top-k sets; called once per epoch during training.
    void refresh_topic_sets() {
        topic_sets_ = build_persona_topic_sets(tables_.persona->value, W_aff_->value, tables_.topic->value,
                                               std::min(cfg_.k, topic_count()));
    }

    // Per-topic top-k neighbours by embedding cosine (topic-similarity ablation).
    void refresh_similarity_sets() {
        const Mat& T = tables_.topic->value;
        const int n = T.rows, k = std::min(cfg_.k, n);
        sim_sets_.assign(n, {});
        sim_weights_.assign(n, {});
        std::vector<real> norms(n);
        for (int i = 0; i < n; ++i) {
            real s = 0.0;
            for (int j = 0; j < T.cols; ++j) s += T(i, j) * T(i, j);
            norms[i] = std::sqrt(s);
        }
        std::vector<int> order(n);
        std::vector<real> sims(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                real d = 0.0;
                for (int c = 0; c < T.cols; ++c) d += T(i, c) * T(j, c);
                sims[j] = (norms[i] > 0 && norms[j] > 0) ? d / (norms[i] * norms[j]) : 0.0;
            }
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                if (sims[a] != sims[b]) return sims[a] > sims[b];
                return a < b;
            });
            for (int r = 0; r < k; ++r) {
                sim_sets_[i].push_back(order[r]);
                sim_weights_[i].push_back(sims[order[r]]);
            }
        }
    }

    // Adjacent-topic counts from a corpus, row-normalized (co-occurrence ablation).
    void set_cooccurrence_from(const Corpus& corpus) {
        const int n = topic_count();
        Mat counts(n, n);
        for (const auto& d : corpus.dialogues)
            for (size_t i = 0; i + 1 < d.turns.size(); ++i)
                counts(d.turns[i].topic_id, d.turns[i + 1].topic_id) += 1.0;
        for (int i = 0; i < n; ++i) {
            real total = 0.0;
            for (int j = 0; j < n; ++j) total += counts(i, j);
            if (total > 0.0)
                for (int j = 0; j < n; ++j) counts(i, j) /= total;
            else
                for (int j = 0; j < n; ++j) counts(i, j) = 1.0 / n;
        }
        cooc_ = counts;
        const int k = std::min(cfg_.k, n);
        cooc_sets_.assign(n, {});
        cooc_weights_.assign(n, {});
        std::vector<int> order(n);
        for (int i = 0; i < n; ++i) {
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                if (cooc_(i, a) != cooc_(i, b)) return cooc_(i, a) > cooc_(i, b);
                return a < b;
            });
            for (int r = 0; r < k; ++r) {
                cooc_sets_[i].push_back(order[r]);
                cooc_weights_[i].push_back(cooc_(i, order[r]));
            }
        }
    }

    ForwardResult forward(Tape& t, const TrainingExample& ex, const ForwardOptions& o) {
        if (ex.context.empty() || ex.context.size() != ex.topic_path.size())
            throw UsageError("example context and topic path must be non-empty and aligned");
        Rng fallback_rng(0);
        Rng& rng = o.rng ? *o.rng : fallback_rng;
        const Variant variant = o.variant;

        ForwardResult r;
        r.flags = structural_flags(variant);

        // Input representations.
        r.ctx = encode_context(t, tables_, enc_ctx_, cfg_, ex.context, o.train, rng);
        std::vector<int> path(ex.topic_path.begin() + r.ctx.first_kept_sentence, ex.topic_path.end());
        Node* H_tp = encode_topic_path(t, tables_, enc_tp_, cfg_, path, o.train, rng);
        r.e_u = t.gather_rows(t.param(*tables_.user), {ex.user_id});

        const bool personas_used = r.flags.personas_used;
        const std::vector<int>& pu = meta_.users.at(static_cast<size_t>(ex.user_id)).persona_ids;
        Node* P_emb = personas_used ? t.gather_rows(t.param(*tables_.persona), pu) : nullptr;
        if (personas_used) r.user_personas = pu;

        // Persona-specific global topic expansion.
        Node* H_exp = H_tp;
        if (r.flags.global_aggregation) {
            Node* turn_scores = nullptr;
            Mat m01;
            if (personas_used) {
                turn_scores = turn_persona_relevance(t, f_expansion_, r.ctx.sentence_repr, r.e_u, H_tp, P_emb);
                m01 = threshold_mask(turn_scores->val);
            }
            Node* inner = nullptr;  // |P_u| x d or per-turn |tp| x d
            switch (r.flags.inner) {
                case StructuralFlags::Inner::affinity:
                    inner = persona_global_topic_vectors(t, t.param(*W_aff_), P_emb,
                                                         t.param(*tables_.topic), pu, topic_sets_);
                    break;
                case StructuralFlags::Inner::topic_similar:
                    if (sim_sets_.empty()) refresh_similarity_sets();
                    inner = fixed_weight_topic_vectors(t, path, sim_sets_, sim_weights_);
                    break;
                case StructuralFlags::Inner::co_occurrence:
                    if (cooc_sets_.empty())
                        throw UsageError("co-occurrence ablation requires set_cooccurrence_from()");
                    inner = fixed_weight_topic_vectors(t, path, cooc_sets_, cooc_weights_);
                    break;
                case StructuralFlags::Inner::none: break;
            }
            if (r.flags.inner == StructuralFlags::Inner::affinity) {
                H_exp = aggregate_global_topics(t, H_tp, turn_scores, m01, inner, exp_ffn_);
            } else if (inner != nullptr) {
                // Persona-independent inner vectors: the gated persona weights
                // collapse to one scalar per turn.
                Node* gated = t.mask(turn_scores, m01);
                Mat ones(static_cast<int>(pu.size()), 1);
                ones.fill(1.0);
                Node* row_gate = t.matmul(gated, t.leaf(ones));  // |tp| x 1
                std::vector<Node*> rows;
                for (int i = 0; i < inner->val.rows; ++i)
                    rows.push_back(t.matmul(t.slice_rows(row_gate, i, i + 1),
                                            t.slice_rows(inner, i, i + 1)));
                H_exp = exp_ffn_.mlp.apply(t, t.add(H_tp, t.concat_rows(rows)));
            } else {
                H_exp = exp_ffn_.mlp.apply(t, H_tp);  // personas dropped entirely
            }
        }
        r.enhanced_path = reencode_topic_path(t, enc_exp_, cfg_, H_exp, o.train, rng);

        Node* pooled_ctx = pool_sequence(t, r.ctx.sentence_repr, cfg_.pool);
        Node* pooled_tp = pool_sequence(t, r.enhanced_path, cfg_.pool);

        // Persona selection.
        Node* scores = nullptr;
        if (personas_used) {
            scores = persona_relevance(t, f_selector_, pooled_ctx, r.e_u, pooled_tp, P_emb);
            r.persona_scores = scores->val;
            switch (r.flags.split) {
                case StructuralFlags::Split::threshold: r.split = split_persona_sets(scores->val); break;
                case StructuralFlags::Split::all_positive:
                    for (int j = 0; j < static_cast<int>(pu.size()); ++j) r.split.positive.push_back(j);
                    break;
                case StructuralFlags::Split::random_two: {
                    auto chosen = sample_without_replacement(static_cast<int>(pu.size()),
                                                             std::min(2, static_cast<int>(pu.size())), rng);
                    std::sort(chosen.begin(), chosen.end());
                    r.split.positive = chosen;
                    for (int j = 0; j < static_cast<int>(pu.size()); ++j)
                        if (std::find(chosen.begin(), chosen.end(), j) == chosen.end())
                            r.split.negative.push_back(j);
                    break;
                }
                case StructuralFlags::Split::none: break;
            }
        }

        if (personas_used) {
            PersonaAggregates agg = aggregate_persona_sets(t, scores, P_emb, r.split);
            r.h_pos = agg.positive;
            if (r.flags.aux != StructuralFlags::Aux::none && o.want_contrastive) {
                Node* topic_table_aux =
                    cfg_.stop_grad_aux_topics ? t.leaf(tables_.topic->value) : t.param(*tables_.topic);
                Node* g_pos = persona_topic_score(t, agg.positive, t.param(*W_aux_), topic_table_aux);
                if (r.flags.aux == StructuralFlags::Aux::contrastive) {
                    if (agg.negative == nullptr) {
                        r.contrastive_skipped = true;
                    } else {
                        Node* g_neg = persona_topic_score(t, agg.negative, t.param(*W_aux_), topic_table_aux);
                        ContrastiveLoss cl =
                            contrastive_loss(t, t.pick(g_pos, 0, ex.target_topic),
                                             t.pick(g_neg, 0, ex.target_topic));
                        r.loss_c = cl.value;
                        r.contrastive_clamped = cl.clamped;
                    }
                } else {  // plain NLL auxiliary
                    r.loss_c = t.neg_log_pick_sum(g_pos, {{ex.target_topic}});
                }
            }
        } else {
            Mat zeros(1, cfg_.d);
            r.h_pos = t.leaf(zeros);
        }

        // Topic selection.
        Node* probs = topic_distribution(t, f_topic_, pooled_ctx, r.e_u, pooled_tp, r.h_pos,
                                         t.param(*tables_.topic));
        r.topic_probs = probs->val;
        r.topic_ranking = rank_topics(probs->val);
        r.loss_t = topic_loss(t, probs, ex.target_topic);

        // Response generation (teacher forcing, gold topic).
        if (o.want_generation && ex.has_response && !ex.target_response.empty()) {
            DecoderMemory memory = build_memory(t, r, ex.target_topic, o, rng);
            std::vector<int> prefix{Vocab::kBos};
            prefix.insert(prefix.end(), ex.target_response.begin(), ex.target_response.end());
            Node* states = decode_states(t, dec_, tables_, cfg_, prefix, memory, o.train, rng);
            ExtendedProbs ext = extended_token_probs(t, f_out_, states, tables_, memory);
            std::vector<int> targets = ex.target_response;
            targets.push_back(Vocab::kEos);
            GenerationLoss gl = generation_loss(t, ext, memory, targets);
            r.loss_r = gl.value;
            r.generation_tokens = gl.token_count;
            r.generation_nll = gl.value->val(0, 0);
            r.unk_fallbacks = gl.unk_fallbacks;
        }

        return r;
    }

    // Weighted joint loss node; parts that are absent contribute nothing.
    Node* weighted_loss(Tape& t, const ForwardResult& r, real lambda_c, real lambda_t, real lambda_r) {
        std::vector<Node*> parts;
        if (r.loss_c && lambda_c != 0.0) parts.push_back(t.scale(r.loss_c, lambda_c));
        if (r.loss_t && lambda_t != 0.0) parts.push_back(t.scale(r.loss_t, lambda_t));
        if (r.loss_r && lambda_r != 0.0) parts.push_back(t.scale(r.loss_r, lambda_r));
        if (parts.empty()) {
            Mat z(1, 1);
            return t.leaf(z);
        }
        return t.add_many(parts);
    }

    // Argmax decoding with the predicted (or forced) topic as copy source.
    GreedyResult greedy_decode(const TrainingExample& ex, const ForwardOptions& opts, int max_len,
                               int forced_topic = -1) {
        Tape t(false);
        ForwardOptions o = opts;
        o.train = false;
        o.want_generation = false;
        o.want_contrastive = false;
        GreedyResult g;
        g.forward = forward(t, ex, o);
        g.used_topic = forced_topic >= 0 ? forced_topic : g.forward.topic_ranking.at(0);
        Rng fallback_rng(0);
        Rng& rng = o.rng ? *o.rng : fallback_rng;
        DecoderMemory memory = build_memory(t, g.forward, g.used_topic, o, rng);

        std::vector<int> prefix{Vocab::kBos};
        int copy_dominant = 0;
        for (int step = 0; step < max_len; ++step) {
            Node* states = decode_states(t, dec_, tables_, cfg_, prefix, memory, false, rng);
            Node* last = t.slice_rows(states, states->val.rows - 1, states->val.rows);
            ExtendedProbs ext = extended_token_probs(t, f_out_, last, tables_, memory);
            TokenDistribution dist = merge_distribution(ext, memory, 0);
            int best_id = 0;
            real best_p = dist.vocab_probs[0];
            for (int w = 1; w < static_cast<int>(dist.vocab_probs.size()); ++w)
                if (dist.vocab_probs[w] > best_p) {
                    best_p = dist.vocab_probs[w];
                    best_id = w;
                }
            int best_extra = -1;
            for (int e = 0; e < static_cast<int>(dist.extra_probs.size()); ++e)
                if (dist.extra_probs[e] > best_p) {
                    best_p = dist.extra_probs[e];
                    best_extra = e;
                }
            if (best_extra < 0 && best_id == Vocab::kEos) break;
            if (dist.copy_mass > dist.generation_mass) ++copy_dominant;
            if (best_extra >= 0) {
                g.words.push_back(dist.extra_surfaces[best_extra]);
                g.word_ids.push_back(Vocab::kUnk);
                prefix.push_back(Vocab::kUnk);
            } else {
                g.words.push_back(vocab_.word(best_id));
                g.word_ids.push_back(best_id);
                prefix.push_back(best_id);
            }
        }
        g.copy_fraction = g.words.empty() ? 0.0 : static_cast<real>(copy_dominant) / g.words.size();
        return g;
    }

    DecoderMemory build_memory(Tape& t, const ForwardResult& r, int topic_id, const ForwardOptions& o,
                               Rng& rng) {
        if (topic_id < 0 || topic_id >= topic_count()) throw UsageError("topic id out of range");
        DecoderMemory mem;
        // Token-level states of the selected topic's name, via the context encoder.
        const std::vector<int>& tname = topic_token_ids_.at(static_cast<size_t>(topic_id));
        std::vector<int> positions(tname.size());
        for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
        Node* topic_x = t.add(t.gather_rows(t.param(*tables_.word), tname),
                              t.gather_rows(t.param(*tables_.pos), positions));
        Node* topic_states = enc_ctx_.apply(t, topic_x, cfg_.dropout, rng, o.train);

        mem.rows = t.concat_rows({r.ctx.token_states, topic_states, r.enhanced_path, r.e_u, r.h_pos});

        std::vector<std::string> ctx_surfaces = flatten_surfaces(r.ctx, o.context_surfaces);
        for (size_t i = 0; i < r.ctx.token_ids.size(); ++i) {
            mem.copy_word_ids.push_back(r.ctx.token_ids[i]);
            mem.copy_surfaces.push_back(ctx_surfaces[i]);
        }
        for (int id : tname) {
            mem.copy_word_ids.push_back(id);
            mem.copy_surfaces.push_back(vocab_.word(id));
        }
        const int extra = r.enhanced_path->val.rows + 2;
        for (int i = 0; i < extra; ++i) {
            mem.copy_word_ids.push_back(-1);
            mem.copy_surfaces.emplace_back();
        }
        return mem;
    }

   private:
    static Activation parse_activation(const std::string& s) {
        if (s == "gelu") return Activation::gelu;
        if (s == "relu") return Activation::relu;
        if (s == "identity") return Activation::identity;
        throw UsageError("unknown activation: " + s);
    }

    static void init_near_identity(Mat& m, Rng& rng) {
        for (int i = 0; i < m.rows; ++i)
            for (int j = 0; j < m.cols; ++j) m(i, j) = (i == j ? 1.0 : 0.0) + rng.normal(0.0, 0.01);
    }

    static StructuralFlags structural_flags(Variant v) {
        StructuralFlags f;
        f.global_aggregation = v != Variant::wo_global_topic;
        f.personas_used = v != Variant::wo_persona;
        switch (v) {
            case Variant::w_topic_similar: f.inner = StructuralFlags::Inner::topic_similar; break;
            case Variant::w_co_occurrence: f.inner = StructuralFlags::Inner::co_occurrence; break;
            case Variant::wo_global_topic:
            case Variant::wo_persona: f.inner = StructuralFlags::Inner::none; break;
            default: f.inner = StructuralFlags::Inner::affinity; break;
        }
        if (v == Variant::wo_global_topic) f.inner = StructuralFlags::Inner::none;
        if (!f.personas_used) {
            f.split = StructuralFlags::Split::none;
            f.aux = StructuralFlags::Aux::none;
        } else if (v == Variant::wo_persona_selection) {
            f.split = StructuralFlags::Split::all_positive;
            f.aux = StructuralFlags::Aux::contrastive;
        } else if (v == Variant::w_random_persona_selection) {
            f.split = StructuralFlags::Split::random_two;
            f.aux = StructuralFlags::Aux::contrastive;
        } else if (v == Variant::wo_auxiliary_task) {
            f.split = StructuralFlags::Split::threshold;
            f.aux = StructuralFlags::Aux::none;
        } else if (v == Variant::wo_contrastive_learning) {
            f.split = StructuralFlags::Split::threshold;
            f.aux = StructuralFlags::Aux::nll;
        } else {
            f.split = StructuralFlags::Split::threshold;
            f.aux = StructuralFlags::Aux::contrastive;
        }
        return f;
    }

    // Inner aggregation vectors for ablations that replace persona affinity
    // with a fixed per-topic weighting: row i = sum_k w(t_i, k) e_{t_k}.
    Node* fixed_weight_topic_vectors(Tape& t, const std::vector<int>& path,
                                     const std::vector<std::vector<int>>& sets,
                                     const std::vector<std::vector<real>>& weights) {
        std::vector<Node*> rows;
        rows.reserve(path.size());
        for (int topic : path) {
            const auto& ids = sets.at(static_cast<size_t>(topic));
            const auto& w = weights.at(static_cast<size_t>(topic));
            Mat wrow(1, static_cast<int>(w.size()));
            for (size_t i = 0; i < w.size(); ++i) wrow(0, static_cast<int>(i)) = w[i];
            rows.push_back(t.matmul(t.leaf(wrow), t.gather_rows(t.param(*tables_.topic), ids)));
        }
        return t.concat_rows(rows);
    }

    std::vector<std::string> flatten_surfaces(const ContextEncoding& ctx,
                                              const std::vector<std::vector<std::string>>* provided) {
        std::vector<std::string> out;
        out.reserve(ctx.token_ids.size());
        if (provided) {
            for (size_t s = static_cast<size_t>(ctx.first_kept_sentence); s < provided->size(); ++s)
                for (const auto& w : (*provided)[s]) out.push_back(w);
            // A single oversized sentence loses its leading tokens.
            if (out.size() > ctx.token_ids.size())
                out.erase(out.begin(), out.end() - static_cast<long>(ctx.token_ids.size()));
        }
        if (out.size() != ctx.token_ids.size()) {
            out.clear();
            for (int id : ctx.token_ids) out.push_back(vocab_.word(id));
        }
        return out;
    }

    ModelConfig cfg_;
    CorpusMeta meta_;
    Vocab vocab_;
    ParamStore params_;
    EmbeddingTables tables_;
    Encoder enc_ctx_, enc_tp_, enc_exp_;
    Decoder dec_;
    Mlp f_expansion_, f_selector_, f_topic_, f_out_;
    Param* W_aff_ = nullptr;
    Param* W_aux_ = nullptr;
    ExpansionFfn exp_ffn_;
    PersonaTopicSets topic_sets_;
    std::vector<std::vector<int>> topic_token_ids_;

    std::vector<std::vector<int>> sim_sets_;
    std::vector<std::vector<real>> sim_weights_;
    Mat cooc_;
    std::vector<std::vector<int>> cooc_sets_;
    std::vector<std::vector<real>> cooc_weights_;
};

}  // namespace petd
