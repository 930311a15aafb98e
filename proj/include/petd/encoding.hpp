#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "petd/config.hpp"
#include "petd/corpus.hpp"
#include "petd/errors.hpp"
#include "petd/nn.hpp"

namespace petd {

struct EmbeddingTables {
    Param* word = nullptr;     // |W| x d, shared by encoders and decoder
    Param* topic = nullptr;    // |T| x d
    Param* persona = nullptr;  // |P| x d
    Param* user = nullptr;     // |U| x d
    Param* pos = nullptr;      // l_max x d, learned positions

    static EmbeddingTables create(ParamStore& ps, int n_words, int n_topics, int n_personas, int n_users,
                                  int d, int l_max, Rng& rng) {
        EmbeddingTables t;
        t.word = &ps.create("emb.word", n_words, d);
        t.topic = &ps.create("emb.topic", n_topics, d);
        t.persona = &ps.create("emb.persona", n_personas, d);
        t.user = &ps.create("emb.user", n_users, d);
        t.pos = &ps.create("emb.pos", l_max, d);
        rng.fill_normal(t.word->value, 0.0, 0.02);
        rng.fill_normal(t.topic->value, 0.0, 0.02);
        rng.fill_normal(t.user->value, 0.0, 0.02);
        rng.fill_normal(t.pos->value, 0.0, 0.02);
        // persona rows come from init_persona_embeddings / an override file
        return t;
    }
};

// Deterministic hashed bag-of-words persona vectors: each token contributes a
// pseudo-random direction seeded from a stable hash of the token, the sum is
// normalized to unit length. Personas sharing words land nearby.
inline Mat init_persona_embeddings(const std::vector<Persona>& personas, int d) {
    if (d < 1) throw UsageError("embedding width must be >= 1");
    Mat table(static_cast<int>(personas.size()), d);
    for (size_t i = 0; i < personas.size(); ++i) {
        for (const auto& tok : tokenize(personas[i].text)) {
            Rng r(fnv1a64(tok));
            for (int j = 0; j < d; ++j) table(static_cast<int>(i), j) += r.normal();
        }
        real norm = 0.0;
        for (int j = 0; j < d; ++j) norm += table(static_cast<int>(i), j) * table(static_cast<int>(i), j);
        norm = std::sqrt(norm);
        if (norm > 0.0)
            for (int j = 0; j < d; ++j) table(static_cast<int>(i), j) /= norm;
    }
    return table;
}

// Override file: {"rows": R, "cols": C, "data": [row-major numbers]}.
inline Mat load_persona_override(const std::string& path, int expect_rows, int expect_cols) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open persona vector file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid persona vector JSON: ") + e.what());
    }
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    if (rows != expect_rows || cols != expect_cols)
        throw DataError("persona vector file shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " does not match expected " + std::to_string(expect_rows) + "x" +
                        std::to_string(expect_cols));
    const auto data = j.at("data").get<std::vector<real>>();
    if (data.size() != static_cast<size_t>(rows) * cols)
        throw DataError("persona vector file data length does not match its shape header");
    return Mat(rows, cols, data);
}

struct ContextEncoding {
    Node* token_states = nullptr;    // n_tokens x d final encoder states
    Node* sentence_repr = nullptr;   // |C| x d mean-pooled per sentence
    std::vector<std::pair<int, int>> spans;  // [begin, end) token range per kept sentence
    std::vector<int> token_ids;      // flattened word ids after truncation
    int first_kept_sentence = 0;     // oldest sentences are dropped on overflow
};

// Concatenates the sentences into one token sequence, encodes it, and
// mean-pools the token states inside each sentence span.
inline ContextEncoding encode_context(Tape& t, const EmbeddingTables& tables, const Encoder& enc,
                                      const ModelConfig& cfg, const std::vector<std::vector<int>>& sentences,
                                      bool train, Rng& rng) {
    if (sentences.empty()) throw UsageError("context must contain at least one sentence");
    ContextEncoding out;
    size_t first = 0;
    size_t total = 0;
    for (const auto& s : sentences) total += s.size();
    while (first + 1 < sentences.size() && total > static_cast<size_t>(cfg.l_max)) {
        total -= sentences[first].size();
        ++first;  // oldest sentences go first, the newest is never dropped
    }
    out.first_kept_sentence = static_cast<int>(first);
    std::vector<std::vector<int>> kept(sentences.begin() + first, sentences.end());
    if (kept.back().size() > static_cast<size_t>(cfg.l_max) && kept.size() == 1)
        kept[0].erase(kept[0].begin(), kept[0].end() - cfg.l_max);

    for (const auto& s : kept) {
        const int begin = static_cast<int>(out.token_ids.size());
        out.token_ids.insert(out.token_ids.end(), s.begin(), s.end());
        out.spans.emplace_back(begin, static_cast<int>(out.token_ids.size()));
    }
    if (out.token_ids.empty()) throw UsageError("context sentences are all empty");

    std::vector<int> positions(out.token_ids.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    Node* x = t.add(t.gather_rows(t.param(*tables.word), out.token_ids),
                    t.gather_rows(t.param(*tables.pos), positions));
    x = t.dropout(x, cfg.dropout, rng, train);
    out.token_states = enc.apply(t, x, cfg.dropout, rng, train);

    std::vector<Node*> pooled;
    pooled.reserve(out.spans.size());
    for (const auto& [b, e] : out.spans) {
        if (b == e) throw UsageError("empty sentence in context");
        pooled.push_back(t.mean_rows(t.slice_rows(out.token_states, b, e)));
    }
    out.sentence_repr = t.concat_rows(pooled);
    return out;
}

// Topic path encoding: one topic embedding per position.
inline Node* encode_topic_path(Tape& t, const EmbeddingTables& tables, const Encoder& enc,
                               const ModelConfig& cfg, const std::vector<int>& topic_ids, bool train,
                               Rng& rng) {
    if (topic_ids.empty()) throw UsageError("topic path must contain at least one topic");
    std::vector<int> positions(topic_ids.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    Node* x = t.add(t.gather_rows(t.param(*tables.topic), topic_ids),
                    t.gather_rows(t.param(*tables.pos), positions));
    x = t.dropout(x, cfg.dropout, rng, train);
    return enc.apply(t, x, cfg.dropout, rng, train);
}

inline Node* pool_sequence(Tape& t, Node* repr, PoolMode mode) {
    if (repr->val.rows < 1) throw UsageError("cannot pool an empty sequence");
    if (mode == PoolMode::mean) return t.mean_rows(repr);
    return t.slice_rows(repr, repr->val.rows - 1, repr->val.rows);
}

}  // namespace petd
