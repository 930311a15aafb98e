#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "petd/corpus.hpp"
#include "petd/encoding.hpp"
#include "petd/nn.hpp"

namespace petd {

// Cross-attention memory for generation. Rows are token-level context states,
// token-level states of the selected topic's name, the enhanced topic path,
// and one slot each for the user embedding and the positive persona vector.
// Copyable rows carry the source word id (and surface, for out-of-vocab
// words typed at inference time).
struct DecoderMemory {
    Node* rows = nullptr;
    std::vector<int> copy_word_ids;          // -1 for non-copyable rows
    std::vector<std::string> copy_surfaces;  // "" for non-copyable rows
};

// Decoder states for a teacher-forced prefix (BOS + tokens). Row z is the
// state used to predict the token after prefix position z.
inline Node* decode_states(Tape& t, const Decoder& dec, const EmbeddingTables& tables,
                           const ModelConfig& cfg, const std::vector<int>& prefix_ids,
                           const DecoderMemory& memory, bool train, Rng& rng,
                           std::vector<AttentionCapture>* cross_captures = nullptr) {
    if (prefix_ids.empty() || prefix_ids.front() != Vocab::kBos)
        throw UsageError("decoder prefix must start with BOS");
    if (static_cast<int>(prefix_ids.size()) > cfg.l_max)
        throw UsageError("decoder prefix exceeds the maximum length");
    if (memory.rows == nullptr || memory.rows->val.rows < 2)
        throw UsageError("decoder memory must hold at least the user and persona slots");
    std::vector<int> positions(prefix_ids.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);
    Node* x = t.add(t.gather_rows(t.param(*tables.word), prefix_ids),
                    t.gather_rows(t.param(*tables.pos), positions));
    x = t.dropout(x, cfg.dropout, rng, train);
    return dec.apply(t, x, memory.rows, cfg.dropout, rng, train, cross_captures);
}

struct ExtendedProbs {
    Node* probs = nullptr;        // n x (V + n_copy) single softmax
    std::vector<int> copy_rows;   // memory row per copy column
    int vocab_size = 0;
};

// Generation scores over the vocabulary and copy scores over the copyable
// memory rows share one softmax; per-word probabilities are the sum of the
// generation column and all matching copy columns.
inline ExtendedProbs extended_token_probs(Tape& t, const Mlp& out_proj, Node* states,
                                          const EmbeddingTables& tables, const DecoderMemory& memory) {
    ExtendedProbs out;
    out.vocab_size = tables.word->value.rows;
    Node* z = out_proj.apply(t, states);
    Node* gen_logits = t.matmul_nt(z, t.param(*tables.word));
    for (int r = 0; r < static_cast<int>(memory.copy_word_ids.size()); ++r)
        if (memory.copy_word_ids[r] >= 0) out.copy_rows.push_back(r);
    if (out.copy_rows.empty()) {
        out.probs = t.softmax_rows(gen_logits);
        return out;
    }
    Node* copy_states = t.gather_rows(memory.rows, out.copy_rows);
    Node* copy_logits = t.matmul_nt(z, copy_states);
    out.probs = t.softmax_rows(t.concat_cols({gen_logits, copy_logits}));
    return out;
}

// Columns of the extended softmax that count toward one target word.
inline std::vector<int> target_columns(const ExtendedProbs& ext, const DecoderMemory& memory, int word_id,
                                       const std::string& surface, bool* used_unk = nullptr) {
    std::vector<int> cols;
    if (word_id != Vocab::kUnk) {
        cols.push_back(word_id);
        for (size_t j = 0; j < ext.copy_rows.size(); ++j)
            if (memory.copy_word_ids[ext.copy_rows[j]] == word_id)
                cols.push_back(ext.vocab_size + static_cast<int>(j));
        return cols;
    }
    if (!surface.empty())
        for (size_t j = 0; j < ext.copy_rows.size(); ++j)
            if (memory.copy_surfaces[ext.copy_rows[j]] == surface)
                cols.push_back(ext.vocab_size + static_cast<int>(j));
    if (cols.empty()) {
        cols.push_back(Vocab::kUnk);  // absent from vocab and copy source
        if (used_unk) *used_unk = true;
    }
    return cols;
}

struct GenerationLoss {
    Node* value = nullptr;  // mean negative log-likelihood over target positions
    int token_count = 0;
    int unk_fallbacks = 0;
};

// Teacher-forced loss over target tokens followed by EOS. Copy mass for a
// word is merged with its generation mass before the log.
inline GenerationLoss generation_loss(Tape& t, const ExtendedProbs& ext, const DecoderMemory& memory,
                                      const std::vector<int>& target_ids,
                                      const std::vector<std::string>* target_surfaces = nullptr) {
    if (target_ids.empty()) throw UsageError("target response must be non-empty");
    GenerationLoss out;
    std::vector<std::vector<int>> cols;
    cols.reserve(target_ids.size());
    for (size_t i = 0; i < target_ids.size(); ++i) {
        bool unk = false;
        const std::string surface =
            target_surfaces && i < target_surfaces->size() ? (*target_surfaces)[i] : std::string();
        cols.push_back(target_columns(ext, memory, target_ids[i], surface, &unk));
        if (unk) ++out.unk_fallbacks;
    }
    out.value = t.neg_log_pick_sum(ext.probs, cols);
    out.token_count = static_cast<int>(target_ids.size());
    return out;
}

// Value-level distribution over the surface vocabulary for one step:
// vocabulary probabilities with copy mass merged in, plus extra entries for
// out-of-vocab source words.
struct TokenDistribution {
    std::vector<real> vocab_probs;
    std::vector<std::string> extra_surfaces;
    std::vector<real> extra_probs;
    real generation_mass = 0.0;
    real copy_mass = 0.0;

    real total() const {
        real s = 0.0;
        for (real p : vocab_probs) s += p;
        for (real p : extra_probs) s += p;
        return s;
    }
};

inline TokenDistribution merge_distribution(const ExtendedProbs& ext, const DecoderMemory& memory, int row) {
    TokenDistribution d;
    d.vocab_probs.assign(static_cast<size_t>(ext.vocab_size), 0.0);
    for (int c = 0; c < ext.vocab_size; ++c) {
        d.vocab_probs[c] = ext.probs->val(row, c);
        d.generation_mass += d.vocab_probs[c];
    }
    std::unordered_map<std::string, size_t> extra_index;
    for (size_t j = 0; j < ext.copy_rows.size(); ++j) {
        const real p = ext.probs->val(row, ext.vocab_size + static_cast<int>(j));
        d.copy_mass += p;
        const int r = ext.copy_rows[j];
        const int wid = memory.copy_word_ids[r];
        if (wid != Vocab::kUnk) {
            d.vocab_probs[wid] += p;
        } else {
            const std::string& surf = memory.copy_surfaces[r];
            auto it = extra_index.find(surf);
            if (it == extra_index.end()) {
                extra_index.emplace(surf, d.extra_surfaces.size());
                d.extra_surfaces.push_back(surf);
                d.extra_probs.push_back(p);
            } else {
                d.extra_probs[it->second] += p;
            }
        }
    }
    return d;
}

}  // namespace petd
