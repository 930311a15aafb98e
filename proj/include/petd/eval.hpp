#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "petd/metrics.hpp"
#include "petd/model.hpp"

namespace petd {

struct EvalOptions {
    Variant variant = Variant::full;
    int decode_cap = 0;  // greedy-decode at most this many responses (0 = all)
    bool compute_generation = true;
    uint64_t seed = 1;
    std::string selector_trace_path;  // JSONL persona-selection trace
    std::string generations_path;     // JSONL decoded outputs
};

// Scores a frozen model on a set of examples. Topic metrics cover every
// example; generation metrics cover the system-turn targets.
inline MetricReport evaluate(PetdModel& model, const std::vector<TrainingExample>& examples,
                             EvalOptions opts = {}) {
    MetricReport rep;
    rep.n_examples = static_cast<int>(examples.size());
    std::vector<std::vector<int>> rankings;
    std::vector<int> targets;
    std::vector<std::vector<int>> selected_sets, gold_sets;
    std::vector<std::vector<std::string>> hyps, refs;
    real nll_sum = 0.0;
    long nll_tokens = 0;

    std::ofstream trace, gens;
    if (!opts.selector_trace_path.empty()) {
        trace.open(opts.selector_trace_path);
        if (!trace) throw DataError("cannot write selector trace: " + opts.selector_trace_path);
    }
    if (!opts.generations_path.empty()) {
        gens.open(opts.generations_path);
        if (!gens) throw DataError("cannot write generations: " + opts.generations_path);
    }

    Rng rng(opts.seed);
    const Vocab& vocab = model.vocab();
    int example_index = 0;
    for (const auto& ex : examples) {
        Tape t(false);
        ForwardOptions fo;
        fo.variant = opts.variant;
        fo.rng = &rng;
        fo.want_contrastive = false;
        fo.want_generation = opts.compute_generation;
        ForwardResult r = model.forward(t, ex, fo);

        rankings.push_back(r.topic_ranking);
        targets.push_back(ex.target_topic);
        if (r.split.fallback_used) ++rep.split_fallbacks;

        std::vector<int> chosen;
        for (int idx : r.split.positive) chosen.push_back(r.user_personas.at(idx));
        std::sort(chosen.begin(), chosen.end());
        if (!ex.gold_personas.empty() && r.flags.personas_used) {
            selected_sets.push_back(chosen);
            gold_sets.push_back(ex.gold_personas);
        }
        if (trace.is_open()) {
            nlohmann::json pj = nlohmann::json::array();
            for (size_t j = 0; j < r.user_personas.size(); ++j)
                pj.push_back({{"persona", r.user_personas[j]}, {"score", r.persona_scores(0, static_cast<int>(j))}});
            nlohmann::json jt{{"example", example_index},
                              {"dialogue", ex.dialogue_id},
                              {"position", ex.position},
                              {"personas", pj},
                              {"positive", chosen}};
            trace << jt.dump() << '\n';
        }

        if (opts.compute_generation && ex.has_response && !ex.target_response.empty()) {
            ++rep.n_generation_examples;
            nll_sum += r.generation_nll * r.generation_tokens;
            nll_tokens += r.generation_tokens;
            const bool decode = opts.decode_cap == 0 || rep.n_decoded < opts.decode_cap;
            if (decode) {
                ++rep.n_decoded;
                GreedyResult g = model.greedy_decode(ex, fo, model.config().max_response_len);
                std::vector<std::string> ref;
                for (int id : ex.target_response) ref.push_back(vocab.word(id));
                hyps.push_back(g.words);
                refs.push_back(ref);
                if (gens.is_open()) {
                    nlohmann::json jg{{"example", example_index},
                                      {"predicted_topic", g.used_topic},
                                      {"response_tokens", g.words},
                                      {"copy_fraction", g.copy_fraction}};
                    gens << jg.dump() << '\n';
                }
            }
        }
        ++example_index;
    }

    rep.hit1 = hit_at_k(rankings, targets, 1);
    rep.hit3 = hit_at_k(rankings, targets, 3);
    rep.hit5 = hit_at_k(rankings, targets, 5);
    rep.ppl = nll_tokens > 0 ? std::exp(nll_sum / nll_tokens) : 0.0;
    if (!hyps.empty()) {
        rep.bleu1 = bleu_n(hyps, refs, 1);
        rep.bleu2 = bleu_n(hyps, refs, 2);
        rep.distinct1 = distinct_n(hyps, 1);
        rep.distinct2 = distinct_n(hyps, 2);
    }
    if (!selected_sets.empty()) {
        rep.has_prf = true;
        rep.prf = persona_prf(selected_sets, gold_sets);
    }
    return rep;
}

}  // namespace petd
