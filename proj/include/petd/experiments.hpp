#pragma once

#include <string>
#include <vector>

#include "petd/synthgen.hpp"
#include "petd/train.hpp"

namespace petd {

struct CorpusSplits {
    Corpus train, valid, test;
};

// Deterministic dialogue-level split. Dialogue ids are reassigned densely
// inside each part so the parts are standalone corpora.
inline CorpusSplits split_corpus(const Corpus& corpus, uint64_t seed, real train_frac = 0.8,
                                 real valid_frac = 0.1) {
    if (corpus.dialogues.size() < 3) throw DataError("need at least 3 dialogues to split");
    std::vector<int> order(corpus.dialogues.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed ^ 0x517eULL);
    for (size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.uniform_int(static_cast<int>(i))]);
    const size_t n = order.size();
    size_t n_train = static_cast<size_t>(train_frac * n);
    size_t n_valid = static_cast<size_t>(valid_frac * n);
    n_train = std::max<size_t>(1, std::min(n_train, n - 2));
    n_valid = std::max<size_t>(1, std::min(n_valid, n - n_train - 1));

    CorpusSplits s;
    s.train.personas = s.valid.personas = s.test.personas = corpus.personas;
    s.train.users = s.valid.users = s.test.users = corpus.users;
    s.train.topics = s.valid.topics = s.test.topics = corpus.topics;
    auto push = [](Corpus& dst, const Dialogue& d) {
        Dialogue copy = d;
        copy.id = static_cast<int>(dst.dialogues.size());
        dst.dialogues.push_back(std::move(copy));
    };
    for (size_t i = 0; i < n; ++i) {
        const Dialogue& d = corpus.dialogues[order[i]];
        if (i < n_train)
            push(s.train, d);
        else if (i < n_train + n_valid)
            push(s.valid, d);
        else
            push(s.test, d);
    }
    return s;
}

struct ExperimentResult {
    Variant variant = Variant::full;
    TrainResult training;
    MetricReport test_report;
};

// Train one variant on the splits and score it on the test part.
inline ExperimentResult run_variant_experiment(const CorpusSplits& splits, const Vocab& vocab,
                                               const TrainConfig& cfg, Variant variant) {
    auto train_ex = window_examples(splits.train, vocab, cfg.history);
    auto valid_ex = window_examples(splits.valid, vocab, cfg.history);
    auto test_ex = window_examples(splits.test, vocab, cfg.history);
    if (train_ex.empty() || valid_ex.empty() || test_ex.empty())
        throw DataError("a corpus split windowed to zero examples");

    CorpusMeta meta = CorpusMeta::from(splits.train, vocab);
    ExperimentResult result;
    result.variant = variant;
    PetdModel model(cfg.model, meta, cfg.seed);
    if (variant == Variant::w_co_occurrence) model.set_cooccurrence_from(splits.train);
    if (variant == Variant::w_topic_similar) model.refresh_similarity_sets();
    result.training = train(model, train_ex, valid_ex, cfg, variant);

    EvalOptions eo;
    eo.variant = variant;
    eo.decode_cap = cfg.eval_decode_cap;
    eo.seed = cfg.seed ^ 0x7e57ULL;
    result.test_report = evaluate(model, test_ex, eo);
    return result;
}

inline ExperimentResult run_ablation(const Corpus& corpus, const Vocab& vocab, const TrainConfig& cfg,
                                     Variant variant) {
    CorpusSplits splits = split_corpus(corpus, cfg.seed);
    return run_variant_experiment(splits, vocab, cfg, variant);
}

struct SweepCell {
    std::string axis;
    int value = 0;
    MetricReport report;
};

// One trained run per grid cell over history length or per-persona topic count.
inline std::vector<SweepCell> sweep(const Corpus& corpus, const Vocab& vocab, const TrainConfig& base,
                                    const std::string& axis, const std::vector<int>& values) {
    if (axis != "history" && axis != "k") throw UsageError("sweep axis must be 'history' or 'k'");
    if (values.empty()) throw UsageError("sweep grid is empty");
    CorpusSplits splits = split_corpus(corpus, base.seed);
    std::vector<SweepCell> cells;
    for (int v : values) {
        TrainConfig cfg = base;
        if (axis == "history")
            cfg.history = v;
        else {
            cfg.model.k = v;
        }
        SweepCell cell;
        cell.axis = axis;
        cell.value = v;
        cell.report = run_variant_experiment(splits, vocab, cfg, Variant::full).test_report;
        cells.push_back(std::move(cell));
    }
    return cells;
}

inline void write_sweep_csv(const std::vector<SweepCell>& cells, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write sweep table: " + path);
    out << "axis,value,hit1,hit3,hit5,ppl,bleu1,bleu2,distinct1,distinct2\n";
    for (const auto& c : cells)
        out << c.axis << ',' << c.value << ',' << c.report.hit1 << ',' << c.report.hit3 << ','
            << c.report.hit5 << ',' << c.report.ppl << ',' << c.report.bleu1 << ',' << c.report.bleu2
            << ',' << c.report.distinct1 << ',' << c.report.distinct2 << '\n';
}

inline void write_ablation_csv(const std::vector<ExperimentResult>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ablation table: " + path);
    out << "variant,hit1,hit3,hit5,ppl,bleu1,bleu2,distinct1,distinct2,persona_f1\n";
    for (const auto& r : rows) {
        out << variant_name(r.variant) << ',' << r.test_report.hit1 << ',' << r.test_report.hit3 << ','
            << r.test_report.hit5 << ',' << r.test_report.ppl << ',' << r.test_report.bleu1 << ','
            << r.test_report.bleu2 << ',' << r.test_report.distinct1 << ',' << r.test_report.distinct2
            << ',' << (r.test_report.has_prf ? r.test_report.prf.f1 : 0.0) << '\n';
    }
}

}  // namespace petd
