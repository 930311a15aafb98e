#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "petd/eval.hpp"
#include "petd/model.hpp"

namespace petd {

// Adam with decoupled weight decay. The decay coefficient mirrors the L2
// regularization strength without entering the loss gradient.
struct Adam {
    real beta1 = 0.9;
    real beta2 = 0.999;
    real eps = 1e-8;
    long t = 0;

    void step(ParamStore& params, real lr, real weight_decay) {
        ++t;
        const real bc1 = 1.0 - std::pow(beta1, static_cast<real>(t));
        const real bc2 = 1.0 - std::pow(beta2, static_cast<real>(t));
        for (Param* p : params.all()) {
            if (p->m.rows == 0) {
                p->m = Mat(p->value.rows, p->value.cols);
                p->v = Mat(p->value.rows, p->value.cols);
            }
            for (size_t i = 0; i < p->value.a.size(); ++i) {
                const real g = p->grad.a[i];
                p->m.a[i] = beta1 * p->m.a[i] + (1.0 - beta1) * g;
                p->v.a[i] = beta2 * p->v.a[i] + (1.0 - beta2) * g * g;
                const real mhat = p->m.a[i] / bc1;
                const real vhat = p->v.a[i] / bc2;
                p->value.a[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->value.a[i]);
            }
        }
    }
};

struct LossBreakdown {
    real total = 0.0;  // lambda-weighted sum plus the reported L2 term
    real lc = 0.0;
    real lt = 0.0;
    real lr = 0.0;
    real reg = 0.0;
    int contrastive_skips = 0;
    int contrastive_clamps = 0;
};

// Loss report for one example under the current parameters. The L2 term is
// reported in the total; its update is applied as decoupled decay.
inline LossBreakdown joint_loss(PetdModel& model, const TrainingExample& ex, const TrainConfig& cfg,
                                Variant variant = Variant::full, Rng* rng = nullptr) {
    Tape t(false);
    ForwardOptions o;
    o.train = false;
    o.variant = variant;
    o.rng = rng;
    ForwardResult r = model.forward(t, ex, o);
    LossBreakdown b;
    const real lambda_c = variant == Variant::wo_auxiliary_task ? 0.0 : cfg.lambda_c;
    b.lc = r.loss_c ? r.loss_c->val(0, 0) : 0.0;
    b.lt = r.loss_t ? r.loss_t->val(0, 0) : 0.0;
    b.lr = r.loss_r ? r.loss_r->val(0, 0) : 0.0;
    b.reg = cfg.l2 * model.params().squared_norm();
    b.total = lambda_c * b.lc + cfg.lambda_t * b.lt + cfg.lambda_r * b.lr + b.reg;
    b.contrastive_skips = r.contrastive_skipped ? 1 : 0;
    b.contrastive_clamps = r.contrastive_clamped ? 1 : 0;
    if (!std::isfinite(b.total)) {
        std::ostringstream os;
        os << "non-finite loss (lc=" << b.lc << " lt=" << b.lt << " lr=" << b.lr
           << "); parameter norm=" << std::sqrt(model.params().squared_norm());
        throw NumericError(os.str());
    }
    return b;
}

struct EpochLog {
    int epoch = 0;
    real lc = 0.0, lt = 0.0, lr = 0.0, reg = 0.0;
    real val_hit1 = 0.0, val_hit3 = 0.0, val_hit5 = 0.0, val_bleu1 = 0.0;
};

struct TrainResult {
    std::vector<EpochLog> history;
    int epochs_run = 0;
    int best_epoch = 0;
    real best_hit3 = 0.0;
    real best_bleu1 = 0.0;
    MetricReport best_val;
};

namespace train_detail {

struct GradStore {
    std::vector<std::pair<Param*, Mat>> grads;
};

inline void reduce_into_params(std::vector<GradStore>& stores, real scale) {
    for (auto& store : stores)
        for (auto& [p, g] : store.grads) axpy(scale, g, p->grad);
}

}  // namespace train_detail

// Joint optimization with per-epoch topic-set refresh and early stopping on
// the validation Hit@3 / BLEU-1 pair (an epoch "improves" when either does).
inline TrainResult train(PetdModel& model, std::vector<TrainingExample> train_ex,
                         const std::vector<TrainingExample>& valid_ex, const TrainConfig& cfg,
                         Variant variant = Variant::full) {
    if (train_ex.empty() || valid_ex.empty()) throw DataError("train and validation splits must be non-empty");
    const real lambda_c = variant == Variant::wo_auxiliary_task ? 0.0 : cfg.lambda_c;
    const int n_threads =
        cfg.threads > 0 ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());

    Adam adam;
    TrainResult result;
    real best_hit3 = -1.0, best_bleu1 = -1.0;
    int stale_epochs = 0;
    std::vector<Mat> best_snapshot;
    auto snapshot_params = [&]() {
        best_snapshot.clear();
        for (Param* p : model.params().all()) best_snapshot.push_back(p->value);
    };

    std::ofstream log;
    if (!cfg.log_path.empty()) {
        log.open(cfg.log_path);
        if (!log) throw DataError("cannot write training log: " + cfg.log_path);
        log << "epoch,loss_c,loss_t,loss_r,reg,val_hit1,val_hit3,val_hit5,val_bleu1\n";
    }

    Rng order_rng(cfg.seed);
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        model.refresh_topic_sets();
        if (variant == Variant::w_topic_similar) model.refresh_similarity_sets();
        if (cfg.dump_topic_sets && !cfg.topic_set_dump_dir.empty()) {
            std::filesystem::create_directories(cfg.topic_set_dump_dir);
            std::ofstream dump(cfg.topic_set_dump_dir + "/topic_sets_epoch" + std::to_string(epoch) + ".csv");
            dump << "persona,rank,topic\n";
            const auto& sets = model.topic_sets().topic_ids;
            for (size_t p = 0; p < sets.size(); ++p)
                for (size_t r = 0; r < sets[p].size(); ++r)
                    dump << p << ',' << r << ',' << sets[p][r] << '\n';
        }

        // Deterministic shuffle per epoch.
        Rng epoch_rng = order_rng.child(static_cast<uint64_t>(epoch));
        for (size_t i = train_ex.size(); i > 1; --i)
            std::swap(train_ex[i - 1], train_ex[epoch_rng.uniform_int(static_cast<int>(i))]);

        real sum_lc = 0.0, sum_lt = 0.0, sum_lr = 0.0;
        long count_lc = 0, count_lt = 0, count_lr = 0;
        for (size_t batch_begin = 0; batch_begin < train_ex.size(); batch_begin += cfg.batch) {
            const size_t batch_end = std::min(batch_begin + cfg.batch, train_ex.size());
            const int bsz = static_cast<int>(batch_end - batch_begin);
            model.params().zero_grad();
            if (model.config().refresh_sets_per_step) model.refresh_topic_sets();

            std::vector<train_detail::GradStore> stores(n_threads);
            std::vector<real> th_lc(n_threads, 0.0), th_lt(n_threads, 0.0), th_lr(n_threads, 0.0);
            std::vector<long> th_nc(n_threads, 0), th_nt(n_threads, 0), th_nr(n_threads, 0);
            std::vector<std::string> th_err(n_threads);

            auto worker = [&](int tid) {
                try {
                    for (size_t i = batch_begin + tid; i < batch_end; i += n_threads) {
                        Rng ex_rng = Rng(cfg.seed).child((static_cast<uint64_t>(epoch) << 32) ^ i);
                        Tape tape;
                        ForwardOptions o;
                        o.train = true;
                        o.variant = variant;
                        o.rng = &ex_rng;
                        o.want_contrastive = lambda_c != 0.0;
                        o.want_generation = cfg.lambda_r != 0.0;
                        ForwardResult r = model.forward(tape, train_ex[i], o);
                        Node* loss = model.weighted_loss(tape, r, lambda_c, cfg.lambda_t, cfg.lambda_r);
                        if (!std::isfinite(loss->val(0, 0)) || loss->val(0, 0) > 1e6)
                            throw NumericError("training diverged: loss " + std::to_string(loss->val(0, 0)) +
                                               ", parameter norm " +
                                               std::to_string(std::sqrt(model.params().squared_norm())));
                        tape.backward(loss);
                        tape.accumulate_param_grads_into(stores[tid].grads);
                        if (r.loss_c) {
                            th_lc[tid] += r.loss_c->val(0, 0);
                            ++th_nc[tid];
                        }
                        if (r.loss_t) {
                            th_lt[tid] += r.loss_t->val(0, 0);
                            ++th_nt[tid];
                        }
                        if (r.loss_r) {
                            th_lr[tid] += r.loss_r->val(0, 0);
                            ++th_nr[tid];
                        }
                    }
                } catch (const std::exception& e) {
                    th_err[tid] = e.what();
                }
            };
            if (n_threads == 1) {
                worker(0);
            } else {
                std::vector<std::thread> pool;
                for (int tid = 0; tid < n_threads; ++tid) pool.emplace_back(worker, tid);
                for (auto& th : pool) th.join();
            }
            for (const auto& err : th_err)
                if (!err.empty()) throw NumericError(err);

            train_detail::reduce_into_params(stores, 1.0 / bsz);
            adam.step(model.params(), cfg.lr, cfg.l2);
            for (int tid = 0; tid < n_threads; ++tid) {
                sum_lc += th_lc[tid];
                sum_lt += th_lt[tid];
                sum_lr += th_lr[tid];
                count_lc += th_nc[tid];
                count_lt += th_nt[tid];
                count_lr += th_nr[tid];
            }
        }

        EvalOptions vo;
        vo.variant = variant;
        vo.decode_cap = cfg.eval_decode_cap;
        vo.seed = cfg.seed ^ 0x5eedULL;
        MetricReport val = evaluate(model, valid_ex, vo);

        EpochLog el;
        el.epoch = epoch;
        el.lc = count_lc ? sum_lc / count_lc : 0.0;
        el.lt = count_lt ? sum_lt / count_lt : 0.0;
        el.lr = count_lr ? sum_lr / count_lr : 0.0;
        el.reg = cfg.l2 * model.params().squared_norm();
        el.val_hit1 = val.hit1;
        el.val_hit3 = val.hit3;
        el.val_hit5 = val.hit5;
        el.val_bleu1 = val.bleu1;
        result.history.push_back(el);
        if (log.is_open())
            log << epoch << ',' << el.lc << ',' << el.lt << ',' << el.lr << ',' << el.reg << ','
                << el.val_hit1 << ',' << el.val_hit3 << ',' << el.val_hit5 << ',' << el.val_bleu1 << '\n';

        const bool improved = val.hit3 > best_hit3 || val.bleu1 > best_bleu1;
        if (improved) {
            if (val.hit3 > best_hit3) best_hit3 = val.hit3;
            if (val.bleu1 > best_bleu1) best_bleu1 = val.bleu1;
            result.best_epoch = epoch;
            result.best_val = val;
            snapshot_params();
            stale_epochs = 0;
        } else {
            ++stale_epochs;
        }
        result.epochs_run = epoch;
        if (stale_epochs >= cfg.patience) break;
    }

    if (!best_snapshot.empty()) {
        auto params = model.params().all();
        for (size_t i = 0; i < params.size(); ++i) params[i]->value = best_snapshot[i];
        model.refresh_topic_sets();
    }
    result.best_hit3 = best_hit3;
    result.best_bleu1 = best_bleu1;
    return result;
}

// ---- checkpointing ----

constexpr char kCheckpointMagic[8] = {'P', 'E', 'T', 'D', 'C', 'K', 'P', '1'};

struct CheckpointInfo {
    ModelConfig model_cfg;
    CorpusMeta meta;
    int epoch = 0;
    nlohmann::json metrics;
};

inline void save_checkpoint(const std::string& path, PetdModel& model, const Adam& adam, int epoch,
                            const nlohmann::json& metrics) {
    nlohmann::json manifest;
    manifest["format"] = "petd-checkpoint";
    manifest["version"] = 1;
    const ModelConfig& m = model.config();
    manifest["model"] = {{"d", m.d},
                         {"enc_layers", m.enc_layers},
                         {"enc_heads", m.enc_heads},
                         {"ffn_width", m.ffn_width},
                         {"dec_layers", m.dec_layers},
                         {"dec_heads", m.dec_heads},
                         {"dropout", m.dropout},
                         {"l_max", m.l_max},
                         {"k", m.k},
                         {"mlp_hidden", m.mlp_hidden},
                         {"expansion_ffn_hidden", m.expansion_ffn_hidden},
                         {"expansion_ffn_act", m.expansion_ffn_act},
                         {"pool", m.pool == PoolMode::mean ? "mean" : "last"},
                         {"refresh_sets_per_step", m.refresh_sets_per_step},
                         {"stop_grad_aux_topics", m.stop_grad_aux_topics},
                         {"max_response_len", m.max_response_len}};
    const CorpusMeta& meta = model.meta();
    nlohmann::json personas = nlohmann::json::array();
    for (const auto& p : meta.personas) personas.push_back({{"id", p.id}, {"text", p.text}});
    nlohmann::json users = nlohmann::json::array();
    for (const auto& u : meta.users) users.push_back({{"id", u.id}, {"personas", u.persona_ids}});
    manifest["meta"] = {{"vocab", meta.vocab_words},
                        {"topics", meta.topic_names},
                        {"personas", personas},
                        {"users", users}};
    nlohmann::json plist = nlohmann::json::array();
    for (Param* p : model.params().all())
        plist.push_back({{"name", p->name}, {"rows", p->value.rows}, {"cols", p->value.cols}});
    manifest["params"] = plist;
    manifest["epoch"] = epoch;
    manifest["adam_t"] = adam.t;
    manifest["metrics"] = metrics;

    const std::string ms = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write(kCheckpointMagic, 8);
    const uint64_t len = ms.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(ms.data(), static_cast<std::streamsize>(ms.size()));
    auto write_mat = [&](const Mat& mat, size_t expect) {
        if (mat.a.empty()) {
            const std::vector<real> zeros(expect, 0.0);
            out.write(reinterpret_cast<const char*>(zeros.data()),
                      static_cast<std::streamsize>(expect * sizeof(real)));
        } else {
            out.write(reinterpret_cast<const char*>(mat.a.data()),
                      static_cast<std::streamsize>(mat.a.size() * sizeof(real)));
        }
    };
    for (Param* p : model.params().all()) {
        write_mat(p->value, p->value.size());
        write_mat(p->m, p->value.size());
        write_mat(p->v, p->value.size());
    }
}

inline std::unique_ptr<PetdModel> load_checkpoint(const std::string& path, Adam* adam_out = nullptr,
                                                  CheckpointInfo* info_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw DataError("not a checkpoint file: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string ms(len, '\0');
    in.read(ms.data(), static_cast<std::streamsize>(len));
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(ms);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("corrupt checkpoint manifest: ") + e.what());
    }

    ModelConfig m;
    const auto& jm = manifest.at("model");
    m.d = jm.at("d");
    m.enc_layers = jm.at("enc_layers");
    m.enc_heads = jm.at("enc_heads");
    m.ffn_width = jm.at("ffn_width");
    m.dec_layers = jm.at("dec_layers");
    m.dec_heads = jm.at("dec_heads");
    m.dropout = jm.at("dropout");
    m.l_max = jm.at("l_max");
    m.k = jm.at("k");
    m.mlp_hidden = jm.at("mlp_hidden");
    m.expansion_ffn_hidden = jm.at("expansion_ffn_hidden");
    m.expansion_ffn_act = jm.at("expansion_ffn_act");
    m.pool = parse_pool_mode(jm.at("pool"));
    m.refresh_sets_per_step = jm.at("refresh_sets_per_step");
    m.stop_grad_aux_topics = jm.at("stop_grad_aux_topics");
    m.max_response_len = jm.at("max_response_len");

    CorpusMeta meta;
    const auto& jmeta = manifest.at("meta");
    meta.vocab_words = jmeta.at("vocab").get<std::vector<std::string>>();
    meta.topic_names = jmeta.at("topics").get<std::vector<std::string>>();
    for (const auto& pj : jmeta.at("personas"))
        meta.personas.push_back({pj.at("id").get<int>(), pj.at("text").get<std::string>()});
    for (const auto& uj : jmeta.at("users"))
        meta.users.push_back({uj.at("id").get<int>(), uj.at("personas").get<std::vector<int>>()});

    auto model = std::make_unique<PetdModel>(m, meta, /*init_seed=*/0);
    const auto plist = manifest.at("params");
    auto params = model->params().all();
    if (plist.size() != params.size()) throw DataError("checkpoint parameter list does not match the model");
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& pj = plist[i];
        if (pj.at("name") != params[i]->name || pj.at("rows") != params[i]->value.rows ||
            pj.at("cols") != params[i]->value.cols)
            throw DataError("checkpoint parameter mismatch at " + params[i]->name);
        auto read_mat = [&](Mat& mat) {
            mat = Mat(params[i]->value.rows, params[i]->value.cols);
            in.read(reinterpret_cast<char*>(mat.a.data()),
                    static_cast<std::streamsize>(mat.a.size() * sizeof(real)));
            if (!in) throw DataError("checkpoint truncated at " + params[i]->name);
        };
        read_mat(params[i]->value);
        read_mat(params[i]->m);
        read_mat(params[i]->v);
    }
    if (adam_out) adam_out->t = manifest.at("adam_t");
    if (info_out) {
        info_out->model_cfg = m;
        info_out->meta = model->meta();
        info_out->epoch = manifest.at("epoch");
        info_out->metrics = manifest.value("metrics", nlohmann::json::object());
    }
    model->refresh_topic_sets();
    return model;
}

// ---- gradient check ----

struct GradCheckGroup {
    std::string name;
    real max_rel_err = 0.0;
    int entries_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckGroup> groups;
    real max_rel_err = 0.0;

    bool passes(real tolerance) const { return max_rel_err < tolerance; }
};

// Central finite differences against the analytic gradient of the
// lambda-weighted joint loss, sampled per parameter group.
inline GradCheckReport grad_check(PetdModel& model, const TrainingExample& ex, const TrainConfig& cfg,
                                  int samples_per_group = 10, real step = 1e-5) {
    auto loss_value = [&]() {
        Tape t(false);
        ForwardOptions o;
        o.train = false;
        ForwardResult r = model.forward(t, ex, o);
        Node* loss = model.weighted_loss(t, r, cfg.lambda_c, cfg.lambda_t, cfg.lambda_r);
        return loss->val(0, 0);
    };

    model.params().zero_grad();
    {
        Tape t;
        ForwardOptions o;
        o.train = false;
        ForwardResult r = model.forward(t, ex, o);
        Node* loss = model.weighted_loss(t, r, cfg.lambda_c, cfg.lambda_t, cfg.lambda_r);
        t.backward(loss);
        t.accumulate_param_grads();
    }

    GradCheckReport report;
    Rng pick_rng(911);
    for (Param* p : model.params().all()) {
        GradCheckGroup group;
        group.name = p->name;
        const int n = static_cast<int>(p->value.size());
        std::vector<int> entries;
        if (n <= samples_per_group) {
            for (int i = 0; i < n; ++i) entries.push_back(i);
        } else {
            // always include the entry with the largest analytic gradient
            int argmax = 0;
            for (int i = 1; i < n; ++i)
                if (std::abs(p->grad.a[i]) > std::abs(p->grad.a[argmax])) argmax = i;
            entries.push_back(argmax);
            while (static_cast<int>(entries.size()) < samples_per_group) {
                int i = pick_rng.uniform_int(n);
                if (std::find(entries.begin(), entries.end(), i) == entries.end()) entries.push_back(i);
            }
        }
        for (int i : entries) {
            const real saved = p->value.a[i];
            p->value.a[i] = saved + step;
            const real up = loss_value();
            p->value.a[i] = saved - step;
            const real down = loss_value();
            p->value.a[i] = saved;
            const real numeric = (up - down) / (2.0 * step);
            const real analytic = p->grad.a[i];
            const real denom = std::max(std::abs(numeric), std::abs(analytic));
            const real err = denom < 1e-10 ? 0.0 : std::abs(numeric - analytic) / denom;
            group.max_rel_err = std::max(group.max_rel_err, err);
            ++group.entries_checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
        report.groups.push_back(group);
    }
    return report;
}

}  // namespace petd
