#pragma once

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "petd/config.hpp"
#include "petd/corpus.hpp"
#include "petd/errors.hpp"
#include "petd/mat.hpp"
#include "petd/rng.hpp"

namespace petd {

struct WorldSpec {
    int n_users = 200;
    int n_personas_global = 40;
    int personas_per_user = 4;
    int n_topics = 50;
    int topics_per_persona_affinity = 8;
    real transition_temperature = 0.35;
    int dialogue_len_min = 4;
    int dialogue_len_max = 8;
    int n_dialogues = 2000;
    uint64_t seed = 13;
    // Probability that a turn keeps the previous turn's active persona.
    // High values give dialogues a persistent persona focus.
    real persona_stay_prob = 0.9;

    void validate() const {
        if (n_users < 1 || n_personas_global < 1 || personas_per_user < 1 || n_topics < 1 ||
            topics_per_persona_affinity < 1 || dialogue_len_min < 1 || n_dialogues < 0)
            throw DataError("world spec counts must be >= 1 (n_dialogues >= 0)");
        if (personas_per_user > n_personas_global)
            throw DataError("personas_per_user exceeds n_personas_global");
        if (topics_per_persona_affinity > n_topics)
            throw DataError("topics_per_persona_affinity exceeds n_topics");
        if (dialogue_len_min > dialogue_len_max)
            throw DataError("dialogue length range is inverted");
        if (transition_temperature <= 0.0) throw DataError("transition_temperature must be positive");
        if (persona_stay_prob < 0.0 || persona_stay_prob > 1.0)
            throw DataError("persona_stay_prob must lie in [0, 1]");
    }
};

struct GroundTruth {
    Mat persona_topic_affinity;          // |P| x |T|, rows sum to 1
    Mat transition_kernel;               // |T| x |T|, row stochastic
    std::vector<std::vector<int>> active_personas;  // per dialogue, per turn
};

// Tempered sampling from unnormalized weights: p_j proportional to w_j^(1/tau).
// Computed in log space; tau -> 0 approaches the argmax.
inline int sample_tempered(const std::vector<real>& w, real tau, Rng& rng) {
    const int n = static_cast<int>(w.size());
    std::vector<real> logits(n);
    real mx = -1e300;
    for (int j = 0; j < n; ++j) {
        logits[j] = w[j] > 0.0 ? std::log(w[j]) / tau : -1e300;
        mx = std::max(mx, logits[j]);
    }
    if (mx <= -1e299) return rng.uniform_int(n);  // all weights zero
    std::vector<real> p(n);
    for (int j = 0; j < n; ++j) p[j] = std::exp(logits[j] - mx);
    return rng.categorical(p.data(), n);
}

namespace synth_detail {

inline Mat make_affinity(const WorldSpec& spec, Rng& rng) {
    Mat aff(spec.n_personas_global, spec.n_topics);
    const real smoothing = 0.05;
    for (int p = 0; p < spec.n_personas_global; ++p) {
        auto chosen = sample_without_replacement(spec.n_topics, spec.topics_per_persona_affinity, rng);
        real total = 0.0;
        std::vector<real> w(chosen.size());
        for (size_t i = 0; i < chosen.size(); ++i) {
            real u = rng.uniform();
            w[i] = 0.2 + u * u;
            total += w[i];
        }
        for (int t = 0; t < spec.n_topics; ++t) aff(p, t) = smoothing / spec.n_topics;
        for (size_t i = 0; i < chosen.size(); ++i) aff(p, chosen[i]) += (1.0 - smoothing) * w[i] / total;
    }
    return aff;
}

inline Mat make_kernel(int n_topics, Rng& rng) {
    Mat ker(n_topics, n_topics);
    for (int i = 0; i < n_topics; ++i) {
        real total = 0.0;
        for (int j = 0; j < n_topics; ++j) {
            real u = rng.uniform();
            ker(i, j) = 0.02 / n_topics + u * u * u * u;
            total += ker(i, j);
        }
        for (int j = 0; j < n_topics; ++j) ker(i, j) /= total;
    }
    return ker;
}

}  // namespace synth_detail

// Builds a corpus whose topic choices follow persona-conditioned transitions.
// System utterances name the active persona's keyword; seeker utterances only
// name the topic, so persona evidence is sparse and favors longer histories.
inline std::pair<Corpus, GroundTruth> generate_world(const WorldSpec& spec) {
    spec.validate();
    Rng world_rng(spec.seed);

    Corpus c;
    GroundTruth gt;
    gt.persona_topic_affinity = synth_detail::make_affinity(spec, world_rng);
    gt.transition_kernel = synth_detail::make_kernel(spec.n_topics, world_rng);

    for (int p = 0; p < spec.n_personas_global; ++p)
        c.personas.push_back({p, "i really enjoy trait" + std::to_string(p) + " talk"});
    for (int t = 0; t < spec.n_topics; ++t) c.topics.push_back({t, "topic" + std::to_string(t)});
    for (int u = 0; u < spec.n_users; ++u) {
        User user;
        user.id = u;
        user.persona_ids = sample_without_replacement(spec.n_personas_global, spec.personas_per_user, world_rng);
        std::sort(user.persona_ids.begin(), user.persona_ids.end());
        c.users.push_back(std::move(user));
    }

    gt.active_personas.resize(spec.n_dialogues);
    for (int d = 0; d < spec.n_dialogues; ++d) {
        Rng rng = Rng(spec.seed).child(static_cast<uint64_t>(d));
        Dialogue dia;
        dia.id = d;
        dia.user_id = rng.uniform_int(spec.n_users);
        const auto& pu = c.users[dia.user_id].persona_ids;
        const int len = rng.uniform_int(spec.dialogue_len_min, spec.dialogue_len_max);

        int active = pu[rng.uniform_int(static_cast<int>(pu.size()))];
        int prev_topic = -1;
        for (int turn = 0; turn < len; ++turn) {
            if (turn > 0 && rng.uniform() >= spec.persona_stay_prob)
                active = pu[rng.uniform_int(static_cast<int>(pu.size()))];
            std::vector<real> w(spec.n_topics);
            for (int j = 0; j < spec.n_topics; ++j) {
                w[j] = gt.persona_topic_affinity(active, j);
                if (prev_topic >= 0) w[j] *= gt.transition_kernel(prev_topic, j);
            }
            const int topic = sample_tempered(w, spec.transition_temperature, rng);

            Turn t;
            t.speaker = (turn % 2 == 0) ? Speaker::seeker : Speaker::system;
            t.topic_id = topic;
            const std::string& tname = c.topics[topic].name;
            if (t.speaker == Speaker::system)
                t.text = "let's talk about " + tname + " because trait" + std::to_string(active);
            else
                t.text = "what about " + tname + " then";
            t.gold_personas = {active};
            dia.turns.push_back(std::move(t));
            gt.active_personas[d].push_back(active);
            prev_topic = topic;
        }
        c.dialogues.push_back(std::move(dia));
    }
    return {std::move(c), std::move(gt)};
}

inline void write_ground_truth(const GroundTruth& gt, const std::string& path) {
    json j;
    auto mat_to_json = [](const Mat& m) {
        json rows = json::array();
        for (int i = 0; i < m.rows; ++i) {
            json row = json::array();
            for (int c2 = 0; c2 < m.cols; ++c2) row.push_back(m(i, c2));
            rows.push_back(row);
        }
        return rows;
    };
    j["affinity"] = mat_to_json(gt.persona_topic_affinity);
    j["kernel"] = mat_to_json(gt.transition_kernel);
    j["active_personas"] = gt.active_personas;
    std::ofstream out(path);
    if (!out) throw DataError("cannot write ground truth file: " + path);
    out << j.dump() << '\n';
}

inline GroundTruth load_ground_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open ground truth file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw DataError(std::string("invalid ground truth JSON: ") + e.what());
    }
    auto mat_from_json = [](const json& rows) {
        Mat m(static_cast<int>(rows.size()), rows.empty() ? 0 : static_cast<int>(rows[0].size()));
        for (int i = 0; i < m.rows; ++i)
            for (int c2 = 0; c2 < m.cols; ++c2) m(i, c2) = rows[i][c2].get<real>();
        return m;
    };
    GroundTruth gt;
    gt.persona_topic_affinity = mat_from_json(j.at("affinity"));
    gt.transition_kernel = mat_from_json(j.at("kernel"));
    gt.active_personas = j.at("active_personas").get<std::vector<std::vector<int>>>();
    return gt;
}

inline WorldSpec world_spec_from(const KvConfig& kv) {
    WorldSpec s;
    s.n_users = static_cast<int>(kv.get_int("world.n_users", s.n_users));
    s.n_personas_global = static_cast<int>(kv.get_int("world.n_personas_global", s.n_personas_global));
    s.personas_per_user = static_cast<int>(kv.get_int("world.personas_per_user", s.personas_per_user));
    s.n_topics = static_cast<int>(kv.get_int("world.n_topics", s.n_topics));
    s.topics_per_persona_affinity =
        static_cast<int>(kv.get_int("world.topics_per_persona_affinity", s.topics_per_persona_affinity));
    s.transition_temperature = kv.get_real("world.transition_temperature", s.transition_temperature);
    s.dialogue_len_min = static_cast<int>(kv.get_int("world.dialogue_len_min", s.dialogue_len_min));
    s.dialogue_len_max = static_cast<int>(kv.get_int("world.dialogue_len_max", s.dialogue_len_max));
    s.n_dialogues = static_cast<int>(kv.get_int("world.n_dialogues", s.n_dialogues));
    s.seed = static_cast<uint64_t>(kv.get_int("world.seed", static_cast<long>(s.seed)));
    s.persona_stay_prob = kv.get_real("world.persona_stay_prob", s.persona_stay_prob);
    s.validate();
    return s;
}

}  // namespace petd
