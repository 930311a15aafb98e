#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <unistd.h>

#include "petd/synthgen.hpp"

using namespace petd;

namespace {

WorldSpec small_spec() {
    WorldSpec s;
    s.n_users = 6;
    s.n_personas_global = 8;
    s.personas_per_user = 3;
    s.n_topics = 10;
    s.topics_per_persona_affinity = 3;
    s.n_dialogues = 12;
    s.dialogue_len_min = 4;
    s.dialogue_len_max = 8;
    s.seed = 42;
    return s;
}

TEST(SynthGen, EmptyWorldIsValid) {
    WorldSpec s = small_spec();
    s.n_dialogues = 0;
    auto [corpus, gt] = generate_world(s);
    EXPECT_TRUE(corpus.dialogues.empty());
    EXPECT_EQ(gt.persona_topic_affinity.rows, s.n_personas_global);
    EXPECT_EQ(gt.persona_topic_affinity.cols, s.n_topics);
    for (int p = 0; p < gt.persona_topic_affinity.rows; ++p) {
        real sum = 0.0;
        for (int t = 0; t < gt.persona_topic_affinity.cols; ++t) sum += gt.persona_topic_affinity(p, t);
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
    for (int i = 0; i < gt.transition_kernel.rows; ++i) {
        real sum = 0.0;
        for (int j = 0; j < gt.transition_kernel.cols; ++j) sum += gt.transition_kernel(i, j);
        EXPECT_NEAR(sum, 1.0, 1e-9);
    }
}

TEST(SynthGen, InvalidSpecIsRejected) {
    WorldSpec s = small_spec();
    s.personas_per_user = 100;
    EXPECT_THROW(generate_world(s), DataError);
    s = small_spec();
    s.dialogue_len_min = 9;
    s.dialogue_len_max = 4;
    EXPECT_THROW(generate_world(s), DataError);
    s = small_spec();
    s.transition_temperature = 0.0;
    EXPECT_THROW(generate_world(s), DataError);
}

TEST(SynthGen, SameSeedGivesByteIdenticalCorpora) {
    WorldSpec s = small_spec();
    auto [c1, g1] = generate_world(s);
    auto [c2, g2] = generate_world(s);

    const auto dir = std::filesystem::temp_directory_path() / ("petd_sg_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    const auto p1 = (dir / "c1.jsonl").string();
    const auto p2 = (dir / "c2.jsonl").string();
    write_corpus(c1, p1);
    write_corpus(c2, p2);
    std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    EXPECT_EQ(s1, s2);
    EXPECT_FALSE(s1.empty());
    std::filesystem::remove_all(dir);

    WorldSpec other = s;
    other.seed = 43;
    auto [c3, g3] = generate_world(other);
    bool any_diff = c3.dialogues.size() != c1.dialogues.size();
    for (size_t i = 0; !any_diff && i < c1.dialogues.size(); ++i)
        any_diff = c1.dialogues[i].turns.size() != c3.dialogues[i].turns.size() ||
                   c1.dialogues[i].user_id != c3.dialogues[i].user_id;
    EXPECT_TRUE(any_diff);
}

TEST(SynthGen, NearZeroTemperatureMatchesArgmaxOracle) {
    WorldSpec s = small_spec();
    s.personas_per_user = 1;  // one persona per user: the active persona is fixed
    s.transition_temperature = 1e-9;
    s.n_dialogues = 10;
    auto [corpus, gt] = generate_world(s);

    for (const auto& d : corpus.dialogues) {
        const int persona = corpus.users[d.user_id].persona_ids[0];
        int prev = -1;
        for (const auto& turn : d.turns) {
            // direct argmax over affinity x kernel
            int best = 0;
            real best_w = -1.0;
            for (int j = 0; j < s.n_topics; ++j) {
                real w = gt.persona_topic_affinity(persona, j);
                if (prev >= 0) w *= gt.transition_kernel(prev, j);
                if (w > best_w) {
                    best_w = w;
                    best = j;
                }
            }
            EXPECT_EQ(turn.topic_id, best);
            prev = turn.topic_id;
        }
    }
}

TEST(SynthGen, GoldPersonasBelongToUser) {
    auto [corpus, gt] = generate_world(small_spec());
    for (const auto& d : corpus.dialogues) {
        const auto& pu = corpus.users[d.user_id].persona_ids;
        for (const auto& turn : d.turns) {
            ASSERT_EQ(turn.gold_personas.size(), 1u);
            EXPECT_NE(std::find(pu.begin(), pu.end(), turn.gold_personas[0]), pu.end());
        }
    }
}

TEST(SynthGen, GroundTruthMatchesDialogueTurns) {
    auto [corpus, gt] = generate_world(small_spec());
    ASSERT_EQ(gt.active_personas.size(), corpus.dialogues.size());
    for (size_t d = 0; d < corpus.dialogues.size(); ++d) {
        ASSERT_EQ(gt.active_personas[d].size(), corpus.dialogues[d].turns.size());
        for (size_t t = 0; t < corpus.dialogues[d].turns.size(); ++t)
            EXPECT_EQ(gt.active_personas[d][t], corpus.dialogues[d].turns[t].gold_personas[0]);
    }
}

// Aggregated topic frequency should be flatter than the per-persona
// conditional frequencies: the global histogram mixes persona-specific modes.
TEST(SynthGen, GlobalEntropyExceedsMeanPersonaEntropy) {
    WorldSpec s;  // default spec
    s.n_dialogues = 400;
    auto [corpus, gt] = generate_world(s);

    std::vector<real> global(s.n_topics, 0.0);
    std::map<int, std::vector<real>> per_persona;
    for (size_t d = 0; d < corpus.dialogues.size(); ++d) {
        for (size_t t = 0; t < corpus.dialogues[d].turns.size(); ++t) {
            const int topic = corpus.dialogues[d].turns[t].topic_id;
            const int persona = gt.active_personas[d][t];
            global[topic] += 1.0;
            auto& row = per_persona[persona];
            if (row.empty()) row.assign(s.n_topics, 0.0);
            row[topic] += 1.0;
        }
    }
    auto entropy = [](const std::vector<real>& counts) {
        real total = 0.0;
        for (real c : counts) total += c;
        real h = 0.0;
        for (real c : counts)
            if (c > 0.0) {
                const real p = c / total;
                h -= p * std::log(p);
            }
        return h;
    };
    const real global_h = entropy(global);
    real mean_h = 0.0;
    for (const auto& [p, counts] : per_persona) mean_h += entropy(counts);
    mean_h /= per_persona.size();
    EXPECT_GT(global_h, mean_h);
}

TEST(SynthGen, GroundTruthRoundTrip) {
    auto [corpus, gt] = generate_world(small_spec());
    const auto dir = std::filesystem::temp_directory_path() / ("petd_gt_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    const auto p = (dir / "gt.json").string();
    write_ground_truth(gt, p);
    GroundTruth loaded = load_ground_truth(p);
    EXPECT_EQ(loaded.active_personas, gt.active_personas);
    ASSERT_EQ(loaded.persona_topic_affinity.rows, gt.persona_topic_affinity.rows);
    for (size_t i = 0; i < gt.persona_topic_affinity.a.size(); ++i)
        EXPECT_DOUBLE_EQ(loaded.persona_topic_affinity.a[i], gt.persona_topic_affinity.a[i]);
    std::filesystem::remove_all(dir);
}

}  // namespace
