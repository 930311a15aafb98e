#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "petd/errors.hpp"

namespace petd {

using json = nlohmann::json;

struct Persona {
    int id = 0;
    std::string text;
};

struct User {
    int id = 0;
    std::vector<int> persona_ids;
};

struct Topic {
    int id = 0;
    std::string name;
};

enum class Speaker { seeker, system };

struct Turn {
    Speaker speaker = Speaker::seeker;
    std::string text;
    int topic_id = 0;
    std::vector<int> gold_personas;  // synthetic corpora only
};

struct Dialogue {
    int id = 0;
    int user_id = 0;
    std::vector<Turn> turns;
};

struct Corpus {
    std::vector<Persona> personas;  // position == id after loading
    std::vector<User> users;
    std::vector<Topic> topics;
    std::vector<Dialogue> dialogues;
};

// Whitespace tokenization with lowercasing; no subwords.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
        } else {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

class Vocab {
   public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kReserved = 4;

    Vocab() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {
        for (int i = 0; i < kReserved; ++i) index_[words_[i]] = i;
    }

    // Deterministic ids: non-reserved words are sorted before assignment.
    static Vocab build(const Corpus& corpus) {
        std::set<std::string> uniq;
        for (const auto& p : corpus.personas)
            for (const auto& w : tokenize(p.text)) uniq.insert(w);
        for (const auto& t : corpus.topics)
            for (const auto& w : tokenize(t.name)) uniq.insert(w);
        for (const auto& d : corpus.dialogues)
            for (const auto& turn : d.turns)
                for (const auto& w : tokenize(turn.text)) uniq.insert(w);
        Vocab v;
        for (const auto& w : uniq) {
            v.index_[w] = static_cast<int>(v.words_.size());
            v.words_.push_back(w);
        }
        for (const auto& t : corpus.topics) v.topic_names_.push_back(t.name);
        return v;
    }

    int word_id(const std::string& w) const {
        auto it = index_.find(w);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& word(int id) const { return words_.at(static_cast<size_t>(id)); }

    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        for (const auto& w : tokenize(text)) ids.push_back(word_id(w));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string s;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) s += ' ';
            s += word(ids[i]);
        }
        return s;
    }

    int size() const { return static_cast<int>(words_.size()); }
    int topic_count() const { return static_cast<int>(topic_names_.size()); }
    const std::vector<std::string>& words() const { return words_; }
    const std::vector<std::string>& topic_names() const { return topic_names_; }

    void set_words(std::vector<std::string> words, std::vector<std::string> topics) {
        words_ = std::move(words);
        topic_names_ = std::move(topics);
        index_.clear();
        for (size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
    }

   private:
    std::vector<std::string> words_;
    std::vector<std::string> topic_names_;
    std::unordered_map<std::string, int> index_;
};

struct TrainingExample {
    int user_id = 0;
    std::vector<std::vector<int>> context;  // word ids per sentence, oldest first
    std::vector<int> topic_path;            // aligned with context
    int target_topic = 0;
    std::vector<int> target_response;       // empty unless the target turn is a system turn
    bool has_response = false;
    std::vector<int> gold_personas;         // empty when the corpus carries no annotation
    int dialogue_id = 0;
    int position = 0;  // index of the target turn inside the dialogue
};

namespace detail {

template <typename T>
T require_field(const json& j, const char* field, int lineno) {
    if (!j.contains(field))
        throw DataError("line " + std::to_string(lineno) + ": missing field '" + field + "'");
    try {
        return j.at(field).get<T>();
    } catch (const json::exception&) {
        throw DataError("line " + std::to_string(lineno) + ": field '" + field + "' has the wrong type");
    }
}

inline void require_dense_ids(const char* what, std::vector<int> ids) {
    std::sort(ids.begin(), ids.end());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (i > 0 && ids[i] == ids[i - 1])
            throw DataError(std::string(what) + " id " + std::to_string(ids[i]) + " appears twice");
        if (ids[i] != static_cast<int>(i))
            throw DataError(std::string(what) + " ids must be dense 0..n-1; missing id " + std::to_string(i));
    }
}

}  // namespace detail

// Reads the JSONL corpus format. Record kinds: persona, user, topic, dialogue.
inline std::pair<Corpus, Vocab> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    Corpus c;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError("line " + std::to_string(lineno) + ": invalid JSON: " + e.what());
        }
        const std::string kind = detail::require_field<std::string>(j, "kind", lineno);
        if (kind == "persona") {
            Persona p;
            p.id = detail::require_field<int>(j, "id", lineno);
            p.text = detail::require_field<std::string>(j, "text", lineno);
            if (tokenize(p.text).empty())
                throw DataError("line " + std::to_string(lineno) + ": field 'text' must be non-empty");
            c.personas.push_back(std::move(p));
        } else if (kind == "user") {
            User u;
            u.id = detail::require_field<int>(j, "id", lineno);
            u.persona_ids = detail::require_field<std::vector<int>>(j, "personas", lineno);
            if (u.persona_ids.empty())
                throw DataError("line " + std::to_string(lineno) + ": field 'personas' must be non-empty");
            std::set<int> uniq(u.persona_ids.begin(), u.persona_ids.end());
            if (uniq.size() != u.persona_ids.size())
                throw DataError("line " + std::to_string(lineno) + ": field 'personas' has duplicates");
            c.users.push_back(std::move(u));
        } else if (kind == "topic") {
            Topic t;
            t.id = detail::require_field<int>(j, "id", lineno);
            t.name = detail::require_field<std::string>(j, "name", lineno);
            c.topics.push_back(std::move(t));
        } else if (kind == "dialogue") {
            Dialogue d;
            d.id = detail::require_field<int>(j, "id", lineno);
            d.user_id = detail::require_field<int>(j, "user", lineno);
            const json turns = detail::require_field<json>(j, "turns", lineno);
            if (!turns.is_array())
                throw DataError("line " + std::to_string(lineno) + ": field 'turns' must be an array");
            for (const auto& tj : turns) {
                Turn t;
                const std::string sp = detail::require_field<std::string>(tj, "speaker", lineno);
                if (sp == "seeker")
                    t.speaker = Speaker::seeker;
                else if (sp == "system")
                    t.speaker = Speaker::system;
                else
                    throw DataError("line " + std::to_string(lineno) + ": field 'speaker' must be seeker|system");
                t.text = detail::require_field<std::string>(tj, "text", lineno);
                t.topic_id = detail::require_field<int>(tj, "topic", lineno);
                if (tj.contains("gold_personas"))
                    t.gold_personas = detail::require_field<std::vector<int>>(tj, "gold_personas", lineno);
                d.turns.push_back(std::move(t));
            }
            c.dialogues.push_back(std::move(d));
        } else {
            throw DataError("line " + std::to_string(lineno) + ": unknown record kind '" + kind + "'");
        }
    }
    if (c.dialogues.empty()) throw DataError("no dialogues in corpus file: " + path);

    // Dense-id check, then sort into id order for positional indexing.
    {
        std::vector<int> ids;
        for (const auto& p : c.personas) ids.push_back(p.id);
        detail::require_dense_ids("persona", ids);
        ids.clear();
        for (const auto& u : c.users) ids.push_back(u.id);
        detail::require_dense_ids("user", ids);
        ids.clear();
        for (const auto& t : c.topics) ids.push_back(t.id);
        detail::require_dense_ids("topic", ids);
        ids.clear();
        for (const auto& d : c.dialogues) ids.push_back(d.id);
        detail::require_dense_ids("dialogue", ids);
    }
    std::sort(c.personas.begin(), c.personas.end(), [](auto& a, auto& b) { return a.id < b.id; });
    std::sort(c.users.begin(), c.users.end(), [](auto& a, auto& b) { return a.id < b.id; });
    std::sort(c.topics.begin(), c.topics.end(), [](auto& a, auto& b) { return a.id < b.id; });
    std::sort(c.dialogues.begin(), c.dialogues.end(), [](auto& a, auto& b) { return a.id < b.id; });

    // Referential integrity.
    const int np = static_cast<int>(c.personas.size());
    const int nt = static_cast<int>(c.topics.size());
    const int nu = static_cast<int>(c.users.size());
    for (const auto& u : c.users)
        for (int pid : u.persona_ids)
            if (pid < 0 || pid >= np)
                throw DataError("user " + std::to_string(u.id) + " references unknown persona " + std::to_string(pid));
    for (const auto& d : c.dialogues) {
        if (d.user_id < 0 || d.user_id >= nu)
            throw DataError("dialogue " + std::to_string(d.id) + " references unknown user " + std::to_string(d.user_id));
        for (const auto& t : d.turns) {
            if (t.topic_id < 0 || t.topic_id >= nt)
                throw DataError("dialogue " + std::to_string(d.id) + " references unknown topic " + std::to_string(t.topic_id));
            const auto& pu = c.users[d.user_id].persona_ids;
            for (int g : t.gold_personas)
                if (std::find(pu.begin(), pu.end(), g) == pu.end())
                    throw DataError("dialogue " + std::to_string(d.id) + " gold persona " + std::to_string(g) +
                                    " is not one of the user's personas");
        }
    }
    Vocab v = Vocab::build(c);
    return {std::move(c), std::move(v)};
}

inline void write_corpus(const Corpus& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file: " + path);
    for (const auto& p : c.personas) {
        json j{{"kind", "persona"}, {"id", p.id}, {"text", p.text}};
        out << j.dump() << '\n';
    }
    for (const auto& u : c.users) {
        json j{{"kind", "user"}, {"id", u.id}, {"personas", u.persona_ids}};
        out << j.dump() << '\n';
    }
    for (const auto& t : c.topics) {
        json j{{"kind", "topic"}, {"id", t.id}, {"name", t.name}};
        out << j.dump() << '\n';
    }
    for (const auto& d : c.dialogues) {
        json turns = json::array();
        for (const auto& t : d.turns) {
            json tj{{"speaker", t.speaker == Speaker::seeker ? "seeker" : "system"},
                    {"text", t.text},
                    {"topic", t.topic_id}};
            if (!t.gold_personas.empty()) tj["gold_personas"] = t.gold_personas;
            turns.push_back(tj);
        }
        json j{{"kind", "dialogue"}, {"id", d.id}, {"user", d.user_id}, {"turns", turns}};
        out << j.dump() << '\n';
    }
}

struct WindowStats {
    int skipped_short_dialogues = 0;
};

// One example per dialogue position: context = turns [0, j), target = turn j,
// context truncated to the last `history` turns. Dialogues with fewer than
// two turns produce nothing and are counted.
inline std::vector<TrainingExample> window_examples(const Corpus& corpus, const Vocab& vocab, int history,
                                                    WindowStats* stats = nullptr) {
    if (history < 1) throw UsageError("history length must be >= 1");
    std::vector<TrainingExample> out;
    WindowStats local;
    for (const auto& d : corpus.dialogues) {
        if (d.turns.size() < 2) {
            ++local.skipped_short_dialogues;
            continue;
        }
        for (size_t j = 1; j < d.turns.size(); ++j) {
            TrainingExample ex;
            ex.user_id = d.user_id;
            ex.dialogue_id = d.id;
            ex.position = static_cast<int>(j);
            const size_t begin = j > static_cast<size_t>(history) ? j - history : 0;
            for (size_t i = begin; i < j; ++i) {
                ex.context.push_back(vocab.encode(d.turns[i].text));
                ex.topic_path.push_back(d.turns[i].topic_id);
            }
            const Turn& target = d.turns[j];
            ex.target_topic = target.topic_id;
            ex.has_response = target.speaker == Speaker::system;
            if (ex.has_response) ex.target_response = vocab.encode(target.text);
            ex.gold_personas = target.gold_personas;
            out.push_back(std::move(ex));
        }
    }
    if (stats) *stats = local;
    return out;
}

}  // namespace petd
