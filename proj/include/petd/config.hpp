#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "petd/errors.hpp"
#include "petd/mat.hpp"

namespace petd {

enum class PoolMode { mean, last };

struct ModelConfig {
    int d = 64;
    int enc_layers = 2;
    int enc_heads = 4;
    int ffn_width = 0;  // 0 -> 4*d
    int dec_layers = 2;
    int dec_heads = 4;
    real dropout = 0.1;
    int l_max = 512;
    int k = 10;                 // global topics kept per persona
    int mlp_hidden = 0;         // scorer MLP hidden width, 0 -> 2*d
    int expansion_ffn_hidden = 0;  // 0 -> 2*d
    std::string expansion_ffn_act = "gelu";
    PoolMode pool = PoolMode::mean;
    bool refresh_sets_per_step = false;
    bool stop_grad_aux_topics = false;  // detach topic table in the auxiliary head
    int max_response_len = 24;

    int ffn() const { return ffn_width > 0 ? ffn_width : 4 * d; }
    int scorer_hidden() const { return mlp_hidden > 0 ? mlp_hidden : 2 * d; }
    int exp_ffn_hidden() const { return expansion_ffn_hidden > 0 ? expansion_ffn_hidden : 2 * d; }
};

struct TrainConfig {
    real lr = 1e-4;
    int batch = 80;
    real l2 = 1e-6;
    int max_epochs = 100;
    int patience = 10;
    int history = 7;  // context window H
    real lambda_c = 1.0;
    real lambda_t = 1.0;
    real lambda_r = 1.0;
    uint64_t seed = 7;
    int threads = 0;              // 0 -> hardware concurrency
    int eval_decode_cap = 300;    // validation sentences decoded per epoch (0 = all)
    bool dump_topic_sets = false;
    std::string log_path;         // per-epoch CSV when non-empty
    std::string topic_set_dump_dir;

    ModelConfig model;
};

// Flat key=value configuration with '#' comments. CLI --set pairs override
// file entries.
class KvConfig {
   public:
    static KvConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open config file: " + path);
        KvConfig kv;
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            kv.parse_line(line, path + ":" + std::to_string(lineno));
        }
        return kv;
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    void apply_override(const std::string& pair) {
        auto eq = pair.find('=');
        if (eq == std::string::npos) throw UsageError("override must look like key=value: " + pair);
        set(trim(pair.substr(0, eq)), trim(pair.substr(eq + 1)));
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& def) const {
        auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    long get_int(const std::string& key, long def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            long v = std::stol(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("config key '" + key + "' expects an integer, got '" + it->second + "'");
        }
    }

    real get_real(const std::string& key, real def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        try {
            size_t pos = 0;
            real v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw UsageError("config key '" + key + "' expects a number, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = values_.find(key);
        if (it == values_.end()) return def;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw UsageError("config key '" + key + "' expects true/false, got '" + it->second + "'");
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

   private:
    static std::string trim(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    void parse_line(const std::string& raw, const std::string& where) {
        std::string line = raw;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) return;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw DataError("malformed config line at " + where + ": " + raw);
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw DataError("empty config key at " + where);
        values_[key] = val;
    }

    std::map<std::string, std::string> values_;
};

inline PoolMode parse_pool_mode(const std::string& s) {
    if (s == "mean") return PoolMode::mean;
    if (s == "last") return PoolMode::last;
    throw UsageError("unknown pool mode: " + s);
}

inline ModelConfig model_config_from(const KvConfig& kv) {
    ModelConfig m;
    m.d = static_cast<int>(kv.get_int("model.d", m.d));
    m.enc_layers = static_cast<int>(kv.get_int("model.enc_layers", m.enc_layers));
    m.enc_heads = static_cast<int>(kv.get_int("model.enc_heads", m.enc_heads));
    m.ffn_width = static_cast<int>(kv.get_int("model.ffn_width", m.ffn_width));
    m.dec_layers = static_cast<int>(kv.get_int("model.dec_layers", m.dec_layers));
    m.dec_heads = static_cast<int>(kv.get_int("model.dec_heads", m.dec_heads));
    m.dropout = kv.get_real("model.dropout", m.dropout);
    m.l_max = static_cast<int>(kv.get_int("model.l_max", m.l_max));
    m.k = static_cast<int>(kv.get_int("model.k", m.k));
    m.mlp_hidden = static_cast<int>(kv.get_int("model.mlp_hidden", m.mlp_hidden));
    m.expansion_ffn_hidden = static_cast<int>(kv.get_int("model.expansion_ffn_hidden", m.expansion_ffn_hidden));
    m.expansion_ffn_act = kv.get_str("model.expansion_ffn_act", m.expansion_ffn_act);
    m.pool = parse_pool_mode(kv.get_str("model.pool", "mean"));
    m.refresh_sets_per_step = kv.get_bool("model.refresh_sets_per_step", m.refresh_sets_per_step);
    m.stop_grad_aux_topics = kv.get_bool("model.stop_grad_aux_topics", m.stop_grad_aux_topics);
    m.max_response_len = static_cast<int>(kv.get_int("model.max_response_len", m.max_response_len));
    if (m.d <= 0 || m.d % m.enc_heads != 0 || (m.dec_layers > 0 && m.d % m.dec_heads != 0))
        throw UsageError("model width must be positive and divisible by the head counts");
    if (m.dropout < 0.0 || m.dropout >= 1.0) throw UsageError("dropout must lie in [0, 1)");
    return m;
}

inline TrainConfig train_config_from(const KvConfig& kv) {
    TrainConfig c;
    c.lr = kv.get_real("train.lr", c.lr);
    c.batch = static_cast<int>(kv.get_int("train.batch", c.batch));
    c.l2 = kv.get_real("train.l2", c.l2);
    c.max_epochs = static_cast<int>(kv.get_int("train.max_epochs", c.max_epochs));
    c.patience = static_cast<int>(kv.get_int("train.patience", c.patience));
    c.history = static_cast<int>(kv.get_int("train.history", c.history));
    c.lambda_c = kv.get_real("train.lambda_c", c.lambda_c);
    c.lambda_t = kv.get_real("train.lambda_t", c.lambda_t);
    c.lambda_r = kv.get_real("train.lambda_r", c.lambda_r);
    c.seed = static_cast<uint64_t>(kv.get_int("train.seed", static_cast<long>(c.seed)));
    c.threads = static_cast<int>(kv.get_int("train.threads", c.threads));
    c.eval_decode_cap = static_cast<int>(kv.get_int("train.eval_decode_cap", c.eval_decode_cap));
    c.dump_topic_sets = kv.get_bool("train.dump_topic_sets", c.dump_topic_sets);
    c.model = model_config_from(kv);
    c.model.k = static_cast<int>(kv.get_int("train.k", c.model.k));
    if (c.lr <= 0 || c.batch <= 0 || c.max_epochs <= 0 || c.history < 1)
        throw UsageError("train config values must be positive (lr, batch, max_epochs, history)");
    if (c.patience > c.max_epochs) throw UsageError("patience must not exceed max_epochs");
    return c;
}

}  // namespace petd
