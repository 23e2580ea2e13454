#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cloud_io.hpp"
#include "model_config.hpp"
#include "trainer.hpp"

namespace tcorres {

// Everything a run needs: model architecture, optimization settings, and
// the paths the CLI fills in from flags.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    std::string data_dir;
    std::string out_dir;
    std::string resume;

    void validate() const {
        model.validate();
        train.validate();
    }
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

enum class KeyType { integer, real, boolean, text };

struct ConfigKey {
    const char* name;
    KeyType type;
    const char* comment;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

inline int64_t parse_i64(const std::string& key, const std::string& text) {
    int64_t v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ConfigError("config key " + key + ": '" + text + "' is not an integer");
    return v;
}

inline double parse_f64(const std::string& key, const std::string& text) {
    double v = 0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw ConfigError("config key " + key + ": '" + text + "' is not a number");
    return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true") return true;
    if (text == "false") return false;
    throw ConfigError("config key " + key + ": '" + text + "' is not true/false");
}

inline std::string fmt_i64(int64_t v) { return std::to_string(v); }

inline std::string fmt_f64(double v) {
    std::string s;
    append_number(s, v);
    return s;
}

inline std::string fmt_bool(bool v) { return v ? "true" : "false"; }

#define TCORRES_CFG_I64(field, comment)                                                     \
    ConfigKey {                                                                             \
        #field, KeyType::integer, comment,                                                  \
            [](const RunConfig& c) { return fmt_i64(c.field); },                            \
            [](RunConfig& c, const std::string& v) {                                        \
                c.field = static_cast<decltype(c.field)>(parse_i64(#field, v));             \
            }                                                                               \
    }
#define TCORRES_CFG_F64(field, comment)                                                     \
    ConfigKey {                                                                             \
        #field, KeyType::real, comment, [](const RunConfig& c) { return fmt_f64(c.field); }, \
            [](RunConfig& c, const std::string& v) { c.field = parse_f64(#field, v); }      \
    }
#define TCORRES_CFG_BOOL(field, comment)                                                    \
    ConfigKey {                                                                             \
        #field, KeyType::boolean, comment,                                                  \
            [](const RunConfig& c) { return fmt_bool(c.field); },                           \
            [](RunConfig& c, const std::string& v) { c.field = parse_bool(#field, v); }     \
    }
#define TCORRES_CFG_TEXT(field, comment)                                                    \
    ConfigKey {                                                                             \
        #field, KeyType::text, comment, [](const RunConfig& c) { return c.field; },         \
            [](RunConfig& c, const std::string& v) { c.field = v; }                         \
    }

inline const std::vector<ConfigKey>& config_schema() {
    static const std::vector<ConfigKey> schema{
        TCORRES_CFG_I64(model.M, "encoder token count"),
        TCORRES_CFG_I64(model.C, "channel width"),
        TCORRES_CFG_I64(model.heads, "attention heads"),
        TCORRES_CFG_I64(model.k, "kNN neighbor count"),
        TCORRES_CFG_I64(model.L_enc, "encoder depth"),
        TCORRES_CFG_I64(model.L_dec, "decoder depth"),
        TCORRES_CFG_I64(model.N0, "coarse/fine template size"),
        TCORRES_CFG_I64(model.N3, "template points kept in the pool"),
        TCORRES_CFG_I64(model.N4, "input points added to the pool"),
        TCORRES_CFG_I64(model.oversample, "sphere points per token for the template"),
        TCORRES_CFG_I64(model.up_factor, "dense points per fine-template point"),
        TCORRES_CFG_I64(model.d_s, "sphere embedding width in value tokens"),
        TCORRES_CFG_I64(model.corres_dim, "correspondence attention width"),
        TCORRES_CFG_I64(model.vote_dim, "voting network width"),
        TCORRES_CFG_I64(model.corres_sample_n, "input points sampled for correspondence"),
        TCORRES_CFG_F64(model.fold_offset_bound, "max folding offset per axis"),
        TCORRES_CFG_BOOL(model.template_fusion, "add template features at every encoder layer"),
        TCORRES_CFG_BOOL(model.corres_pooling, "false: fine template = coarse template"),
        TCORRES_CFG_BOOL(model.value_sphere, "false: zero the sphere branch of value tokens"),
        TCORRES_CFG_BOOL(model.drop_lowest, "pool replacement direction"),
        TCORRES_CFG_F64(train.base_lr, "initial learning rate"),
        TCORRES_CFG_F64(train.min_lr_ratio, "final lr = base_lr * this"),
        TCORRES_CFG_I64(train.total_steps, "optimization steps"),
        TCORRES_CFG_I64(train.batch_size, "samples per step"),
        TCORRES_CFG_F64(train.beta1, "Adam first-moment decay"),
        TCORRES_CFG_F64(train.beta2, "Adam second-moment decay"),
        TCORRES_CFG_F64(train.eps, "Adam epsilon"),
        TCORRES_CFG_F64(train.clip_norm, "global gradient-norm clip (0 disables)"),
        TCORRES_CFG_I64(train.checkpoint_every, "periodic checkpoint interval (0: final only)"),
        TCORRES_CFG_I64(train.eval_every, "mid-training eval interval (0: off)"),
        TCORRES_CFG_I64(train.seed, "run seed; all randomness derives from it"),
        TCORRES_CFG_BOOL(train.log_timings, "include wall_ms in logs (breaks bitwise compare)"),
        TCORRES_CFG_BOOL(train.track_dead_params, "report params that never saw a gradient"),
        TCORRES_CFG_TEXT(data_dir, "dataset directory containing manifest.txt"),
        TCORRES_CFG_TEXT(out_dir, "output directory for checkpoints and logs"),
        TCORRES_CFG_TEXT(resume, "checkpoint to resume from (empty: fresh run)"),
    };
    return schema;
}

#undef TCORRES_CFG_I64
#undef TCORRES_CFG_F64
#undef TCORRES_CFG_BOOL
#undef TCORRES_CFG_TEXT

inline const ConfigKey& find_key(const std::string& name) {
    for (const auto& k : config_schema())
        if (name == k.name) return k;
    throw ConfigError("unknown config key: " + name);
}

inline std::string strip(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

// One "key = value" assignment, as used for command-line overrides.
inline void apply_config_override(RunConfig& cfg, const std::string& assignment) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + assignment + "' is not of the form key=value");
    auto key = detail::strip(assignment.substr(0, eq));
    auto value = detail::strip(assignment.substr(eq + 1));
    detail::find_key(key).set(cfg, value);
}

// Config file: one "key = value" per line, '#' starts a comment, blank lines
// ignored. Every key must be in the schema; a key may appear at most once.
inline RunConfig parse_config_text(const std::string& text, RunConfig cfg = {}) {
    std::vector<std::string> seen;
    size_t pos = 0, lineno = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        ++lineno;
        std::string line = text.substr(pos, eol - pos);
        pos = eol + 1;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::strip(line);
        if (line.empty()) continue;
        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        auto key = detail::strip(line.substr(0, eq));
        auto value = detail::strip(line.substr(eq + 1));
        for (const auto& s : seen)
            if (s == key)
                throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key " +
                                  key);
        seen.push_back(key);
        detail::find_key(key).set(cfg, value);
    }
    return cfg;
}

inline RunConfig load_config(const std::string& path, RunConfig cfg = {}) {
    return parse_config_text(detail::read_file(path), std::move(cfg));
}

// Full dump of every schema key; parses back to an identical config.
inline std::string dump_config(const RunConfig& cfg) {
    std::string out;
    for (const auto& k : detail::config_schema()) {
        out += "# ";
        out += k.comment;
        out += "\n";
        out += k.name;
        out += " = ";
        out += k.get(cfg);
        out += "\n";
    }
    return out;
}

}  // namespace tcorres
