#pragma once

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include "dualprec/nn.hpp"

namespace dualprec {

// Run configuration: a flat key = value file plus command-line overrides
// (flags win). Every key is listed in docs/config.md.

struct RunConfig {
    std::string command;

    // dataset
    std::string dataset = "blobs";  // blobs | textured | csv
    std::string dataset_path;
    size_t label_column = 0;
    std::string delimiter = ",";
    size_t classes = 6;
    size_t dim = 128;
    size_t per_class = 2000;
    double spread = 3.0;
    size_t image_size = 16;
    double train_frac = 0.8;
    uint64_t data_seed = 7;

    // network and cache strategy
    std::string net_spec;
    std::string strategy = "division";  // exact | division | lfc_only | hfc_only | fixed_quant
    size_t block = 8;
    int qbits = 2;

    // training
    size_t epochs = 30;
    size_t batch_size = 100;
    double lr = 0.05;
    std::string lr_schedule = "cosine";  // cosine | step
    size_t lr_step_every = 30;
    double lr_step_gamma = 0.1;
    double weight_decay = 0.0005;
    double momentum = 0.9;
    uint64_t seed = 1;
    std::string checkpoint_epochs;  // comma-separated epoch list

    // analysis
    std::string w_fracs = "0.1";
    size_t probe_count = 64;
    size_t geb_trials = 200;
    size_t corollary_trials = 1000;
    std::string grid_n = "7,8,16,32";
    std::string grid_b = "8";
    std::string grid_q = "2";
    std::string checkpoint_dir;

    // io
    std::string out_dir = "out";
    std::string input_path;  // dump-cache source tensor
};

inline std::vector<std::string> split_string(const std::string& s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t at = s.find(sep, start);
        out.push_back(s.substr(start, at - start));
        if (at == std::string::npos) break;
        start = at + 1;
    }
    return out;
}

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline std::vector<size_t> parse_size_list(const std::string& s) {
    std::vector<size_t> out;
    if (trim(s).empty()) return out;
    for (const std::string& tok : split_string(s, ',')) {
        std::string t = trim(tok);
        char* end = nullptr;
        unsigned long long v = std::strtoull(t.c_str(), &end, 10);
        if (end == t.c_str() || *end != '\0') throw ConfigError("not an integer: '" + t + "'");
        out.push_back(static_cast<size_t>(v));
    }
    return out;
}

inline std::vector<double> parse_double_list(const std::string& s) {
    std::vector<double> out;
    if (trim(s).empty()) return out;
    for (const std::string& tok : split_string(s, ',')) {
        std::string t = trim(tok);
        char* end = nullptr;
        double v = std::strtod(t.c_str(), &end);
        if (end == t.c_str() || *end != '\0') throw ConfigError("not a number: '" + t + "'");
        out.push_back(v);
    }
    return out;
}

inline Act act_from_string(const std::string& s) {
    if (s == "identity") return Act::Identity;
    if (s == "sigmoid") return Act::Sigmoid;
    if (s == "tanh") return Act::Tanh;
    if (s == "softplus") return Act::Softplus;
    if (s == "relu") return Act::Relu;
    throw ConfigError("unknown activation '" + s + "'");
}

/// Layer list grammar, comma-separated:
///   linear:IN:OUT[:ACT]  conv:IN:OUT:K:PAD[:ACT]  batchnorm:C
///   relu  maxpool:K  avgpool:K  dropout:P  flatten
inline std::vector<LayerSpec> parse_net_spec(const std::string& spec) {
    if (trim(spec).empty()) throw ConfigError("net spec is empty");
    std::vector<LayerSpec> layers;
    for (const std::string& tok : split_string(spec, ',')) {
        std::vector<std::string> f = split_string(trim(tok), ':');
        const std::string& kind = f[0];
        auto num = [&](size_t i) -> size_t {
            if (i >= f.size()) throw ConfigError("layer '" + tok + "' is missing a field");
            return parse_size_list(f[i])[0];
        };
        if (kind == "linear") {
            Act a = f.size() > 3 ? act_from_string(f[3]) : Act::Identity;
            layers.push_back(LayerSpec::linear(num(1), num(2), a));
        } else if (kind == "conv") {
            Act a = f.size() > 5 ? act_from_string(f[5]) : Act::Identity;
            layers.push_back(LayerSpec::conv2d(num(1), num(2), num(3), num(4), a));
        } else if (kind == "batchnorm") {
            layers.push_back(LayerSpec::batchnorm2d(num(1)));
        } else if (kind == "relu") {
            layers.push_back(LayerSpec::relu());
        } else if (kind == "maxpool") {
            layers.push_back(LayerSpec::maxpool(num(1)));
        } else if (kind == "avgpool") {
            layers.push_back(LayerSpec::avgpool(num(1)));
        } else if (kind == "dropout") {
            layers.push_back(LayerSpec::dropout(static_cast<float>(parse_double_list(f.size() > 1 ? f[1] : "")[0])));
        } else if (kind == "flatten") {
            layers.push_back(LayerSpec::flatten());
        } else {
            throw ConfigError("unknown layer kind '" + kind + "'");
        }
    }
    return layers;
}

inline CacheStrategy strategy_from_config(const RunConfig& cfg) {
    CacheStrategy st;
    if (cfg.strategy == "exact")
        st = CacheStrategy::exact();
    else if (cfg.strategy == "division")
        st = CacheStrategy::division(cfg.block, cfg.qbits);
    else if (cfg.strategy == "lfc_only")
        st = CacheStrategy::lfc_only(cfg.block);
    else if (cfg.strategy == "hfc_only")
        st = CacheStrategy::hfc_only(cfg.qbits, cfg.block);
    else if (cfg.strategy == "fixed_quant")
        st = CacheStrategy::fixed_quant(cfg.qbits);
    else
        throw ConfigError("unknown strategy '" + cfg.strategy + "'");
    st.validate();
    return st;
}

inline TrainConfig train_config_from(const RunConfig& cfg) {
    TrainConfig tc;
    tc.epochs = cfg.epochs;
    tc.batch_size = cfg.batch_size;
    tc.lr = cfg.lr;
    if (cfg.lr_schedule == "cosine")
        tc.sched = TrainConfig::Sched::Cosine;
    else if (cfg.lr_schedule == "step")
        tc.sched = TrainConfig::Sched::Step;
    else
        throw ConfigError("unknown lr schedule '" + cfg.lr_schedule + "'");
    tc.step_every = cfg.lr_step_every;
    tc.step_gamma = cfg.lr_step_gamma;
    tc.weight_decay = cfg.weight_decay;
    tc.momentum = cfg.momentum;
    tc.seed = cfg.seed;
    tc.checkpoint_epochs = parse_size_list(cfg.checkpoint_epochs);
    tc.validate();
    return tc;
}

/// Assign one key = value pair; unknown keys are configuration errors.
inline void apply_config_pair(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto as_size = [&] { return parse_size_list(value).at(0); };
    auto as_double = [&] { return parse_double_list(value).at(0); };
    auto as_u64 = [&] { return static_cast<uint64_t>(parse_size_list(value).at(0)); };
    if (key == "dataset") cfg.dataset = value;
    else if (key == "dataset_path") cfg.dataset_path = value;
    else if (key == "label_column") cfg.label_column = as_size();
    else if (key == "delimiter") cfg.delimiter = value;
    else if (key == "classes") cfg.classes = as_size();
    else if (key == "dim") cfg.dim = as_size();
    else if (key == "per_class") cfg.per_class = as_size();
    else if (key == "spread") cfg.spread = as_double();
    else if (key == "image_size") cfg.image_size = as_size();
    else if (key == "train_frac") cfg.train_frac = as_double();
    else if (key == "data_seed") cfg.data_seed = as_u64();
    else if (key == "net") cfg.net_spec = value;
    else if (key == "strategy") cfg.strategy = value;
    else if (key == "block" || key == "B") cfg.block = as_size();
    else if (key == "qbits" || key == "Q") cfg.qbits = static_cast<int>(as_size());
    else if (key == "epochs") cfg.epochs = as_size();
    else if (key == "batch_size") cfg.batch_size = as_size();
    else if (key == "lr") cfg.lr = as_double();
    else if (key == "lr_schedule") cfg.lr_schedule = value;
    else if (key == "lr_step_every") cfg.lr_step_every = as_size();
    else if (key == "lr_step_gamma") cfg.lr_step_gamma = as_double();
    else if (key == "weight_decay") cfg.weight_decay = as_double();
    else if (key == "momentum") cfg.momentum = as_double();
    else if (key == "seed") cfg.seed = as_u64();
    else if (key == "checkpoint_epochs") cfg.checkpoint_epochs = value;
    else if (key == "w_fracs") cfg.w_fracs = value;
    else if (key == "probe_count") cfg.probe_count = as_size();
    else if (key == "geb_trials") cfg.geb_trials = as_size();
    else if (key == "corollary_trials") cfg.corollary_trials = as_size();
    else if (key == "grid_n") cfg.grid_n = value;
    else if (key == "grid_b") cfg.grid_b = value;
    else if (key == "grid_q") cfg.grid_q = value;
    else if (key == "checkpoint_dir") cfg.checkpoint_dir = value;
    else if (key == "out_dir") cfg.out_dir = value;
    else if (key == "input_path") cfg.input_path = value;
    else throw ConfigError("unknown config key '" + key + "'");
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    std::string line;
    size_t line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(strf("%s:%zu: expected key = value", path.c_str(), line_no));
        apply_config_pair(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
}

/// Output directory override by environment; set after file and flags.
inline void apply_env_overrides(RunConfig& cfg) {
    if (const char* v = std::getenv("DUALPREC_OUT_DIR")) cfg.out_dir = v;
}

}  // namespace dualprec
