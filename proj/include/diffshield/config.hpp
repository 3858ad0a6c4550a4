// INI-style run configuration. Unknown keys are rejected so typos fail loudly
// (exit code 1 at the CLI).
#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace diffshield {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct IniData {
    // section -> key -> value
    std::map<std::string, std::map<std::string, std::string>> values;
    std::map<std::string, std::map<std::string, bool>> used;

    static IniData parse_file(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw ConfigError("config: cannot read " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str(), path);
    }

    static IniData parse(const std::string& text, const std::string& origin) {
        IniData d;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::size_t hash = line.find_first_of("#;");
            if (hash != std::string::npos) line = line.substr(0, hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(origin + ":" + std::to_string(lineno) + ": unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
                continue;
            }
            std::size_t eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            std::string key = trim(line.substr(0, eq));
            std::string val = trim(line.substr(eq + 1));
            if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            d.values[section][key] = val;
            d.used[section][key] = false;
        }
        return d;
    }

    bool has(const std::string& sec, const std::string& key) {
        auto s = values.find(sec);
        if (s == values.end()) return false;
        return s->second.count(key) > 0;
    }

    std::string take(const std::string& sec, const std::string& key) {
        used[sec][key] = true;
        return values[sec][key];
    }

    void check_all_used(const std::string& origin) const {
        for (const auto& [sec, keys] : used)
            for (const auto& [key, u] : keys)
                if (!u) throw ConfigError(origin + ": unknown key [" + sec + "] " + key);
    }
};

inline long long to_int(const std::string& v, const std::string& what) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + what + ": '" + v + "'");
    }
}

inline double to_double(const std::string& v, const std::string& what) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + what + ": '" + v + "'");
    }
}

inline bool to_bool(const std::string& v, const std::string& what) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("config: bad boolean for " + what + ": '" + v + "'");
}

}  // namespace detail

inline std::vector<std::uint64_t> parse_u64_list(const std::string& s, const std::string& what) {
    std::vector<std::uint64_t> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = detail::trim(tok);
        if (tok.empty()) throw ConfigError("config: empty item in list for " + what);
        out.push_back(static_cast<std::uint64_t>(detail::to_int(tok, what)));
    }
    if (out.empty()) throw ConfigError("config: empty list for " + what);
    return out;
}

inline std::vector<int> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<int> out;
    for (auto v : parse_u64_list(s, what)) out.push_back(static_cast<int>(v));
    return out;
}

inline std::vector<std::string> parse_name_list(const std::string& s, const std::string& what) {
    std::vector<std::string> out;
    std::istringstream in(s);
    std::string tok;
    while (std::getline(in, tok, ',')) {
        tok = detail::trim(tok);
        if (tok.empty()) throw ConfigError("config: empty item in list for " + what);
        out.push_back(tok);
    }
    if (out.empty()) throw ConfigError("config: empty list for " + what);
    return out;
}

struct RunConfig {
    std::uint64_t seed = 42;
    int workers = 1;

    struct Task {
        std::string data_dir = "data";
        int train_n = 2000, valid_n = 250, test_n = 250;
        int len_min = 8, len_max = 13;
        double kw1 = 0.55, kw2 = 0.30, kw3 = 0.15;
        double syn_leak = 0.0;
    } task;

    struct Model {
        int width = 64, layers = 2, heads = 4, ffn_mult = 4, max_len = 32;
        double dropout = 0.1, init_std = 0.02;
    } model;

    struct Train {
        int epochs = 8, batch = 32;
        double lr = 1e-3, weight_decay = 0.0;
        bool adversarial = true;
        int inner_steps = 5;
        double step_size = 0.01, norm_bound = 0.3;
    } train;

    struct Diffusion {
        int T = 30;
        double beta_start = 1e-4, beta_end = 0.02;
        int epochs = 30, batch = 32;
        double lr = 1e-3;
        bool recalibrate_head = false;
        int recal_epochs = 2;
    } diffusion;

    struct Inference {
        int t_prime = 5, k = 10;
        bool zero_final_z = true, use_sigma = true, noise_with_tprime = false;
    } inference;

    struct Attack {
        double eps_min = 0.84, rho_max = 0.3;
        int k_max = 50, table_size = 16, subset = 200;
        std::string seeds = "1,2,3";
        std::string attacks = "word,char";
        bool resample_per_query = false;
    } attack;

    struct Eval {
        int hist_bins = 20;
        double hist_tail = 0.5;
        std::string length_buckets = "9,11,13";
        int ablate_subset = 120;
        std::string ablate_seeds = "1,2";
        int sweep_subset = 120;
        std::string sweep_tprimes = "1,3,5";
        std::string sweep_seeds = "1";
    } eval;

    static RunConfig from_file(const std::string& path) {
        auto ini = detail::IniData::parse_file(path);
        return from_ini(ini, path);
    }

    static RunConfig from_ini(detail::IniData& ini, const std::string& origin) {
        using detail::to_bool;
        using detail::to_double;
        using detail::to_int;
        RunConfig c;
        auto geti = [&](const char* sec, const char* key, int& dst) {
            if (ini.has(sec, key)) dst = static_cast<int>(to_int(ini.take(sec, key), std::string(sec) + "." + key));
        };
        auto getu = [&](const char* sec, const char* key, std::uint64_t& dst) {
            if (ini.has(sec, key)) dst = static_cast<std::uint64_t>(to_int(ini.take(sec, key), std::string(sec) + "." + key));
        };
        auto getd = [&](const char* sec, const char* key, double& dst) {
            if (ini.has(sec, key)) dst = to_double(ini.take(sec, key), std::string(sec) + "." + key);
        };
        auto getb = [&](const char* sec, const char* key, bool& dst) {
            if (ini.has(sec, key)) dst = to_bool(ini.take(sec, key), std::string(sec) + "." + key);
        };
        auto gets = [&](const char* sec, const char* key, std::string& dst) {
            if (ini.has(sec, key)) dst = ini.take(sec, key);
        };

        getu("run", "seed", c.seed);
        geti("run", "workers", c.workers);

        gets("task", "data_dir", c.task.data_dir);
        geti("task", "train_n", c.task.train_n);
        geti("task", "valid_n", c.task.valid_n);
        geti("task", "test_n", c.task.test_n);
        geti("task", "len_min", c.task.len_min);
        geti("task", "len_max", c.task.len_max);
        getd("task", "kw1", c.task.kw1);
        getd("task", "kw2", c.task.kw2);
        getd("task", "kw3", c.task.kw3);

        geti("model", "width", c.model.width);
        geti("model", "layers", c.model.layers);
        geti("model", "heads", c.model.heads);
        geti("model", "ffn_mult", c.model.ffn_mult);
        geti("model", "max_len", c.model.max_len);
        getd("model", "dropout", c.model.dropout);
        getd("model", "init_std", c.model.init_std);

        geti("train", "epochs", c.train.epochs);
        geti("train", "batch", c.train.batch);
        getd("train", "lr", c.train.lr);
        getd("train", "weight_decay", c.train.weight_decay);
        getb("train", "adversarial", c.train.adversarial);
        geti("train", "inner_steps", c.train.inner_steps);
        getd("train", "step_size", c.train.step_size);
        getd("train", "norm_bound", c.train.norm_bound);

        geti("diffusion", "T", c.diffusion.T);
        getd("diffusion", "beta_start", c.diffusion.beta_start);
        getd("diffusion", "beta_end", c.diffusion.beta_end);
        geti("diffusion", "epochs", c.diffusion.epochs);
        geti("diffusion", "batch", c.diffusion.batch);
        getd("diffusion", "lr", c.diffusion.lr);
        getb("diffusion", "recalibrate_head", c.diffusion.recalibrate_head);
        geti("diffusion", "recal_epochs", c.diffusion.recal_epochs);

        geti("inference", "t_prime", c.inference.t_prime);
        geti("inference", "k", c.inference.k);
        getb("inference", "zero_final_z", c.inference.zero_final_z);
        getb("inference", "use_sigma", c.inference.use_sigma);
        getb("inference", "noise_with_tprime", c.inference.noise_with_tprime);

        getd("attack", "eps_min", c.attack.eps_min);
        getd("attack", "rho_max", c.attack.rho_max);
        geti("attack", "k_max", c.attack.k_max);
        geti("attack", "table_size", c.attack.table_size);
        geti("attack", "subset", c.attack.subset);
        gets("attack", "seeds", c.attack.seeds);
        gets("attack", "attacks", c.attack.attacks);
        getb("attack", "resample_per_query", c.attack.resample_per_query);

        geti("eval", "hist_bins", c.eval.hist_bins);
        getd("eval", "hist_tail", c.eval.hist_tail);
        gets("eval", "length_buckets", c.eval.length_buckets);
        geti("eval", "ablate_subset", c.eval.ablate_subset);
        gets("eval", "ablate_seeds", c.eval.ablate_seeds);
        geti("eval", "sweep_subset", c.eval.sweep_subset);
        gets("eval", "sweep_tprimes", c.eval.sweep_tprimes);
        gets("eval", "sweep_seeds", c.eval.sweep_seeds);

        ini.check_all_used(origin);
        c.validate();
        return c;
    }

    void validate() const {
        if (workers < 1) throw ConfigError("config: workers < 1");
        if (model.width < 2 || model.heads < 1 || model.width % model.heads != 0)
            throw ConfigError("config: model.width must be divisible by model.heads");
        if (diffusion.T < 1) throw ConfigError("config: diffusion.T < 1");
        if (!(diffusion.beta_start > 0.0) || !(diffusion.beta_end < 1.0) || diffusion.beta_start > diffusion.beta_end)
            throw ConfigError("config: need 0 < beta_start <= beta_end < 1");
        if (inference.t_prime < 1 || inference.t_prime > diffusion.T)
            throw ConfigError("config: inference.t_prime outside [1, diffusion.T]");
        if (inference.k < 1) throw ConfigError("config: inference.k < 1");
        if (attack.rho_max <= 0.0 || attack.rho_max > 1.0) throw ConfigError("config: attack.rho_max outside (0,1]");
        if (attack.eps_min < -1.0 || attack.eps_min > 1.0) throw ConfigError("config: attack.eps_min outside [-1,1]");
        if (attack.k_max < 1) throw ConfigError("config: attack.k_max < 1");
        if (attack.table_size < 1 || attack.table_size > attack.k_max)
            throw ConfigError("config: attack.table_size outside [1, attack.k_max]");
        for (const auto& a : parse_name_list(attack.attacks, "attack.attacks"))
            if (a != "word" && a != "char") throw ConfigError("config: unknown attack '" + a + "'");
        if (train.inner_steps < 1) throw ConfigError("config: train.inner_steps < 1");
        if (train.norm_bound <= 0.0) throw ConfigError("config: train.norm_bound <= 0");
        if (train.epochs < 1 || train.batch < 1 || !(train.lr > 0.0))
            throw ConfigError("config: train epochs/batch/lr out of range");
        if (train.weight_decay < 0.0) throw ConfigError("config: train.weight_decay < 0");
        if (diffusion.epochs < 1 || diffusion.batch < 1 || !(diffusion.lr > 0.0))
            throw ConfigError("config: diffusion epochs/batch/lr out of range");
        if (attack.subset < 1) throw ConfigError("config: attack.subset < 1");
        if (eval.hist_bins < 1) throw ConfigError("config: eval.hist_bins < 1");
        if (eval.ablate_subset < 1 || eval.sweep_subset < 1)
            throw ConfigError("config: eval subset sizes must be >= 1");
        parse_u64_list(attack.seeds, "attack.seeds");
        parse_int_list(eval.length_buckets, "eval.length_buckets");
        parse_u64_list(eval.ablate_seeds, "eval.ablate_seeds");
        parse_u64_list(eval.sweep_seeds, "eval.sweep_seeds");
        for (int t : parse_int_list(eval.sweep_tprimes, "eval.sweep_tprimes"))
            if (t < 1 || t > diffusion.T) throw ConfigError("config: eval.sweep_tprimes outside [1, diffusion.T]");
    }

    nlohmann::ordered_json echo() const {
        nlohmann::ordered_json j;
        j["run"] = {{"seed", seed}, {"workers", workers}};
        j["task"] = {{"data_dir", task.data_dir}, {"train_n", task.train_n}, {"valid_n", task.valid_n},
                     {"test_n", task.test_n},     {"len_min", task.len_min}, {"len_max", task.len_max},
                     {"kw1", task.kw1},           {"kw2", task.kw2},         {"kw3", task.kw3}};
        j["model"] = {{"width", model.width},   {"layers", model.layers},   {"heads", model.heads},
                      {"ffn_mult", model.ffn_mult}, {"max_len", model.max_len}, {"dropout", model.dropout},
                      {"init_std", model.init_std}};
        j["train"] = {{"epochs", train.epochs}, {"batch", train.batch}, {"lr", train.lr},
                      {"weight_decay", train.weight_decay}, {"adversarial", train.adversarial},
                      {"inner_steps", train.inner_steps}, {"step_size", train.step_size},
                      {"norm_bound", train.norm_bound}};
        j["diffusion"] = {{"T", diffusion.T}, {"beta_start", diffusion.beta_start}, {"beta_end", diffusion.beta_end},
                          {"epochs", diffusion.epochs}, {"batch", diffusion.batch}, {"lr", diffusion.lr},
                          {"recalibrate_head", diffusion.recalibrate_head}, {"recal_epochs", diffusion.recal_epochs}};
        j["inference"] = {{"t_prime", inference.t_prime}, {"k", inference.k}, {"zero_final_z", inference.zero_final_z},
                          {"use_sigma", inference.use_sigma}, {"noise_with_tprime", inference.noise_with_tprime}};
        j["attack"] = {{"eps_min", attack.eps_min}, {"rho_max", attack.rho_max}, {"k_max", attack.k_max},
                       {"table_size", attack.table_size}, {"subset", attack.subset}, {"seeds", attack.seeds},
                       {"attacks", attack.attacks}, {"resample_per_query", attack.resample_per_query}};
        j["eval"] = {{"hist_bins", eval.hist_bins}, {"hist_tail", eval.hist_tail}, {"length_buckets", eval.length_buckets},
                     {"ablate_subset", eval.ablate_subset}, {"ablate_seeds", eval.ablate_seeds},
                     {"sweep_subset", eval.sweep_subset}, {"sweep_tprimes", eval.sweep_tprimes},
                     {"sweep_seeds", eval.sweep_seeds}};
        return j;
    }
};

}  // namespace diffshield
