#pragma once

// Run configuration: flat key=value files, command-line overrides, validation
// up front, canonical serialization, and a stable hash recorded in metrics and
// checkpoints.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "ldsa/env.hpp"
#include "ldsa/envs/heterogeneous_jobs.hpp"
#include "ldsa/envs/two_roles_matrix.hpp"
#include "ldsa/errors.hpp"

namespace ldsa {

enum class Ablation {
    None,           // full method
    NoTemporalReg,  // drop the temporal smoothness penalty
    NoReprReg,      // drop the representation spread penalty
    NoBothReg,
    NoDecoder,      // per-subtask heads are free parameters
    RandomSelect,   // uniform random one-hot assignment, no gradients through it
    DirectProb,     // assignment logits from an affine layer instead of dot products
    MixWeights,     // soft probability-weighted heads, no sampling
    SharedBaseline, // single shared head, no assignment machinery
};

inline Ablation parse_ablation(const std::string& s) {
    if (s == "none") return Ablation::None;
    if (s == "NP") return Ablation::NoTemporalReg;
    if (s == "NR") return Ablation::NoReprReg;
    if (s == "NP+NR") return Ablation::NoBothReg;
    if (s == "NoDecoder") return Ablation::NoDecoder;
    if (s == "RanSele") return Ablation::RandomSelect;
    if (s == "DireProb") return Ablation::DirectProb;
    if (s == "Mix") return Ablation::MixWeights;
    if (s == "SharedBaseline") return Ablation::SharedBaseline;
    throw ConfigError("unknown ablation '" + s +
                      "'; expected one of none, NP, NR, NP+NR, NoDecoder, RanSele, DireProb, Mix, SharedBaseline");
}

inline std::string ablation_name(Ablation a) {
    switch (a) {
        case Ablation::None: return "none";
        case Ablation::NoTemporalReg: return "NP";
        case Ablation::NoReprReg: return "NR";
        case Ablation::NoBothReg: return "NP+NR";
        case Ablation::NoDecoder: return "NoDecoder";
        case Ablation::RandomSelect: return "RanSele";
        case Ablation::DirectProb: return "DireProb";
        case Ablation::MixWeights: return "Mix";
        case Ablation::SharedBaseline: return "SharedBaseline";
    }
    return "none";
}

struct RunConfig {
    // environment
    std::string env_name = "heterogeneous_jobs";
    int env_n_agents = 4;
    int env_n_job_types = 2;
    int env_episode_limit = 25;
    double env_gamma = 0.99;
    double env_signal_sigma = 0.3;

    // model
    int n_subtasks = 4;
    int repr_dim = 64;
    int encoder_hidden_dim = 64;
    int rnn_hidden_dim = 64;
    int mixing_embed_dim = 32;
    double gumbel_temperature = 1.0;
    bool double_q = false;
    bool kl_stop_gradient_next = false;

    // losses
    double lambda_repr = 1e-3;
    double lambda_kl = 1e-3;

    // optimization
    double lr = 5e-4;
    double rmsprop_alpha = 0.99;
    double rmsprop_eps = 1e-5;
    double grad_norm_clip = 10.0;
    int buffer_capacity = 5000;
    int batch_size = 32;
    int target_update_interval = 200;  // in training episodes

    // exploration
    double eps_start = 1.0;
    double eps_end = 0.05;
    long eps_anneal_time = 50000;

    // schedule
    long total_timesteps = 200000;
    long eval_interval = 10000;
    int eval_episodes = 32;
    double stop_at_normalized_return = -1.0;  // <= 0 disables early stopping

    Ablation ablation = Ablation::None;
    bool match_param_width = false;
    std::uint64_t seed = 1;

    void set(const std::string& key, const std::string& value);
    void validate() const;
    std::string serialize() const;
    std::uint64_t hash() const;

    static RunConfig from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path.string());
        RunConfig cfg;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string trimmed = detail_trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            auto eq = trimmed.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config " + path.string() + ":" + std::to_string(line_no) +
                                  ": expected key=value, got '" + trimmed + "'");
            }
            cfg.set(detail_trim(trimmed.substr(0, eq)), detail_trim(trimmed.substr(eq + 1)));
        }
        return cfg;
    }

    void apply_override(const std::string& kv) {
        auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("override must look like key=value, got '" + kv + "'");
        set(detail_trim(kv.substr(0, eq)), detail_trim(kv.substr(eq + 1)));
    }

private:
    static std::string detail_trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t\r\n");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t\r\n");
        return s.substr(a, b - a + 1);
    }
};

namespace detail {

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int x = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline long parse_long(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        long x = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected integer, got '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double x = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        unsigned long long x = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<std::uint64_t>(x);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + v + "'");
    }
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "env.name") env_name = value;
    else if (key == "env.n_agents") env_n_agents = parse_int(key, value);
    else if (key == "env.n_job_types") env_n_job_types = parse_int(key, value);
    else if (key == "env.episode_limit") env_episode_limit = parse_int(key, value);
    else if (key == "env.gamma") env_gamma = parse_double(key, value);
    else if (key == "env.signal_sigma") env_signal_sigma = parse_double(key, value);
    else if (key == "n_subtasks") n_subtasks = parse_int(key, value);
    else if (key == "repr_dim") repr_dim = parse_int(key, value);
    else if (key == "encoder_hidden_dim") encoder_hidden_dim = parse_int(key, value);
    else if (key == "rnn_hidden_dim") rnn_hidden_dim = parse_int(key, value);
    else if (key == "mixing_embed_dim") mixing_embed_dim = parse_int(key, value);
    else if (key == "gumbel_temperature") gumbel_temperature = parse_double(key, value);
    else if (key == "double_q") double_q = parse_bool(key, value);
    else if (key == "kl_stop_gradient_next") kl_stop_gradient_next = parse_bool(key, value);
    else if (key == "lambda_repr") lambda_repr = parse_double(key, value);
    else if (key == "lambda_kl") lambda_kl = parse_double(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "rmsprop_alpha") rmsprop_alpha = parse_double(key, value);
    else if (key == "rmsprop_eps") rmsprop_eps = parse_double(key, value);
    else if (key == "grad_norm_clip") grad_norm_clip = parse_double(key, value);
    else if (key == "buffer_capacity") buffer_capacity = parse_int(key, value);
    else if (key == "batch_size") batch_size = parse_int(key, value);
    else if (key == "target_update_interval") target_update_interval = parse_int(key, value);
    else if (key == "eps_start") eps_start = parse_double(key, value);
    else if (key == "eps_end") eps_end = parse_double(key, value);
    else if (key == "eps_anneal_time") eps_anneal_time = parse_long(key, value);
    else if (key == "total_timesteps") total_timesteps = parse_long(key, value);
    else if (key == "eval_interval") eval_interval = parse_long(key, value);
    else if (key == "eval_episodes") eval_episodes = parse_int(key, value);
    else if (key == "stop_at_normalized_return") stop_at_normalized_return = parse_double(key, value);
    else if (key == "ablation") ablation = parse_ablation(value);
    else if (key == "match_param_width") match_param_width = parse_bool(key, value);
    else if (key == "seed") seed = parse_u64(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

inline void RunConfig::validate() const {
    auto positive = [](const char* k, auto v) {
        if (v <= 0) throw ConfigError(std::string("config key '") + k + "' must be positive");
    };
    positive("n_subtasks", n_subtasks);
    positive("repr_dim", repr_dim);
    positive("encoder_hidden_dim", encoder_hidden_dim);
    positive("rnn_hidden_dim", rnn_hidden_dim);
    positive("mixing_embed_dim", mixing_embed_dim);
    positive("gumbel_temperature", gumbel_temperature);
    positive("lr", lr);
    positive("buffer_capacity", buffer_capacity);
    positive("batch_size", batch_size);
    positive("target_update_interval", target_update_interval);
    positive("total_timesteps", total_timesteps);
    positive("eval_interval", eval_interval);
    positive("eval_episodes", eval_episodes);
    if (lambda_repr < 0.0) throw ConfigError("config key 'lambda_repr' must be >= 0");
    if (lambda_kl < 0.0) throw ConfigError("config key 'lambda_kl' must be >= 0");
    if (rmsprop_alpha < 0.0 || rmsprop_alpha >= 1.0) throw ConfigError("config key 'rmsprop_alpha' must lie in [0, 1)");
    if (rmsprop_eps <= 0.0) throw ConfigError("config key 'rmsprop_eps' must be positive");
    if (grad_norm_clip < 0.0) throw ConfigError("config key 'grad_norm_clip' must be >= 0");
    if (buffer_capacity < batch_size) {
        throw ConfigError("config key 'buffer_capacity' must be >= batch_size");
    }
    if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0 || eps_end > eps_start) {
        throw ConfigError("exploration schedule needs 0 <= eps_end <= eps_start <= 1");
    }
    if (eps_anneal_time < 0) throw ConfigError("config key 'eps_anneal_time' must be >= 0");
    if (match_param_width && ablation != Ablation::SharedBaseline) {
        throw ConfigError("config key 'match_param_width' only applies to ablation=SharedBaseline");
    }
    if (env_name != "heterogeneous_jobs" && env_name != "two_roles_matrix") {
        throw ConfigError("unknown env.name '" + env_name + "'; expected heterogeneous_jobs or two_roles_matrix");
    }
}

inline std::string RunConfig::serialize() const {
    using detail::fmt_double;
    std::map<std::string, std::string> kv;
    kv["env.name"] = env_name;
    kv["env.n_agents"] = std::to_string(env_n_agents);
    kv["env.n_job_types"] = std::to_string(env_n_job_types);
    kv["env.episode_limit"] = std::to_string(env_episode_limit);
    kv["env.gamma"] = fmt_double(env_gamma);
    kv["env.signal_sigma"] = fmt_double(env_signal_sigma);
    kv["n_subtasks"] = std::to_string(n_subtasks);
    kv["repr_dim"] = std::to_string(repr_dim);
    kv["encoder_hidden_dim"] = std::to_string(encoder_hidden_dim);
    kv["rnn_hidden_dim"] = std::to_string(rnn_hidden_dim);
    kv["mixing_embed_dim"] = std::to_string(mixing_embed_dim);
    kv["gumbel_temperature"] = fmt_double(gumbel_temperature);
    kv["double_q"] = double_q ? "true" : "false";
    kv["kl_stop_gradient_next"] = kl_stop_gradient_next ? "true" : "false";
    kv["lambda_repr"] = fmt_double(lambda_repr);
    kv["lambda_kl"] = fmt_double(lambda_kl);
    kv["lr"] = fmt_double(lr);
    kv["rmsprop_alpha"] = fmt_double(rmsprop_alpha);
    kv["rmsprop_eps"] = fmt_double(rmsprop_eps);
    kv["grad_norm_clip"] = fmt_double(grad_norm_clip);
    kv["buffer_capacity"] = std::to_string(buffer_capacity);
    kv["batch_size"] = std::to_string(batch_size);
    kv["target_update_interval"] = std::to_string(target_update_interval);
    kv["eps_start"] = fmt_double(eps_start);
    kv["eps_end"] = fmt_double(eps_end);
    kv["eps_anneal_time"] = std::to_string(eps_anneal_time);
    kv["total_timesteps"] = std::to_string(total_timesteps);
    kv["eval_interval"] = std::to_string(eval_interval);
    kv["eval_episodes"] = std::to_string(eval_episodes);
    kv["stop_at_normalized_return"] = fmt_double(stop_at_normalized_return);
    kv["ablation"] = ablation_name(ablation);
    kv["match_param_width"] = match_param_width ? "true" : "false";
    kv["seed"] = std::to_string(seed);
    std::ostringstream os;
    for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
    return os.str();
}

inline std::uint64_t RunConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : serialize()) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::unique_ptr<Env> make_env(const RunConfig& cfg) {
    if (cfg.env_name == "heterogeneous_jobs") {
        HeterogeneousJobsConfig ec;
        ec.n_agents = cfg.env_n_agents;
        ec.n_job_types = cfg.env_n_job_types;
        ec.episode_limit = cfg.env_episode_limit;
        ec.gamma = cfg.env_gamma;
        ec.signal_sigma = cfg.env_signal_sigma;
        return std::make_unique<HeterogeneousJobs>(ec);
    }
    if (cfg.env_name == "two_roles_matrix") {
        TwoRolesMatrixConfig ec;
        ec.n_agents = cfg.env_n_agents;
        ec.episode_limit = cfg.env_episode_limit;
        ec.gamma = cfg.env_gamma;
        return std::make_unique<TwoRolesMatrix>(ec);
    }
    throw ConfigError("unknown env.name '" + cfg.env_name + "'");
}

}  // namespace ldsa
