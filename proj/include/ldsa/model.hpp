#pragma once

// Model assembly: which parameter blocks exist for a given configuration and
// variant, with shapes derived in one place. Widths can be auto-scaled for the
// shared-head baseline so its parameter count matches the full method.

#include <cstdint>
#include <string>

#include "ldsa/config.hpp"
#include "ldsa/env.hpp"
#include "ldsa/params.hpp"

namespace ldsa {

struct ModelDims {
    int n_agents = 0;
    int n_actions = 0;
    int state_dim = 0;
    int input_dim = 0;

    int k = 0;  // number of subtask heads actually instantiated
    int repr_dim = 0;
    int encoder_hidden = 0;
    int rnn_hidden = 0;
    int embed = 0;

    bool has_repr = false;       // subtask representation encoder present
    bool has_selection = false;  // ability encoder present
    bool has_decoder = false;    // heads decoded from representations
    bool direct_prob = false;
    bool soft_weights = false;   // combine with probabilities, no sampling
    bool random_select = false;  // uniform random assignment, no gradients

    double lambda_repr_eff = 0.0;
    double lambda_kl_eff = 0.0;
};

inline ModelDims model_dims(const RunConfig& cfg, const EnvSpec& env) {
    ModelDims d;
    d.n_agents = env.n_agents;
    d.n_actions = env.n_actions;
    d.state_dim = env.state_dim;
    d.input_dim = env.obs_dim + env.n_actions + env.n_agents;
    d.repr_dim = cfg.repr_dim;
    d.encoder_hidden = cfg.encoder_hidden_dim;
    d.rnn_hidden = cfg.rnn_hidden_dim;
    d.embed = cfg.mixing_embed_dim;
    d.k = cfg.n_subtasks;
    d.has_repr = true;
    d.has_selection = true;
    d.has_decoder = true;
    d.lambda_repr_eff = cfg.lambda_repr;
    d.lambda_kl_eff = cfg.lambda_kl;

    switch (cfg.ablation) {
        case Ablation::None:
            break;
        case Ablation::NoTemporalReg:
            d.lambda_kl_eff = 0.0;
            break;
        case Ablation::NoReprReg:
            d.lambda_repr_eff = 0.0;
            break;
        case Ablation::NoBothReg:
            d.lambda_kl_eff = 0.0;
            d.lambda_repr_eff = 0.0;
            break;
        case Ablation::NoDecoder:
            d.has_decoder = false;
            break;
        case Ablation::RandomSelect:
            d.has_selection = false;
            d.random_select = true;
            d.lambda_kl_eff = 0.0;  // no assignment distribution exists
            break;
        case Ablation::DirectProb:
            d.direct_prob = true;
            break;
        case Ablation::MixWeights:
            d.soft_weights = true;
            break;
        case Ablation::SharedBaseline:
            d.k = 1;
            d.has_repr = false;
            d.has_selection = false;
            d.has_decoder = false;
            d.lambda_repr_eff = 0.0;
            d.lambda_kl_eff = 0.0;
            break;
    }
    return d;
}

inline void register_blocks(ParamStore& s, const ModelDims& d) {
    const int in = d.input_dim, H = d.rnn_hidden, m = d.repr_dim, k = d.k;
    const int nA = d.n_actions, A = d.n_agents, S = d.state_dim, E = d.embed;

    s.add("agent/fc_in_w", {in, H}, in);
    s.add("agent/fc_in_b", {H}, in);
    s.add("agent/gru_wx", {H, 3 * H}, H);
    s.add("agent/gru_wh", {H, 3 * H}, H);
    s.add("agent/gru_bx", {3 * H}, H);
    s.add("agent/gru_bh", {3 * H}, H);

    if (d.has_selection) {
        s.add("sel/fc_in_w", {in, H}, in);
        s.add("sel/fc_in_b", {H}, in);
        s.add("sel/gru_wx", {H, 3 * H}, H);
        s.add("sel/gru_wh", {H, 3 * H}, H);
        s.add("sel/gru_bx", {3 * H}, H);
        s.add("sel/gru_bh", {3 * H}, H);
        s.add("sel/fc_out_w", {H, m}, H);
        s.add("sel/fc_out_b", {m}, H);
        if (d.direct_prob) {
            s.add("sel/dp_w", {m, k}, m);
            s.add("sel/dp_b", {k}, m);
        }
    }

    if (d.has_repr) {
        s.add("repr/w1", {k, d.encoder_hidden}, k);
        s.add("repr/b1", {d.encoder_hidden}, k);
        s.add("repr/w2", {d.encoder_hidden, m}, d.encoder_hidden);
        s.add("repr/b2", {m}, d.encoder_hidden);
    }

    if (d.has_decoder) {
        s.add("dec/w", {m, H * nA + nA}, m);
        s.add("dec/b", {H * nA + nA}, m);
    } else {
        for (int i = 0; i < k; ++i) {
            s.add("head/w_" + std::to_string(i), {H, nA}, H);
            s.add("head/b_" + std::to_string(i), {nA}, H);
        }
    }

    s.add("mix/hw1_w", {S, A * E}, S);
    s.add("mix/hw1_b", {A * E}, S);
    s.add("mix/hb1_w", {S, E}, S);
    s.add("mix/hb1_b", {E}, S);
    s.add("mix/hw2_w", {S, E}, S);
    s.add("mix/hw2_b", {E}, S);
    s.add("mix/v1_w", {S, E}, S);
    s.add("mix/v1_b", {E}, S);
    s.add("mix/v2_w", {E, 1}, E);
    s.add("mix/v2_b", {1}, E);
}

inline std::int64_t param_count_for(const RunConfig& cfg, const EnvSpec& env) {
    ParamStore scratch;
    register_blocks(scratch, model_dims(cfg, env));
    return scratch.param_count();
}

// Dims for the given config; under SharedBaseline with match_param_width the
// recurrent width is grown until the total parameter count lands within 5% of
// the full method at the same configuration.
inline ModelDims resolve_dims(const RunConfig& cfg, const EnvSpec& env) {
    ModelDims d = model_dims(cfg, env);
    if (cfg.ablation == Ablation::SharedBaseline && cfg.match_param_width) {
        RunConfig full = cfg;
        full.ablation = Ablation::None;
        full.match_param_width = false;
        const std::int64_t target = param_count_for(full, env);

        auto count_at = [&](int h) {
            RunConfig probe = cfg;
            probe.match_param_width = false;
            probe.rnn_hidden_dim = h;
            return param_count_for(probe, env);
        };
        int lo = cfg.rnn_hidden_dim;
        std::int64_t best_diff = std::abs(count_at(lo) - target);
        int best_h = lo;
        for (int h = lo; h <= 16384; ++h) {
            std::int64_t c = count_at(h);
            std::int64_t diff = std::abs(c - target);
            if (diff < best_diff) {
                best_diff = diff;
                best_h = h;
            }
            if (c >= target) break;
        }
        if (static_cast<double>(best_diff) > 0.05 * static_cast<double>(target)) {
            throw ConfigError("match_param_width: no recurrent width lands within 5% of " + std::to_string(target) +
                              " parameters");
        }
        d.rnn_hidden = best_h;
    }
    return d;
}

}  // namespace ldsa
