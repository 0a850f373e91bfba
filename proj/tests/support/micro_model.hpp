#pragma once

// Small fully-registered model for module tests: two agents, two subtasks,
// tiny widths, deterministic initialization.

#include "ldsa/config.hpp"
#include "ldsa/model.hpp"
#include "ldsa/params.hpp"
#include "ldsa/rng.hpp"

namespace ldsa::testsupport {

struct MicroModel {
    RunConfig cfg;
    EnvSpec env;
    ModelDims dims;
    ParamStore store;

    explicit MicroModel(Ablation ablation = Ablation::None, std::uint64_t seed = 1) {
        cfg.env_name = "heterogeneous_jobs";
        cfg.env_n_agents = 2;
        cfg.env_n_job_types = 2;
        cfg.env_episode_limit = 3;
        cfg.n_subtasks = 2;
        cfg.repr_dim = 5;
        cfg.encoder_hidden_dim = 6;
        cfg.rnn_hidden_dim = 8;
        cfg.mixing_embed_dim = 4;
        cfg.batch_size = 2;
        cfg.buffer_capacity = 8;
        cfg.ablation = ablation;
        cfg.seed = seed;
        cfg.validate();

        env.n_agents = 2;
        env.n_actions = 3;
        env.obs_dim = 2;
        env.state_dim = 5;
        env.episode_limit = 3;
        env.gamma = 0.99;
        env.validate();

        dims = resolve_dims(cfg, env);
        register_blocks(store, dims);
        Rng rng = derive_rng(seed, "init");
        store.init_uniform(rng);
    }
};

}  // namespace ldsa::testsupport
