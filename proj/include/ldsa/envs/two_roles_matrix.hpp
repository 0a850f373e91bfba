#pragma once

// Repeated coordination game: the team scores one point whenever exactly half
// the agents pick action 0. All agents see the same observation (normalized
// time and how many picked action 0 last step), so splitting into two roles
// requires breaking symmetry by identity.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ldsa/env.hpp"

namespace ldsa {

struct TwoRolesMatrixConfig {
    int n_agents = 4;
    int episode_limit = 10;
    double gamma = 0.99;
};

class TwoRolesMatrix final : public Env {
public:
    explicit TwoRolesMatrix(TwoRolesMatrixConfig cfg) : cfg_(cfg) {
        if (cfg_.n_agents < 2 || cfg_.n_agents % 2 != 0) {
            throw ConfigError("TwoRolesMatrix: n_agents must be even and >= 2, got " + std::to_string(cfg_.n_agents));
        }
        spec_.n_agents = cfg_.n_agents;
        spec_.n_actions = 2;
        spec_.obs_dim = 2;
        spec_.state_dim = 2;
        spec_.episode_limit = cfg_.episode_limit;
        spec_.gamma = cfg_.gamma;
        spec_.validate();
    }

    const EnvSpec& spec() const override { return spec_; }

    StepResult reset(std::uint64_t) override {
        t_ = 0;
        prev_zero_count_ = 0;
        terminated_ = false;
        started_ = true;
        return observe(0.0);
    }

    StepResult step(std::span<const int> joint_action) override {
        if (!started_) throw ContractViolation("TwoRolesMatrix: step() before reset()");
        detail::check_joint_action(spec_, joint_action, avail_cache_, terminated_, "TwoRolesMatrix");
        int zeros = 0;
        for (int u : joint_action) {
            if (u == 0) ++zeros;
        }
        const double reward = (zeros == cfg_.n_agents / 2) ? 1.0 : 0.0;
        prev_zero_count_ = zeros;
        ++t_;
        terminated_ = t_ >= cfg_.episode_limit;
        return observe(reward);
    }

    std::unique_ptr<OracleMdp> oracle_model() const override {
        if (!started_) throw ContractViolation("TwoRolesMatrix: oracle_model() before reset()");
        return std::make_unique<Model>(cfg_.n_agents);
    }

private:
    class Model final : public OracleMdp {
    public:
        explicit Model(int n_agents) : n_(n_agents) {}
        int num_states() const override { return n_ + 1; }  // previous zero-count
        int initial_state() const override { return 0; }
        std::pair<int, double> transition(int, std::span<const int> joint_action) const override {
            int zeros = 0;
            for (int u : joint_action) {
                if (u == 0) ++zeros;
            }
            return {zeros, zeros == n_ / 2 ? 1.0 : 0.0};
        }

    private:
        int n_;
    };

    StepResult observe(double reward) {
        StepResult r;
        r.reward = reward;
        r.terminated = terminated_;
        const double tt = static_cast<double>(t_) / cfg_.episode_limit;
        const double px = static_cast<double>(prev_zero_count_) / cfg_.n_agents;
        r.obs.assign(static_cast<std::size_t>(cfg_.n_agents), {tt, px});
        r.state = {tt, px};
        r.avail.assign(static_cast<std::size_t>(cfg_.n_agents), std::vector<std::uint8_t>{1, 1});
        avail_cache_ = r.avail;
        return r;
    }

    TwoRolesMatrixConfig cfg_;
    EnvSpec spec_;
    std::vector<std::vector<std::uint8_t>> avail_cache_;
    int t_ = 0;
    int prev_zero_count_ = 0;
    bool terminated_ = false;
    bool started_ = false;
};

}  // namespace ldsa
