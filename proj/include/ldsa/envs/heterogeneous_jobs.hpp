#pragma once

// Job-staffing environment with hidden heterogeneous aptitudes. Each episode
// draws one aptitude (a job type) per agent, rejecting draws until every job
// type is covered when the team is large enough. Agents observe their own
// aptitude one-hot corrupted by clipped Gaussian noise and must spread out so
// each job is staffed by someone actually good at it.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ldsa/env.hpp"
#include "ldsa/rng.hpp"

namespace ldsa {

struct HeterogeneousJobsConfig {
    int n_agents = 4;
    int n_job_types = 2;
    int episode_limit = 25;
    double gamma = 0.99;
    double signal_sigma = 0.3;
};

class HeterogeneousJobs final : public Env {
public:
    explicit HeterogeneousJobs(HeterogeneousJobsConfig cfg) : cfg_(cfg), rng_(0) {
        if (cfg_.n_job_types < 1) {
            throw ConfigError("HeterogeneousJobs: n_job_types must be >= 1, got " + std::to_string(cfg_.n_job_types));
        }
        if (cfg_.signal_sigma < 0.0) {
            throw ConfigError("HeterogeneousJobs: signal_sigma must be >= 0, got " + std::to_string(cfg_.signal_sigma));
        }
        spec_.n_agents = cfg_.n_agents;
        spec_.n_actions = cfg_.n_job_types + 1;  // one per job plus no-op
        spec_.obs_dim = cfg_.n_job_types;
        spec_.state_dim = cfg_.n_agents * cfg_.n_job_types + 1;
        spec_.episode_limit = cfg_.episode_limit;
        spec_.gamma = cfg_.gamma;
        spec_.validate();
    }

    const EnvSpec& spec() const override { return spec_; }

    StepResult reset(std::uint64_t seed) override {
        rng_ = derive_rng(seed, "heterogeneous-jobs");
        aptitude_.assign(static_cast<std::size_t>(cfg_.n_agents), 0);
        // Reject draws until every job type has at least one apt agent, which
        // makes the optimal return independent of the draw. Impossible when
        // the team is smaller than the job set, so fall back to iid there.
        const bool need_cover = cfg_.n_agents >= cfg_.n_job_types;
        while (true) {
            for (auto& a : aptitude_) a = rng_.uniform_int(cfg_.n_job_types);
            if (!need_cover || covers_all_jobs()) break;
        }
        t_ = 0;
        terminated_ = false;
        started_ = true;
        return observe(0.0);
    }

    StepResult step(std::span<const int> joint_action) override {
        if (!started_) throw ContractViolation("HeterogeneousJobs: step() before reset()");
        detail::check_joint_action(spec_, joint_action, avail_cache_, terminated_, "HeterogeneousJobs");
        const double reward = reward_for(aptitude_, joint_action, cfg_.n_job_types);
        ++t_;
        terminated_ = t_ >= cfg_.episode_limit;
        StepResult r = observe(reward);
        return r;
    }

    std::unique_ptr<OracleMdp> oracle_model() const override {
        if (!started_) throw ContractViolation("HeterogeneousJobs: oracle_model() before reset()");
        return std::make_unique<Model>(aptitude_, cfg_.n_job_types);
    }

    const std::vector<int>& aptitudes() const { return aptitude_; }

    // Team reward: one point per job staffed by at least one agent whose
    // aptitude matches it, minus 0.1 per job staffed by more than one agent,
    // floored at zero. Action n_job_types is the no-op.
    static double reward_for(const std::vector<int>& aptitude, std::span<const int> joint_action, int n_job_types) {
        double correct = 0.0, overstaffed = 0.0;
        for (int job = 0; job < n_job_types; ++job) {
            int workers = 0;
            bool apt_present = false;
            for (std::size_t a = 0; a < aptitude.size(); ++a) {
                if (joint_action[a] == job) {
                    ++workers;
                    if (aptitude[a] == job) apt_present = true;
                }
            }
            if (workers > 0 && apt_present) correct += 1.0;
            if (workers > 1) overstaffed += 1.0;
        }
        return std::max(0.0, correct - 0.1 * overstaffed);
    }

private:
    class Model final : public OracleMdp {
    public:
        Model(std::vector<int> aptitude, int n_job_types) : aptitude_(std::move(aptitude)), jobs_(n_job_types) {}
        int num_states() const override { return 1; }
        int initial_state() const override { return 0; }
        std::pair<int, double> transition(int, std::span<const int> joint_action) const override {
            return {0, reward_for(aptitude_, joint_action, jobs_)};
        }

    private:
        std::vector<int> aptitude_;
        int jobs_;
    };

    bool covers_all_jobs() const {
        std::vector<char> seen(static_cast<std::size_t>(cfg_.n_job_types), 0);
        for (int a : aptitude_) seen[static_cast<std::size_t>(a)] = 1;
        return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
    }

    StepResult observe(double reward) {
        StepResult r;
        r.reward = reward;
        r.terminated = terminated_;
        r.obs.resize(static_cast<std::size_t>(cfg_.n_agents));
        for (int a = 0; a < cfg_.n_agents; ++a) {
            auto& o = r.obs[static_cast<std::size_t>(a)];
            o.assign(static_cast<std::size_t>(cfg_.n_job_types), 0.0);
            for (int c = 0; c < cfg_.n_job_types; ++c) {
                double noise = std::clamp(rng_.gaussian(cfg_.signal_sigma), -1.0, 1.0);
                o[static_cast<std::size_t>(c)] = (aptitude_[static_cast<std::size_t>(a)] == c ? 1.0 : 0.0) + noise;
            }
        }
        r.state.assign(static_cast<std::size_t>(spec_.state_dim), 0.0);
        for (int a = 0; a < cfg_.n_agents; ++a) {
            r.state[static_cast<std::size_t>(a * cfg_.n_job_types + aptitude_[static_cast<std::size_t>(a)])] = 1.0;
        }
        r.state.back() = static_cast<double>(t_) / cfg_.episode_limit;
        r.avail.assign(static_cast<std::size_t>(cfg_.n_agents),
                       std::vector<std::uint8_t>(static_cast<std::size_t>(spec_.n_actions), 1));
        avail_cache_ = r.avail;
        return r;
    }

    HeterogeneousJobsConfig cfg_;
    EnvSpec spec_;
    Rng rng_;
    std::vector<int> aptitude_;
    std::vector<std::vector<std::uint8_t>> avail_cache_;
    int t_ = 0;
    bool terminated_ = false;
    bool started_ = false;
};

}  // namespace ldsa
