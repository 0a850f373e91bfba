#pragma once

// Cooperative multi-agent environment interface plus the exhaustive planning
// oracle used to normalize returns. Environments are tiny by design: small
// enough that the optimal joint return can be computed by dynamic programming
// over the underlying MDP, which the learner never sees.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ldsa/errors.hpp"

namespace ldsa {

struct EnvSpec {
    int n_agents = 0;
    int n_actions = 0;
    int obs_dim = 0;
    int state_dim = 0;
    int episode_limit = 0;
    double gamma = 0.99;

    void validate() const {
        if (n_agents < 1) throw ConfigError("EnvSpec: n_agents must be >= 1, got " + std::to_string(n_agents));
        if (n_actions < 2) throw ConfigError("EnvSpec: n_actions must be >= 2, got " + std::to_string(n_actions));
        if (obs_dim < 1) throw ConfigError("EnvSpec: obs_dim must be >= 1, got " + std::to_string(obs_dim));
        if (state_dim < 1) throw ConfigError("EnvSpec: state_dim must be >= 1, got " + std::to_string(state_dim));
        if (episode_limit < 1) {
            throw ConfigError("EnvSpec: episode_limit must be >= 1, got " + std::to_string(episode_limit));
        }
        if (!(gamma >= 0.0 && gamma < 1.0)) {
            throw ConfigError("EnvSpec: gamma must lie in [0, 1), got " + std::to_string(gamma));
        }
    }
};

struct StepResult {
    std::vector<std::vector<double>> obs;          // per agent
    std::vector<double> state;                     // centralized state
    std::vector<std::vector<std::uint8_t>> avail;  // per agent, per action
    double reward = 0.0;
    bool terminated = false;
};

// Underlying MDP of one drawn episode, exposed for planning only.
class OracleMdp {
public:
    virtual ~OracleMdp() = default;
    virtual int num_states() const = 0;
    virtual int initial_state() const = 0;
    // Returns (next state, team reward) for a joint action.
    virtual std::pair<int, double> transition(int state, std::span<const int> joint_action) const = 0;
};

class Env {
public:
    virtual ~Env() = default;
    virtual const EnvSpec& spec() const = 0;
    virtual StepResult reset(std::uint64_t seed) = 0;
    virtual StepResult step(std::span<const int> joint_action) = 0;
    // Planning model for the episode drawn by the last reset.
    virtual std::unique_ptr<OracleMdp> oracle_model() const = 0;
};

// Finite-horizon value iteration over joint actions. Work is bounded by
// num_states * n_actions^n_agents * horizon; anything past `budget` raises.
inline double oracle_best_return(const OracleMdp& mdp, int n_agents, int n_actions, int horizon, double gamma,
                                 std::int64_t budget = 1'000'000) {
    std::int64_t joint = 1;
    for (int a = 0; a < n_agents; ++a) {
        joint *= n_actions;
        if (joint > budget) {
            throw BudgetError("oracle: joint action space exceeds budget of " + std::to_string(budget));
        }
    }
    const std::int64_t work = static_cast<std::int64_t>(mdp.num_states()) * joint * horizon;
    if (work > budget) {
        throw BudgetError("oracle: " + std::to_string(work) + " transitions exceed budget of " +
                          std::to_string(budget));
    }
    const int S = mdp.num_states();
    std::vector<double> v_next(static_cast<std::size_t>(S), 0.0);
    std::vector<double> v_cur(static_cast<std::size_t>(S), 0.0);
    std::vector<int> action(static_cast<std::size_t>(n_agents), 0);
    for (int t = horizon - 1; t >= 0; --t) {
        for (int s = 0; s < S; ++s) {
            std::fill(action.begin(), action.end(), 0);
            double best = -1e300;
            while (true) {
                auto [s2, r] = mdp.transition(s, action);
                double q = r + (t + 1 < horizon ? gamma * v_next[static_cast<std::size_t>(s2)] : 0.0);
                if (q > best) best = q;
                int i = 0;
                for (; i < n_agents; ++i) {
                    if (++action[static_cast<std::size_t>(i)] < n_actions) break;
                    action[static_cast<std::size_t>(i)] = 0;
                }
                if (i == n_agents) break;
            }
            v_cur[static_cast<std::size_t>(s)] = best;
        }
        std::swap(v_cur, v_next);
    }
    return v_next[static_cast<std::size_t>(mdp.initial_state())];
}

// Convenience: draw the episode for `seed` and plan it.
inline double oracle_return_for_seed(Env& env, std::uint64_t seed, std::int64_t budget = 1'000'000) {
    env.reset(seed);
    auto model = env.oracle_model();
    const EnvSpec& s = env.spec();
    return oracle_best_return(*model, s.n_agents, s.n_actions, s.episode_limit, s.gamma, budget);
}

// Per-agent network input: environment observation, then previous own action
// as a one-hot (zeros on the first step), then agent identity as a one-hot.
struct AgentInputLayout {
    int obs_dim = 0;
    int n_actions = 0;
    int n_agents = 0;

    int size() const { return obs_dim + n_actions + n_agents; }

    void write(std::span<double> out, std::span<const double> obs, int prev_action, int agent) const {
        if (static_cast<int>(out.size()) != size()) {
            throw ShapeError("AgentInputLayout: output span of " + std::to_string(out.size()) +
                             " does not match layout size " + std::to_string(size()));
        }
        if (static_cast<int>(obs.size()) != obs_dim) {
            throw ShapeError("AgentInputLayout: observation of " + std::to_string(obs.size()) +
                             " does not match obs_dim " + std::to_string(obs_dim));
        }
        if (agent < 0 || agent >= n_agents) {
            throw ContractViolation("AgentInputLayout: agent " + std::to_string(agent) + " out of range");
        }
        if (prev_action < -1 || prev_action >= n_actions) {
            throw ContractViolation("AgentInputLayout: previous action " + std::to_string(prev_action) +
                                    " out of range");
        }
        std::size_t i = 0;
        for (double v : obs) out[i++] = v;
        for (int a = 0; a < n_actions; ++a) out[i++] = (a == prev_action) ? 1.0 : 0.0;
        for (int a = 0; a < n_agents; ++a) out[i++] = (a == agent) ? 1.0 : 0.0;
    }
};

namespace detail {

inline void check_joint_action(const EnvSpec& spec, std::span<const int> joint,
                               const std::vector<std::vector<std::uint8_t>>& avail, bool terminated,
                               const char* env_name) {
    if (terminated) {
        throw ContractViolation(std::string(env_name) + ": step() called after the episode terminated");
    }
    if (static_cast<int>(joint.size()) != spec.n_agents) {
        throw ContractViolation(std::string(env_name) + ": joint action has " + std::to_string(joint.size()) +
                                " entries for " + std::to_string(spec.n_agents) + " agents");
    }
    for (int a = 0; a < spec.n_agents; ++a) {
        int u = joint[static_cast<std::size_t>(a)];
        if (u < 0 || u >= spec.n_actions) {
            throw ContractViolation(std::string(env_name) + ": agent " + std::to_string(a) +
                                    " chose out-of-range action " + std::to_string(u));
        }
        if (!avail[static_cast<std::size_t>(a)][static_cast<std::size_t>(u)]) {
            throw ContractViolation(std::string(env_name) + ": agent " + std::to_string(a) +
                                    " chose unavailable action " + std::to_string(u));
        }
    }
}

}  // namespace detail

}  // namespace ldsa
