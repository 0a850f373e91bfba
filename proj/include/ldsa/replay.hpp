#pragma once

// Episode storage and the FIFO replay buffer. Episodes keep the extra
// trailing observation/state/availability slot so the bootstrap target at the
// final transition can be formed without special cases.

#include <cstdint>
#include <deque>
#include <span>
#include <vector>

#include "ldsa/errors.hpp"
#include "ldsa/rng.hpp"

namespace ldsa {

struct Episode {
    int n_agents = 0;
    int n_actions = 0;
    int obs_dim = 0;
    int state_dim = 0;
    int length = 0;        // number of transitions
    bool terminated = false;

    // length+1 observation/state/availability slots, length action/reward slots
    std::vector<double> obs;           // (length+1) * n_agents * obs_dim
    std::vector<double> state;         // (length+1) * state_dim
    std::vector<std::uint8_t> avail;   // (length+1) * n_agents * n_actions
    std::vector<int> actions;          // length * n_agents
    std::vector<double> reward;        // length

    std::span<const double> obs_at(int t, int agent) const {
        const std::size_t off = (static_cast<std::size_t>(t) * n_agents + agent) * obs_dim;
        return {obs.data() + off, static_cast<std::size_t>(obs_dim)};
    }

    std::span<const double> state_at(int t) const {
        return {state.data() + static_cast<std::size_t>(t) * state_dim, static_cast<std::size_t>(state_dim)};
    }

    std::span<const std::uint8_t> avail_at(int t, int agent) const {
        const std::size_t off = (static_cast<std::size_t>(t) * n_agents + agent) * n_actions;
        return {avail.data() + off, static_cast<std::size_t>(n_actions)};
    }

    int action_at(int t, int agent) const {
        return actions[static_cast<std::size_t>(t) * n_agents + agent];
    }

    double undiscounted_return() const {
        double acc = 0.0;
        for (double r : reward) acc += r;
        return acc;
    }

    void validate() const {
        const std::size_t L = static_cast<std::size_t>(length);
        auto expect = [&](std::size_t got, std::size_t want, const char* what) {
            if (got != want) {
                throw ShapeError("Episode: " + std::string(what) + " has " + std::to_string(got) +
                                 " entries, expected " + std::to_string(want));
            }
        };
        expect(obs.size(), (L + 1) * n_agents * obs_dim, "obs");
        expect(state.size(), (L + 1) * state_dim, "state");
        expect(avail.size(), (L + 1) * n_agents * n_actions, "avail");
        expect(actions.size(), L * n_agents, "actions");
        expect(reward.size(), L, "reward");
    }
};

// Fixed-capacity FIFO of whole episodes with uniform sampling without
// replacement. sample() must not be called until ready().
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ < 1) throw ConfigError("ReplayBuffer: capacity must be >= 1");
    }

    void push(Episode ep) {
        ep.validate();
        if (buf_.size() == capacity_) buf_.pop_front();
        buf_.push_back(std::move(ep));
    }

    std::size_t size() const { return buf_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool ready(int batch) const { return static_cast<int>(buf_.size()) >= batch; }

    const Episode& episode(std::size_t i) const { return buf_[i]; }

    // Distinct uniform indices via a partial Fisher-Yates over [0, size).
    std::vector<const Episode*> sample(int batch, Rng& rng) {
        if (!ready(batch)) {
            throw ContractViolation("ReplayBuffer: sample(" + std::to_string(batch) + ") with only " +
                                    std::to_string(buf_.size()) + " episodes stored");
        }
        std::vector<int> idx(buf_.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        std::vector<const Episode*> out;
        out.reserve(static_cast<std::size_t>(batch));
        for (int i = 0; i < batch; ++i) {
            int j = i + rng.uniform_int(static_cast<int>(idx.size()) - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
            out.push_back(&buf_[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::deque<Episode> buf_;
};

}  // namespace ldsa
