#pragma once

// Episode collection. Runs one episode with the current parameters on a
// private tape (forward only), records everything the replay buffer and the
// diagnostics need: the trajectory itself, which head each agent used at each
// step, how often assignments switched, and optionally the full per-step
// assignment distributions.

#include <cstdint>
#include <vector>

#include "ldsa/config.hpp"
#include "ldsa/env.hpp"
#include "ldsa/model.hpp"
#include "ldsa/params.hpp"
#include "ldsa/policy.hpp"
#include "ldsa/replay.hpp"
#include "ldsa/representation.hpp"
#include "ldsa/rng.hpp"
#include "ldsa/selection.hpp"

namespace ldsa {

struct TimelineRow {
    int t = 0;
    int agent = 0;
    int subtask = 0;
    std::vector<double> probs;  // assignment distribution at this step
};

struct RolloutResult {
    Episode episode;
    int switch_count = 0;            // assignment changes summed over agents
    std::vector<int> subtask_usage;  // agent-steps spent on each head
    std::vector<TimelineRow> timeline;
};

struct RolloutOptions {
    bool train = false;      // sampled assignments and epsilon-greedy actions
    double epsilon = 0.0;
    bool record_timeline = false;
};

inline RolloutResult run_episode(Env& env, std::uint64_t env_seed, const ParamStore& store, const ModelDims& d,
                                 const RunConfig& cfg, const RolloutOptions& opt, Rng& select_rng,
                                 Rng& explore_rng) {
    const EnvSpec& spec = env.spec();
    const int A = d.n_agents, nA = d.n_actions, k = d.k;
    AgentInputLayout layout{spec.obs_dim, nA, A};
    if (layout.size() != d.input_dim) {
        throw ShapeError("run_episode: env layout does not match model input dim");
    }

    Tape tape;
    auto bound = bind_params(tape, store);
    Tensor x_phi, x_phi_t;
    if (d.has_repr) {
        x_phi = subtask_representations(tape, bound, k);
        x_phi_t = transpose(x_phi);
    }
    auto heads = d.has_decoder ? decode_heads(bound, x_phi, d.rnn_hidden, nA) : free_heads(bound, k);
    Tensor h_hist = tape.zeros({A, d.rnn_hidden});
    Tensor h_sel = d.has_selection ? tape.zeros({A, d.rnn_hidden}) : Tensor{};

    RolloutResult out;
    out.subtask_usage.assign(static_cast<std::size_t>(k), 0);
    Episode& ep = out.episode;
    ep.n_agents = A;
    ep.n_actions = nA;
    ep.obs_dim = spec.obs_dim;
    ep.state_dim = spec.state_dim;

    StepResult sr = env.reset(env_seed);
    std::vector<int> prev_actions(static_cast<std::size_t>(A), -1);
    std::vector<int> prev_picks(static_cast<std::size_t>(A), -1);
    std::vector<double> input_row(static_cast<std::size_t>(A) * d.input_dim);
    std::vector<int> joint(static_cast<std::size_t>(A), 0);

    auto record_slot = [&](const StepResult& s) {
        for (int a = 0; a < A; ++a) {
            ep.obs.insert(ep.obs.end(), s.obs[static_cast<std::size_t>(a)].begin(),
                          s.obs[static_cast<std::size_t>(a)].end());
        }
        ep.state.insert(ep.state.end(), s.state.begin(), s.state.end());
        for (int a = 0; a < A; ++a) {
            ep.avail.insert(ep.avail.end(), s.avail[static_cast<std::size_t>(a)].begin(),
                            s.avail[static_cast<std::size_t>(a)].end());
        }
    };

    for (int t = 0; t < spec.episode_limit; ++t) {
        record_slot(sr);
        for (int a = 0; a < A; ++a) {
            layout.write({input_row.data() + static_cast<std::ptrdiff_t>(a) * d.input_dim,
                          static_cast<std::size_t>(d.input_dim)},
                         sr.obs[static_cast<std::size_t>(a)], prev_actions[static_cast<std::size_t>(a)], a);
        }
        Tensor x = tape.leaf({A, d.input_dim}, input_row);
        h_hist = history_step(bound, x, h_hist);

        Tensor weights;
        std::vector<int> picks(static_cast<std::size_t>(A), 0);
        std::vector<double> probs_flat;
        if (k == 1) {
            weights = tape.full({A, 1}, 1.0);
            probs_flat.assign(static_cast<std::size_t>(A), 1.0);
        } else if (d.has_selection) {
            auto sel = selection_step(bound, x, h_sel, x_phi_t, d.direct_prob);
            h_sel = sel.h_next;
            probs_flat.assign(sel.probs.values().begin(), sel.probs.values().end());
            if (d.soft_weights) {
                weights = sel.probs;
                picks = argmax_rows(sel.probs);  // reported assignment, not a hard gate
            } else if (opt.train) {
                std::vector<double> noise(static_cast<std::size_t>(A) * k);
                for (auto& g : noise) g = select_rng.gumbel();
                weights = gumbel_st(sel.probs, cfg.gumbel_temperature, noise);
                picks = argmax_rows(weights);
            } else {
                picks = argmax_rows(sel.probs);
                weights = onehot_rows(tape, A, k, picks);
            }
        } else {  // random assignment, both in training and evaluation
            for (auto& p : picks) p = select_rng.uniform_int(k);
            weights = onehot_rows(tape, A, k, picks);
            probs_flat.assign(static_cast<std::size_t>(A) * k, 1.0 / k);
        }

        auto qs = per_subtask_q(h_hist, heads);
        Tensor q_all = combine_q(qs, weights, !d.soft_weights && k > 1);

        for (int a = 0; a < A; ++a) {
            std::span<const double> qrow{q_all.values().data() + static_cast<std::ptrdiff_t>(a) * nA,
                                         static_cast<std::size_t>(nA)};
            const auto& av = sr.avail[static_cast<std::size_t>(a)];
            int act = greedy_action(qrow, av);
            if (opt.train && explore_rng.uniform() < opt.epsilon) {
                int n_av = 0;
                for (auto f : av) n_av += f ? 1 : 0;
                int pick = explore_rng.uniform_int(n_av);
                for (int u = 0; u < nA; ++u) {
                    if (!av[static_cast<std::size_t>(u)]) continue;
                    if (pick-- == 0) {
                        act = u;
                        break;
                    }
                }
            }
            joint[static_cast<std::size_t>(a)] = act;

            const int sub = picks[static_cast<std::size_t>(a)];
            out.subtask_usage[static_cast<std::size_t>(sub)] += 1;
            if (t > 0 && sub != prev_picks[static_cast<std::size_t>(a)]) out.switch_count += 1;
            prev_picks[static_cast<std::size_t>(a)] = sub;
            if (opt.record_timeline) {
                TimelineRow row;
                row.t = t;
                row.agent = a;
                row.subtask = sub;
                if (k == 1) {
                    row.probs = {1.0};
                } else {
                    row.probs.assign(probs_flat.begin() + static_cast<std::ptrdiff_t>(a) * k,
                                     probs_flat.begin() + static_cast<std::ptrdiff_t>(a + 1) * k);
                }
                out.timeline.push_back(std::move(row));
            }
        }

        sr = env.step(joint);
        ep.actions.insert(ep.actions.end(), joint.begin(), joint.end());
        ep.reward.push_back(sr.reward);
        prev_actions = joint;
        ep.length = t + 1;
        if (sr.terminated) {
            ep.terminated = true;
            break;
        }
    }
    record_slot(sr);  // trailing slot for the bootstrap target
    ep.validate();
    return out;
}

}  // namespace ldsa
