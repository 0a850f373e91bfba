#pragma once

// Training core. One train step: sample a batch of whole episodes, compute
// bootstrap targets with the target network on its own tape (never
// differentiated), then build the training loss on a fresh tape, run the
// reverse sweep, clip, and apply RMSProp.
//
// Batch layout: rows are episode-major agent rows (row = episode * A + agent),
// tensors are per-timestep. Episodes shorter than the longest in the batch are
// padded; padded transitions carry a zero fill mask and contribute nothing.

#include <cmath>
#include <memory>
#include <vector>

#include "ldsa/config.hpp"
#include "ldsa/env.hpp"
#include "ldsa/mixing.hpp"
#include "ldsa/model.hpp"
#include "ldsa/optim.hpp"
#include "ldsa/params.hpp"
#include "ldsa/policy.hpp"
#include "ldsa/replay.hpp"
#include "ldsa/representation.hpp"
#include "ldsa/rng.hpp"
#include "ldsa/selection.hpp"

namespace ldsa {

struct LossReport {
    double td = 0.0;        // mean squared masked temporal-difference error
    double spread = 0.0;    // representation spread penalty (<= 0)
    double temporal = 0.0;  // mean divergence between consecutive assignments
    double total = 0.0;
    double grad_norm = 0.0;  // pre-clip global gradient norm
};

struct BatchData {
    int B = 0, A = 0, T = 0;
    int in_dim = 0, nA = 0, S = 0;
    std::vector<std::vector<double>> inputs;    // T+1 entries of (B*A) x in_dim
    std::vector<std::vector<double>> avail;     // T+1 entries of (B*A) x nA
    std::vector<std::vector<double>> taken;     // T entries of (B*A) x nA one-hots
    std::vector<std::vector<double>> states;    // T+1 entries of B x S
    std::vector<std::vector<double>> rewards;   // T entries of B
    std::vector<std::vector<double>> filled;    // T entries of B
    std::vector<std::vector<double>> terminal;  // T entries of B
    int filled_count = 0;
    int pair_count = 0;  // adjacent (t, t+1) pairs where both steps exist

    int rows() const { return B * A; }
};

enum class SelectMode {
    SampleHard,  // straight-through sample, fresh noise
    Relaxed,     // soft sample from a provided noise table (verification)
    Greedy,      // argmax one-hot, no noise (target side, evaluation)
    Soft,        // probabilities as weights (MixWeights variant)
    Random,      // uniform one-hot constants (RandomSelect variant)
    SharedOnly,  // single head, weight is constant one
};

struct NoiseTable {
    std::vector<std::vector<double>> rows;  // per timestep, (B*A) * k gumbel draws
};

inline BatchData build_batch(std::span<const Episode* const> eps, const ModelDims& d) {
    if (eps.empty()) throw ContractViolation("build_batch: empty batch");
    BatchData bd;
    bd.B = static_cast<int>(eps.size());
    bd.A = d.n_agents;
    bd.in_dim = d.input_dim;
    bd.nA = d.n_actions;
    bd.S = d.state_dim;
    for (const Episode* ep : eps) {
        ep->validate();
        if (ep->n_agents != d.n_agents || ep->n_actions != d.n_actions || ep->state_dim != d.state_dim) {
            throw ShapeError("build_batch: episode layout does not match the model dimensions");
        }
        bd.T = std::max(bd.T, ep->length);
    }
    const int R = bd.rows();
    AgentInputLayout layout{eps[0]->obs_dim, d.n_actions, d.n_agents};
    if (layout.size() != d.input_dim) {
        throw ShapeError("build_batch: input layout size " + std::to_string(layout.size()) +
                         " does not match model input dim " + std::to_string(d.input_dim));
    }
    bd.inputs.assign(static_cast<std::size_t>(bd.T) + 1, std::vector<double>(static_cast<std::size_t>(R) * bd.in_dim, 0.0));
    bd.avail.assign(static_cast<std::size_t>(bd.T) + 1, std::vector<double>(static_cast<std::size_t>(R) * bd.nA, 0.0));
    bd.taken.assign(static_cast<std::size_t>(bd.T), std::vector<double>(static_cast<std::size_t>(R) * bd.nA, 0.0));
    bd.states.assign(static_cast<std::size_t>(bd.T) + 1, std::vector<double>(static_cast<std::size_t>(bd.B) * bd.S, 0.0));
    bd.rewards.assign(static_cast<std::size_t>(bd.T), std::vector<double>(static_cast<std::size_t>(bd.B), 0.0));
    bd.filled.assign(static_cast<std::size_t>(bd.T), std::vector<double>(static_cast<std::size_t>(bd.B), 0.0));
    bd.terminal.assign(static_cast<std::size_t>(bd.T), std::vector<double>(static_cast<std::size_t>(bd.B), 0.0));

    for (int b = 0; b < bd.B; ++b) {
        const Episode& ep = *eps[static_cast<std::size_t>(b)];
        for (int t = 0; t <= bd.T; ++t) {
            const bool real = t <= ep.length;
            for (int a = 0; a < bd.A; ++a) {
                const int r = b * bd.A + a;
                double* in_row = bd.inputs[static_cast<std::size_t>(t)].data() + static_cast<std::ptrdiff_t>(r) * bd.in_dim;
                double* av_row = bd.avail[static_cast<std::size_t>(t)].data() + static_cast<std::ptrdiff_t>(r) * bd.nA;
                if (real) {
                    const int prev = t > 0 ? ep.action_at(t - 1, a) : -1;
                    layout.write({in_row, static_cast<std::size_t>(bd.in_dim)}, ep.obs_at(t, a), prev, a);
                    auto av = ep.avail_at(t, a);
                    for (int u = 0; u < bd.nA; ++u) av_row[u] = av[static_cast<std::size_t>(u)] ? 1.0 : 0.0;
                } else {
                    av_row[0] = 1.0;  // placeholder; masked out everywhere it matters
                }
            }
            if (real) {
                auto st = ep.state_at(t);
                std::copy(st.begin(), st.end(),
                          bd.states[static_cast<std::size_t>(t)].begin() + static_cast<std::ptrdiff_t>(b) * bd.S);
            }
        }
        for (int t = 0; t < ep.length; ++t) {
            for (int a = 0; a < bd.A; ++a) {
                const int r = b * bd.A + a;
                bd.taken[static_cast<std::size_t>(t)][static_cast<std::size_t>(r) * bd.nA + ep.action_at(t, a)] = 1.0;
            }
            bd.rewards[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)] = ep.reward[static_cast<std::size_t>(t)];
            bd.filled[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)] = 1.0;
            const bool last = t == ep.length - 1;
            bd.terminal[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)] =
                (last && ep.terminated) ? 1.0 : 0.0;
            bd.filled_count += 1;
            if (t + 1 < ep.length) bd.pair_count += 1;
        }
    }
    return bd;
}

class Learner {
public:
    Learner(const RunConfig& cfg, const EnvSpec& env)
        : cfg_(cfg),
          env_(env),
          dims_(resolve_dims(cfg, env)),
          train_noise_rng_(derive_rng(cfg.seed, "train-noise")),
          target_pick_rng_(derive_rng(cfg.seed, "target-pick")) {
        register_blocks(params_, dims_);
        Rng init_rng = derive_rng(cfg.seed, "init");
        params_.init_uniform(init_rng);
        target_ = params_;
        opt_ = std::make_unique<RmsProp>(params_, RmsPropConfig{cfg.lr, cfg.rmsprop_alpha, cfg.rmsprop_eps});
    }

    const ModelDims& dims() const { return dims_; }
    const RunConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    ParamStore& target_params() { return target_; }
    const ParamStore& target_params() const { return target_; }
    RmsProp& optimizer() { return *opt_; }

    void refresh_target() { target_ = params_; }

    BatchData prepare(std::span<const Episode* const> batch) const { return build_batch(batch, dims_); }

    SelectMode train_mode() const {
        if (dims_.k == 1 && !dims_.has_selection && !dims_.random_select) return SelectMode::SharedOnly;
        if (dims_.random_select) return SelectMode::Random;
        if (dims_.soft_weights) return SelectMode::Soft;
        return SelectMode::SampleHard;
    }

    // Bootstrap targets y[t][b] for every transition, computed from the target
    // network (and the online network for action choice under double_q).
    std::vector<std::vector<double>> td_targets(const BatchData& bd) {
        auto q_target = value_pass_q(target_, bd);
        std::vector<std::vector<double>> q_online;
        if (cfg_.double_q) q_online = value_pass_q(params_, bd);

        // chosen-action values per agent row for t = 1..T
        Tape tape;
        auto bound = bind_params(tape, target_);
        const int R = bd.rows();
        std::vector<std::vector<double>> y(static_cast<std::size_t>(bd.T),
                                           std::vector<double>(static_cast<std::size_t>(bd.B), 0.0));
        for (int t = 1; t <= bd.T; ++t) {
            std::vector<double> agent_vals(static_cast<std::size_t>(R), 0.0);
            for (int r = 0; r < R; ++r) {
                const double* qrow = q_target[static_cast<std::size_t>(t)].data() + static_cast<std::ptrdiff_t>(r) * bd.nA;
                const double* avrow = bd.avail[static_cast<std::size_t>(t)].data() + static_cast<std::ptrdiff_t>(r) * bd.nA;
                int pick = -1;
                if (cfg_.double_q) {
                    const double* orow = q_online[static_cast<std::size_t>(t)].data() + static_cast<std::ptrdiff_t>(r) * bd.nA;
                    double best = 0.0;
                    for (int u = 0; u < bd.nA; ++u) {
                        if (avrow[u] == 0.0) continue;
                        if (pick < 0 || orow[u] > best) {
                            pick = u;
                            best = orow[u];
                        }
                    }
                } else {
                    double best = 0.0;
                    for (int u = 0; u < bd.nA; ++u) {
                        if (avrow[u] == 0.0) continue;
                        if (pick < 0 || qrow[u] > best) {
                            pick = u;
                            best = qrow[u];
                        }
                    }
                }
                if (pick < 0) throw ContractViolation("td_targets: no available action in stored step");
                agent_vals[static_cast<std::size_t>(r)] = qrow[pick];
            }
            Tensor qa = tape.leaf({bd.B, bd.A}, agent_vals);
            Tensor st = tape.leaf({bd.B, bd.S}, bd.states[static_cast<std::size_t>(t)]);
            Tensor qtot = mix_team_value(bound, qa, st, dims_.embed);
            for (int b = 0; b < bd.B; ++b) {
                const double bootstrap = (1.0 - bd.terminal[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(b)]) *
                                         env_.gamma * qtot.values()[static_cast<std::size_t>(b)];
                y[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(b)] =
                    bd.rewards[static_cast<std::size_t>(t - 1)][static_cast<std::size_t>(b)] + bootstrap;
            }
        }
        return y;
    }

    NoiseTable draw_noise(const BatchData& bd, Rng& rng) const {
        NoiseTable table;
        table.rows.resize(static_cast<std::size_t>(bd.T));
        for (auto& row : table.rows) {
            row.resize(static_cast<std::size_t>(bd.rows()) * dims_.k);
            for (auto& g : row) g = rng.gumbel();
        }
        return table;
    }

    LossReport train_step(std::span<const Episode* const> batch) {
        BatchData bd = prepare(batch);
        auto targets = td_targets(bd);
        Tape tape;
        auto bound = bind_params(tape, params_);
        LossReport rep;
        Tensor loss = build_loss_graph(tape, bound, bd, targets, train_mode(), &train_noise_rng_, nullptr, &rep);
        if (!std::isfinite(loss.scalar())) throw TrainingAbort("non-finite training loss");
        tape.backward(loss);
        auto grads = collect_grads(bound, params_);
        rep.grad_norm = clip_global_norm(grads, cfg_.grad_norm_clip);
        opt_->step(params_, grads);
        return rep;
    }

    // Verification path: the full training loss with relaxed sampling under a
    // caller-provided noise table and fixed targets; optionally also the
    // analytic gradient, flattened in block order.
    double relaxed_loss(const ParamStore& store, const BatchData& bd,
                        const std::vector<std::vector<double>>& targets, const NoiseTable& noise,
                        LossReport* parts = nullptr, std::vector<double>* flat_grads = nullptr) {
        Tape tape;
        auto bound = bind_params(tape, store);
        LossReport rep;
        Tensor loss = build_loss_graph(tape, bound, bd, targets, SelectMode::Relaxed, nullptr, &noise, &rep);
        if (parts) *parts = rep;
        if (flat_grads) {
            tape.backward(loss);
            auto grads = collect_grads(bound, store);
            flat_grads->clear();
            for (const auto& g : grads) flat_grads->insert(flat_grads->end(), g.begin(), g.end());
        }
        return loss.scalar();
    }

    // Greedy chosen-subtask Q values for every step 0..T under `store`,
    // forward only. Used for the target side of the TD backup.
    std::vector<std::vector<double>> value_pass_q(const ParamStore& store, const BatchData& bd) {
        Tape tape;
        auto bound = bind_params(tape, store);
        const int R = bd.rows();
        Tensor x_phi, x_phi_t;
        std::vector<SubtaskHead> heads;
        if (dims_.has_repr) {
            x_phi = subtask_representations(tape, bound, dims_.k);
            x_phi_t = transpose(x_phi);
        }
        heads = dims_.has_decoder ? decode_heads(bound, x_phi, dims_.rnn_hidden, dims_.n_actions)
                                  : free_heads(bound, dims_.k);
        Tensor h_hist = tape.zeros({R, dims_.rnn_hidden});
        Tensor h_sel = dims_.has_selection ? tape.zeros({R, dims_.rnn_hidden}) : Tensor{};
        std::vector<std::vector<double>> out(static_cast<std::size_t>(bd.T) + 1);
        for (int t = 0; t <= bd.T; ++t) {
            Tensor x = tape.leaf({R, bd.in_dim}, bd.inputs[static_cast<std::size_t>(t)]);
            h_hist = history_step(bound, x, h_hist);
            Tensor weights;
            if (dims_.k == 1) {
                weights = tape.full({R, 1}, 1.0);
            } else if (dims_.has_selection) {
                auto sel = selection_step(bound, x, h_sel, x_phi_t, dims_.direct_prob);
                h_sel = sel.h_next;
                if (dims_.soft_weights) {
                    weights = sel.probs;
                } else {
                    weights = onehot_rows(tape, R, dims_.k, argmax_rows(sel.probs));
                }
            } else {  // random selection
                std::vector<int> picks(static_cast<std::size_t>(R));
                for (auto& p : picks) p = target_pick_rng_.uniform_int(dims_.k);
                weights = onehot_rows(tape, R, dims_.k, picks);
            }
            auto qs = per_subtask_q(h_hist, heads);
            Tensor q_all = combine_q(qs, weights, !dims_.soft_weights && dims_.k > 1);
            out[static_cast<std::size_t>(t)].assign(q_all.values().begin(), q_all.values().end());
        }
        return out;
    }

private:
    Tensor build_loss_graph(Tape& tape, const BoundParams& bound, const BatchData& bd,
                            const std::vector<std::vector<double>>& targets, SelectMode mode, Rng* noise_rng,
                            const NoiseTable* noise_table, LossReport* rep) {
        const int R = bd.rows();
        const int k = dims_.k;
        Tensor x_phi, x_phi_t;
        if (dims_.has_repr) {
            x_phi = subtask_representations(tape, bound, k);
            x_phi_t = transpose(x_phi);
        }
        auto heads = dims_.has_decoder ? decode_heads(bound, x_phi, dims_.rnn_hidden, dims_.n_actions)
                                       : free_heads(bound, k);
        Tensor h_hist = tape.zeros({R, dims_.rnn_hidden});
        Tensor h_sel = dims_.has_selection ? tape.zeros({R, dims_.rnn_hidden}) : Tensor{};

        Tensor td_acc = tape.zeros({1});
        Tensor kl_acc = tape.zeros({1});
        std::vector<Tensor> probs_by_t(static_cast<std::size_t>(bd.T));

        for (int t = 0; t < bd.T; ++t) {
            Tensor x = tape.leaf({R, bd.in_dim}, bd.inputs[static_cast<std::size_t>(t)]);
            h_hist = history_step(bound, x, h_hist);
            Tensor weights;
            bool hard = false;
            switch (mode) {
                case SelectMode::SharedOnly:
                    weights = tape.full({R, 1}, 1.0);
                    break;
                case SelectMode::Random: {
                    std::vector<int> picks(static_cast<std::size_t>(R));
                    for (auto& p : picks) p = noise_rng ? noise_rng->uniform_int(k) : 0;
                    weights = onehot_rows(tape, R, k, picks);
                    hard = true;
                    break;
                }
                default: {
                    auto sel = selection_step(bound, x, h_sel, x_phi_t, dims_.direct_prob);
                    h_sel = sel.h_next;
                    probs_by_t[static_cast<std::size_t>(t)] = sel.probs;
                    if (mode == SelectMode::SampleHard) {
                        std::vector<double> noise(static_cast<std::size_t>(R) * k);
                        for (auto& g : noise) g = noise_rng->gumbel();
                        weights = gumbel_st(sel.probs, cfg_.gumbel_temperature, noise);
                        hard = true;
                    } else if (mode == SelectMode::Relaxed) {
                        weights = gumbel_relaxed(sel.probs, cfg_.gumbel_temperature,
                                                 noise_table->rows[static_cast<std::size_t>(t)]);
                    } else if (mode == SelectMode::Soft) {
                        weights = sel.probs;
                    } else {  // Greedy
                        weights = onehot_rows(tape, R, k, argmax_rows(sel.probs));
                        hard = true;
                    }
                    break;
                }
            }
            auto qs = per_subtask_q(h_hist, heads);
            Tensor q_all = combine_q(qs, weights, hard);

            Tensor taken = tape.leaf({R, bd.nA}, bd.taken[static_cast<std::size_t>(t)]);
            Tensor q_taken = row_sums(mul(q_all, taken));                     // [R]
            Tensor qa = reshape(q_taken, {bd.B, bd.A});                       // [B, A]
            Tensor st = tape.leaf({bd.B, bd.S}, bd.states[static_cast<std::size_t>(t)]);
            Tensor qtot = mix_team_value(bound, qa, st, dims_.embed);         // [B]
            Tensor y = tape.leaf({bd.B}, targets[static_cast<std::size_t>(t)]);
            Tensor fill = tape.leaf({bd.B}, bd.filled[static_cast<std::size_t>(t)]);
            Tensor delta = mul(sub(qtot, y), fill);
            td_acc = add(td_acc, sum_all(mul(delta, delta)));
        }

        // temporal smoothness between consecutive assignment distributions
        if (dims_.has_selection && bd.pair_count > 0) {
            for (int t = 0; t + 1 < bd.T; ++t) {
                if (!probs_by_t[static_cast<std::size_t>(t)].valid() ||
                    !probs_by_t[static_cast<std::size_t>(t + 1)].valid()) {
                    continue;
                }
                Tensor next = probs_by_t[static_cast<std::size_t>(t + 1)];
                if (cfg_.kl_stop_gradient_next) {
                    next = tape.leaf(next.shape(), next.values());
                }
                Tensor kl = kl_rows(probs_by_t[static_cast<std::size_t>(t)], next);  // [R]
                std::vector<double> rowmask(static_cast<std::size_t>(R), 0.0);
                for (int b = 0; b < bd.B; ++b) {
                    const double m = bd.filled[static_cast<std::size_t>(t + 1)][static_cast<std::size_t>(b)];
                    for (int a = 0; a < bd.A; ++a) rowmask[static_cast<std::size_t>(b * bd.A + a)] = m;
                }
                Tensor mask = tape.leaf({R}, std::move(rowmask));
                kl_acc = add(kl_acc, sum_all(mul(kl, mask)));
            }
        }

        Tensor td_mean = scale(td_acc, bd.filled_count > 0 ? 1.0 / bd.filled_count : 0.0);
        Tensor kl_mean = scale(kl_acc, bd.pair_count > 0 ? 1.0 / bd.pair_count : 0.0);
        Tensor total = td_mean;
        Tensor spread;
        if (dims_.has_repr) {
            spread = repr_spread_penalty(x_phi);
            if (dims_.lambda_repr_eff != 0.0) {
                total = add(total, scale(spread, dims_.lambda_repr_eff));
            }
        }
        if (dims_.lambda_kl_eff != 0.0) {
            total = add(total, scale(kl_mean, dims_.lambda_kl_eff));
        }
        if (rep) {
            rep->td = td_mean.scalar();
            rep->spread = spread.valid() ? spread.scalar() : 0.0;
            rep->temporal = kl_mean.scalar();
            rep->total = total.scalar();
        }
        return total;
    }

    RunConfig cfg_;
    EnvSpec env_;
    ModelDims dims_;
    ParamStore params_;
    ParamStore target_;
    std::unique_ptr<RmsProp> opt_;
    Rng train_noise_rng_;
    Rng target_pick_rng_;
};

}  // namespace ldsa
