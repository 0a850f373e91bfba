#pragma once

// Per-agent utilities. A recurrent history encoder produces the agent's hidden
// state; a hypernetwork decodes each subtask representation into the weights
// of that subtask's Q head; the per-subtask action values are combined with
// the assignment weights (a hard one-hot after sampling, soft probabilities
// under the MixWeights variant).

#include <string>
#include <vector>

#include "ldsa/params.hpp"
#include "ldsa/tensor.hpp"

namespace ldsa {

// FC + ReLU into a GRU; the new recurrent state is the history summary.
// Blocks: agent/fc_in_w [in, H], agent/fc_in_b, agent/gru_*.
inline Tensor history_step(const BoundParams& params, const Tensor& x, const Tensor& h) {
    Tensor fc = relu(affine(x, params["agent/fc_in_w"], params["agent/fc_in_b"]));
    return gru_step(fc, h, params["agent/gru_wx"], params["agent/gru_wh"], params["agent/gru_bx"],
                    params["agent/gru_bh"]);
}

struct SubtaskHead {
    Tensor w;  // [H, n_actions]
    Tensor b;  // [n_actions]
};

// Decoded heads: one affine map from each subtask representation to the full
// parameter vector of that subtask's Q head.
// Blocks: dec/w [m, H*n_actions + n_actions], dec/b.
inline std::vector<SubtaskHead> decode_heads(const BoundParams& params, const Tensor& subtask_reprs,
                                             int rnn_hidden, int n_actions) {
    const int k = subtask_reprs.shape()[0];
    Tensor flat = affine(subtask_reprs, params["dec/w"], params["dec/b"]);  // [k, H*nA + nA]
    std::vector<SubtaskHead> heads;
    heads.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        Tensor row = slice_row(flat, i);
        SubtaskHead h;
        h.w = reshape(slice_1d(row, 0, rnn_hidden * n_actions), {rnn_hidden, n_actions});
        h.b = slice_1d(row, rnn_hidden * n_actions, n_actions);
        heads.push_back(h);
    }
    return heads;
}

// Free-parameter heads for the NoDecoder and SharedBaseline variants.
// Blocks: head/w_<i> [H, n_actions], head/b_<i>.
inline std::vector<SubtaskHead> free_heads(const BoundParams& params, int k) {
    std::vector<SubtaskHead> heads;
    heads.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        heads.push_back(SubtaskHead{params["head/w_" + std::to_string(i)], params["head/b_" + std::to_string(i)]});
    }
    return heads;
}

// Per-subtask action values for R agent-rows: Q_i = h_tau W_i + b_i.
inline std::vector<Tensor> per_subtask_q(const Tensor& h_tau, const std::vector<SubtaskHead>& heads) {
    std::vector<Tensor> qs;
    qs.reserve(heads.size());
    for (const auto& head : heads) qs.push_back(affine(h_tau, head.w, head.b));
    return qs;
}

// Weighted combination over subtasks: sum_i weights[:, i] * Q_i. When
// expect_hard is set the weight rows must be exact one-hots (the contract
// after straight-through sampling); anything else is a logic error.
inline Tensor combine_q(const std::vector<Tensor>& qs, const Tensor& weights, bool expect_hard) {
    if (qs.empty()) throw ContractViolation("combine_q: no subtask heads");
    detail::require_rank(weights, 2, "combine_q");
    const int r = weights.shape()[0], k = weights.shape()[1];
    if (k != static_cast<int>(qs.size())) {
        throw ShapeError("combine_q: " + std::to_string(qs.size()) + " heads but weights " +
                         shape_str(weights.shape()));
    }
    if (expect_hard) {
        auto v = weights.values();
        for (int i = 0; i < r; ++i) {
            int ones = 0;
            for (int j = 0; j < k; ++j) {
                double x = v[static_cast<std::size_t>(i) * k + j];
                if (x == 1.0) ++ones;
                else if (x != 0.0) {
                    throw ContractViolation("combine_q: hard weights row " + std::to_string(i) +
                                            " is not one-hot");
                }
            }
            if (ones != 1) {
                throw ContractViolation("combine_q: hard weights row " + std::to_string(i) + " is not one-hot");
            }
        }
    }
    Tensor acc = scale_rows(qs[0], column(weights, 0));
    for (int i = 1; i < k; ++i) acc = add(acc, scale_rows(qs[static_cast<std::size_t>(i)], column(weights, i)));
    return acc;
}

// Greedy action over available ones; availability mask has 0/1 entries.
inline int greedy_action(std::span<const double> q_row, std::span<const std::uint8_t> avail) {
    int best = -1;
    double best_q = 0.0;
    for (std::size_t a = 0; a < q_row.size(); ++a) {
        if (!avail[a]) continue;
        if (best < 0 || q_row[a] > best_q) {
            best = static_cast<int>(a);
            best_q = q_row[a];
        }
    }
    if (best < 0) throw ContractViolation("greedy_action: no available action");
    return best;
}

}  // namespace ldsa
