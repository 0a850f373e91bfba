#pragma once

// Subtask selection. A recurrent ability encoder summarizes each agent's
// action-observation history into a vector in representation space; assignment
// probabilities come from softmaxed dot products with the subtask
// representations (or a direct affine map under the DirectProb variant).
// Sampling is straight-through Gumbel-Softmax with a hard one-hot forward.

#include <span>
#include <vector>

#include "ldsa/params.hpp"
#include "ldsa/tensor.hpp"

namespace ldsa {

struct SelectionStep {
    Tensor h_next;  // recurrent state after this step [R, H]
    Tensor x_tau;   // ability representation [R, m]
    Tensor probs;   // assignment probabilities [R, k]
};

// One selection step for R agent-rows.
// Blocks: sel/fc_in_w [in, H], sel/fc_in_b, sel/gru_wx, sel/gru_wh,
// sel/gru_bx, sel/gru_bh, sel/fc_out_w [H, m], sel/fc_out_b, and for the
// DirectProb variant sel/dp_w [m, k], sel/dp_b.
inline SelectionStep selection_step(const BoundParams& params, const Tensor& x, const Tensor& h,
                                    const Tensor& subtask_reprs_t, bool direct_prob) {
    SelectionStep out;
    Tensor fc = relu(affine(x, params["sel/fc_in_w"], params["sel/fc_in_b"]));
    out.h_next = gru_step(fc, h, params["sel/gru_wx"], params["sel/gru_wh"], params["sel/gru_bx"],
                          params["sel/gru_bh"]);
    out.x_tau = affine(out.h_next, params["sel/fc_out_w"], params["sel/fc_out_b"]);
    Tensor logits = direct_prob ? affine(out.x_tau, params["sel/dp_w"], params["sel/dp_b"])
                                : matmul(out.x_tau, subtask_reprs_t);
    out.probs = softmax_rows(logits);
    return out;
}

// Constant one-hot rows (no gradient path), used for greedy evaluation,
// target-side selection, and the random-selection variant.
inline Tensor onehot_rows(Tape& tape, int rows, int cols, std::span<const int> picks) {
    if (static_cast<int>(picks.size()) != rows) {
        throw ShapeError("onehot_rows: " + std::to_string(picks.size()) + " picks for " + std::to_string(rows) +
                         " rows");
    }
    std::vector<double> v(static_cast<std::size_t>(rows) * cols, 0.0);
    for (int i = 0; i < rows; ++i) {
        int p = picks[static_cast<std::size_t>(i)];
        if (p < 0 || p >= cols) {
            throw ContractViolation("onehot_rows: pick " + std::to_string(p) + " out of range for " +
                                    std::to_string(cols) + " columns");
        }
        v[static_cast<std::size_t>(i) * cols + p] = 1.0;
    }
    return tape.leaf({rows, cols}, std::move(v));
}

inline std::vector<int> argmax_rows(const Tensor& mat) {
    detail::require_rank(mat, 2, "argmax_rows");
    const int r = mat.shape()[0], c = mat.shape()[1];
    std::vector<int> out(static_cast<std::size_t>(r), 0);
    auto v = mat.values();
    for (int i = 0; i < r; ++i) {
        double best = v[static_cast<std::size_t>(i) * c];
        for (int j = 1; j < c; ++j) {
            double x = v[static_cast<std::size_t>(i) * c + j];
            if (x > best) {
                best = x;
                out[static_cast<std::size_t>(i)] = j;
            }
        }
    }
    return out;
}

// Row-wise KL divergence sum_j p log(p/q) with probabilities floored away
// from zero; returns a [R] tensor of per-row divergences.
inline Tensor kl_rows(const Tensor& p, const Tensor& q) {
    detail::require_same_shape(p, q, "kl_rows");
    Tensor lp = log(clamp_min(p, 1e-10));
    Tensor lq = log(clamp_min(q, 1e-10));
    return row_sums(mul(p, sub(lp, lq)));
}

}  // namespace ldsa
