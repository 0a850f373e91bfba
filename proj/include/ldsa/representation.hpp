#pragma once

// Subtask representations. Each subtask is identified by a one-hot vector and
// mapped through a two-layer encoder to a point in representation space; a
// spread penalty pushes the points apart so subtasks stay distinguishable.

#include <vector>

#include "ldsa/params.hpp"
#include "ldsa/tensor.hpp"

namespace ldsa {

// Encodes all n_subtasks identity one-hots at once: rows of the result are the
// subtask representations, shape [n_subtasks, repr_dim].
// Blocks: repr/w1 [k, hidden], repr/b1, repr/w2 [hidden, m], repr/b2.
inline Tensor subtask_representations(Tape& tape, const BoundParams& params, int n_subtasks) {
    std::vector<double> eye(static_cast<std::size_t>(n_subtasks) * n_subtasks, 0.0);
    for (int i = 0; i < n_subtasks; ++i) eye[static_cast<std::size_t>(i) * n_subtasks + i] = 1.0;
    Tensor onehots = tape.leaf({n_subtasks, n_subtasks}, std::move(eye));
    Tensor hidden = tanh(affine(onehots, params["repr/w1"], params["repr/b1"]));
    return tanh(affine(hidden, params["repr/w2"], params["repr/b2"]));
}

// Spread penalty: negated sum of squared pairwise distances over ordered
// pairs, so the value is always <= 0 and decreases as rows separate.
inline Tensor repr_spread_penalty(const Tensor& reprs) {
    detail::require_rank(reprs, 2, "repr_spread_penalty");
    const int k = reprs.shape()[0];
    Tape& tape = *reprs.tape();
    Tensor acc = tape.zeros({1});
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            Tensor d = sub(slice_row(reprs, i), slice_row(reprs, j));
            acc = add(acc, sum_all(mul(d, d)));
        }
    }
    // each unordered pair counts twice in the ordered sum
    return scale(acc, -2.0);
}

}  // namespace ldsa
