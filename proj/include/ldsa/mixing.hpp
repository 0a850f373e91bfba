#pragma once

// Monotonic value mixing. Per-agent chosen-action values are combined into a
// team value through a state-conditioned hypernetwork whose mixing weights
// pass through abs(), so the team value is non-decreasing in every agent
// value and the joint greedy action decomposes into per-agent greedy actions.

#include "ldsa/params.hpp"
#include "ldsa/tensor.hpp"

namespace ldsa {

// q_agents [B, A], state [B, S] -> team value [B].
// Blocks: mix/hw1_w [S, A*E], mix/hw1_b, mix/hb1_w [S, E], mix/hb1_b,
// mix/hw2_w [S, E], mix/hw2_b, mix/v1_w [S, E], mix/v1_b, mix/v2_w [E, 1],
// mix/v2_b.
inline Tensor mix_team_value(const BoundParams& params, const Tensor& q_agents, const Tensor& state,
                             int embed_dim) {
    detail::require_rank(q_agents, 2, "mix_team_value");
    detail::require_rank(state, 2, "mix_team_value");
    const int b = q_agents.shape()[0], a = q_agents.shape()[1];
    if (state.shape()[0] != b) {
        throw ShapeError("mix_team_value: batch sizes disagree: " + shape_str(q_agents.shape()) + " vs " +
                         shape_str(state.shape()));
    }
    const int e = embed_dim;
    Tensor w1 = abs(affine(state, params["mix/hw1_w"], params["mix/hw1_b"]));  // [B, A*E]
    Tensor b1 = affine(state, params["mix/hb1_w"], params["mix/hb1_b"]);      // [B, E]
    Tensor hidden = elu(add(bmm(reshape(q_agents, {b, 1, a}), reshape(w1, {b, a, e})), reshape(b1, {b, 1, e})));
    Tensor w2 = abs(affine(state, params["mix/hw2_w"], params["mix/hw2_b"]));  // [B, E]
    Tensor out = bmm(hidden, reshape(w2, {b, e, 1}));                          // [B, 1, 1]
    Tensor v = affine(relu(affine(state, params["mix/v1_w"], params["mix/v1_b"])), params["mix/v2_w"],
                      params["mix/v2_b"]);  // [B, 1]
    return reshape(add(reshape(out, {b, 1}), v), {b});
}

}  // namespace ldsa
