#pragma once

// Differentiable operations over graph variables. Each op computes its forward
// value eagerly and records an analytic backward.

#include <cstddef>
#include <vector>

#include "cadgd/graph.hpp"

namespace cadgd {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);
Var add_scalar(Var x, double s);

// x [..., c] * s [..., 1]: broadcast a per-position scalar over channels.
Var mul_channels(Var x, Var s);
// x [..., c] * v (c elements, any shape): broadcast a channel vector over positions.
Var mul_positions(Var x, Var v);

Var sigmoid(Var x);
Var gelu(Var x);
Var relu(Var x);
Var log(Var x);
Var abs(Var x);
Var square(Var x);
Var clamp(Var x, double lo, double hi);

// Scalar reductions, result shape [1].
Var sum(Var x);
Var mean(Var x);

// [..., c] -> [..., 1]
Var max_last(Var x);
Var mean_last(Var x);
// [..., c] -> [1, c]
Var max_positions(Var x);
Var mean_positions(Var x);

Var matmul(Var a, Var b);
Var transpose(Var a);
Var linear(Var x, Var weight, Var bias);
Var linear(Var x, Var weight);
Var conv2d(Var x, Var weight, Var bias, std::size_t padding);
Var bilinear_upsample(Var x, int factor);
Var softmax(Var x);  // over the last axis
Var layer_norm(Var x, Var gamma, Var beta);

Var reshape(Var x, Shape shape);
Var concat_last(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);  // 2-D parts along axis 0
Var slice_last(Var x, std::size_t begin, std::size_t end);
Var gather_rows(Var x, const std::vector<std::size_t>& rows);  // 2-D x
// Columns j with mask[j] == false are replaced by `fill` and pass no gradient.
Var mask_columns(Var x, const std::vector<bool>& keep, double fill);

struct AttentionWeights {
  Var q_weight, q_bias, k_weight, k_bias, v_weight, v_bias, out_weight, out_bias;
};

// Scaled dot-product multi-head attention with input and output projections.
// q [nq,c], k and v [nk,c]; c must be divisible by heads. A non-empty
// `score_bias` [nq,nk] is added to every head's scaled scores before softmax.
Var multi_head_attention(Var q, Var k, Var v, std::size_t heads,
                         const AttentionWeights& w, const Tensor& score_bias = {});

}  // namespace cadgd
