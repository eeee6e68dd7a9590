#pragma once

// Differentiable operations over nutri::Tensor.
//
// Broadcasting is limited to the leading batch axis: for binary
// element-wise ops the second operand may either match the first exactly
// or match it with the batch axis dropped.

#include <vector>

#include "nutri/tensor.hpp"

namespace nutri {

// Element-wise.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double a, double b = 0.0);  // a*x + b
// alpha*x + beta with alpha, beta single-element tensors.
Tensor scale_shift(const Tensor& x, const Tensor& alpha, const Tensor& beta);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor abs(const Tensor& x);

// Reductions.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean over axis 0: [N, rest...] -> [rest...].
Tensor mean_batch(const Tensor& x);
// Subtracts each sample's mean over all non-batch elements.
Tensor center_per_sample(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// Row-wise over the last axis of a rank-2 tensor. Throws
// DegenerateInputError on a zero-norm row.
Tensor l2_normalize(const Tensor& x);
Tensor softmax_rows(const Tensor& x);      // last axis, any rank >= 1
Tensor log_softmax_rows(const Tensor& x);  // last axis, any rank >= 1
Tensor diagonal(const Tensor& x);          // [n, n] -> [n]

// [m, k] x [k, n] with optional transposes of either operand.
Tensor matmul(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);
// Batched: [N, m, k] x [N, k, n].
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Concatenate along `axis`; every other extent must agree.
Tensor concat(const std::vector<Tensor>& parts, int axis);
inline Tensor concat_channels(const std::vector<Tensor>& parts) { return concat(parts, 1); }

// Cross-correlation. x [N, C, H, W], weight [O, C, k, k], bias [O] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, int stride = 1, int padding = 0);

// Per-position linear map over axis 1: x [N, C, rest...], weight [O, C],
// bias [O] or undefined -> [N, O, rest...]. Rank-2 input is a plain
// fully connected layer.
Tensor channel_linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// x [N, C, rest...] times s [N, C], broadcast over rest.
Tensor scale_channels(const Tensor& x, const Tensor& s);

// [N, C, rest...] -> [N, C].
Tensor global_avg_pool(const Tensor& x);

// [N, C, H, W] -> [N, C, out_h, out_w]; bin i spans
// [floor(i*H/out_h), ceil((i+1)*H/out_h)).
Tensor adaptive_avg_pool(const Tensor& x, int out_h, int out_w);

}  // namespace nutri
