#pragma once

#include <vector>

#include "splatweaver/tensor.hpp"

// Differentiable op suite. Every op computes its forward value and, when any
// input is tracked, records a local-gradient closure. Broadcasting is limited
// to scalars and leading dimensions (the smaller shape must be a suffix of
// the larger); anything else goes through explicit broadcast().

namespace splat {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
Tensor squared_difference(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, real c);
Tensor add_scalar(const Tensor& x, real c);
Tensor neg(const Tensor& x);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor clamp(const Tensor& x, real lo, real hi);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                // 2-D

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor max_all(const Tensor& x);
Tensor sum_axis(const Tensor& x, int axis);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);

Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor reshape(const Tensor& x, Shape shape);
// Target rank >= input rank; input is right-aligned and each input dim must
// equal the target dim or be 1.
Tensor broadcast(const Tensor& x, Shape target);

// x: [H,W,Cin], w: [kh,kw,Cin,Cout], optional bias [Cout]. Zero padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int pad);
Tensor upsample2x_nearest(const Tensor& x);  // [H,W,C] -> [2H,2W,C]
Tensor avgpool2x2(const Tensor& x);          // even [H,W,C] -> [H/2,W/2,C]

Tensor l2_normalize(const Tensor& x, int axis);

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
// out[i] = x[i, idx[i]] for x of shape [n, m].
Tensor gather_cols(const Tensor& x, const std::vector<int>& idx);

// Cuts the gradient: returns a free tensor sharing x's data.
Tensor detach(const Tensor& x);

// Straight-through estimator: forward takes `values` exactly, gradient flows
// to x unchanged (identity Jacobian). Sizes must match.
Tensor st_override(const Tensor& x, std::vector<real> values);

}  // namespace splat
