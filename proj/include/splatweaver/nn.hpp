#pragma once

#include <string>

#include "splatweaver/adam.hpp"
#include "splatweaver/ops.hpp"

namespace splat {

Tensor xavier_init(Shape shape, int fan_in, int fan_out, Rng& rng);

struct Linear {
  Param w, b;  // w: [in, out]

  Linear() = default;
  Linear(const std::string& prefix, int in, int out, Rng& rng);
  Tensor forward(Tape* tape, const Tensor& x) const;  // x: [n, in]
  void collect(ParamRefs& out);
  int in_dim() const { return w.t.shape[0]; }
  int out_dim() const { return w.t.shape[1]; }
};

// linear -> ReLU -> linear
struct Mlp2 {
  Linear l1, l2;

  Mlp2() = default;
  Mlp2(const std::string& prefix, int in, int hidden, int out, Rng& rng);
  Tensor forward(Tape* tape, const Tensor& x) const;
  void collect(ParamRefs& out);
};

struct Conv2dLayer {
  Param w, b;  // w: [kh, kw, Cin, Cout]
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(const std::string& prefix, int kh, int kw, int cin, int cout,
              int stride, int pad, Rng& rng);
  Tensor forward(Tape* tape, const Tensor& x) const;  // x: [H, W, Cin]
  void collect(ParamRefs& out);
};

}  // namespace splat
