#pragma once

#include "splatweaver/nn.hpp"

namespace splat {

// Small conv encoder producing full-resolution per-pixel features: two
// stride-2 downsamples, two nearest-upsample stages with skip connections.
// No cross-view interaction; each view is encoded independently.
struct Encoder {
  int feat_dim = 0;
  Conv2dLayer c0, c1;    // full res, 3 -> D -> D
  Conv2dLayer d1, c2;    // stride 2, D -> Dm -> Dm
  Conv2dLayer d2, c3;    // stride 2, Dm -> Db -> Db
  Conv2dLayer u1c, c4;   // up + conv Db -> Dm (skip c2), Dm -> Dm
  Conv2dLayer u2c, c5;   // up + conv Dm -> D (skip c1), D -> D

  Encoder() = default;
  Encoder(const std::string& prefix, int feat_dim, Rng& rng);
  Tensor forward(Tape* tape, const Tensor& image) const;  // [H,W,3] -> [H,W,D]
  void collect(ParamRefs& out);
};

}  // namespace splat
