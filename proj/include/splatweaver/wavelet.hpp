#pragma once

#include "splatweaver/nn.hpp"

namespace splat {

// Single-level orthonormal Haar decomposition. Each band is ceil(H/2) x
// ceil(W/2) per channel; odd inputs are edge-replicated to even size and the
// original extent is kept so idwt2 can crop. All wavelet outputs are free
// tensors: the prior is a fixed signal, not a learned pathway.
struct WaveletBands {
  Tensor ll, lh, hl, hh;  // lh: high-pass in y, hl: high-pass in x
  int src_h = 0, src_w = 0;
};

WaveletBands dwt2(const Tensor& image);   // [H,W,C]
Tensor idwt2(const WaveletBands& bands);  // -> [src_h, src_w, C]

// Per-pixel high-frequency energy sqrt(LH^2+HL^2+HH^2) of the luminance,
// upsampled x2 nearest back to source resolution. Detached. [H,W].
Tensor hf_energy(const Tensor& image);

// Luminance 0.299 R + 0.587 G + 0.114 B; single-channel images pass through.
Tensor luminance(const Tensor& image);

// Frequency prior guidance: high-frequency bands drive a sigmoid gate on the
// pixel features, plus a residual conv path.
//   out = F (.) sigmoid(psi(LH, HL, HH)) + Conv(F)
// psi: per-band 1x1 conv -> ReLU -> 3x3 conv, summed over bands, x2 nearest
// upsample, 3x3 conv to the feature width. Band inputs stay detached.
struct FrequencyGuidance {
  int feat_dim = 0;
  bool shared_branches = false;  // one psi branch reused for all three bands

  std::vector<Conv2dLayer> band_lin;   // 1x1, C -> D/2
  std::vector<Conv2dLayer> band_conv;  // 3x3, D/2 -> D/2
  Conv2dLayer merge_conv;              // 3x3, D/2 -> D (after upsample)
  Conv2dLayer res_conv;                // 3x3, D -> D

  FrequencyGuidance() = default;
  FrequencyGuidance(const std::string& prefix, int image_channels, int feat_dim,
                    bool shared_branches, Rng& rng);

  // features: [H,W,D] from the encoder; bands from the same view's image.
  Tensor forward(Tape* tape, const Tensor& features,
                 const WaveletBands& bands) const;
  // The gate alone, in (0,1); exposed for inspection and property tests.
  Tensor gate(Tape* tape, const WaveletBands& bands, int out_h, int out_w) const;
  void collect(ParamRefs& out);
};

}  // namespace splat
