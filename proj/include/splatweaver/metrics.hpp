#pragma once

#include "splatweaver/tensor.hpp"

namespace splat {

// 10 log10(1 / MSE) over all elements, capped at 99 dB for identical images.
real psnr(const Tensor& a, const Tensor& b);

// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), standard constants
// C1 = 0.01^2, C2 = 0.03^2, data range 1, valid windows only, averaged over
// channels. Bit-symmetric in its arguments.
real ssim(const Tensor& a, const Tensor& b);

}  // namespace splat
