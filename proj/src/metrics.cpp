#include "splatweaver/metrics.hpp"

#include <cmath>

namespace splat {

real psnr(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("psnr: shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  int64_t n = a.numel();
  if (n == 0) throw ContractError("psnr: empty images");
  real mse = 0;
  for (int64_t i = 0; i < n; ++i) {
    real d = a.ptr()[i] - b.ptr()[i];
    mse += d * d;
  }
  mse /= real(n);
  if (mse <= 0) return real(99);
  real v = real(10) * std::log10(real(1) / mse);
  return std::min(v, real(99));
}

real ssim(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError("ssim: shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  if (a.shape.size() != 3 && a.shape.size() != 2)
    throw ShapeError("ssim: expected [H,W] or [H,W,C], got " + shape_str(a.shape));
  int h = a.shape[0], w = a.shape[1];
  int c = a.shape.size() == 3 ? a.shape[2] : 1;

  int win = 11;
  if (win > h || win > w) {
    win = std::min(h, w);
    if (win % 2 == 0) win -= 1;
    if (win < 1) throw ContractError("ssim: image smaller than any window");
  }
  int half = win / 2;
  std::vector<real> g(static_cast<size_t>(win));
  real sigma = real(1.5), gsum = 0;
  for (int i = 0; i < win; ++i) {
    real d = real(i - half);
    g[size_t(i)] = std::exp(-d * d / (2 * sigma * sigma));
    gsum += g[size_t(i)];
  }
  for (auto& v : g) v /= gsum;

  constexpr real c1 = real(0.01 * 0.01);
  constexpr real c2 = real(0.03 * 0.03);
  real total = 0;
  int64_t count = 0;
  for (int ch = 0; ch < c; ++ch) {
    for (int y = half; y < h - half; ++y) {
      for (int x = half; x < w - half; ++x) {
        real ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = -half; dy <= half; ++dy) {
          for (int dx = -half; dx <= half; ++dx) {
            real wgt = g[size_t(dy + half)] * g[size_t(dx + half)];
            real va = a.ptr()[(int64_t(y + dy) * w + (x + dx)) * c + ch];
            real vb = b.ptr()[(int64_t(y + dy) * w + (x + dx)) * c + ch];
            ma += wgt * va;
            mb += wgt * vb;
            saa += wgt * va * va;
            sbb += wgt * vb * vb;
            sab += wgt * va * vb;
          }
        }
        real var_a = saa - ma * ma;
        real var_b = sbb - mb * mb;
        real cov = sab - ma * mb;
        real num = (2 * ma * mb + c1) * (2 * cov + c2);
        real den = (ma * ma + mb * mb + c1) * (var_a + var_b + c2);
        total += num / den;
        count += 1;
      }
    }
  }
  return total / real(count);
}

}  // namespace splat
