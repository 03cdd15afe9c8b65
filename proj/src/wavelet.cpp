#include "splatweaver/wavelet.hpp"

#include <cmath>

namespace splat {

namespace {

void check_image(const char* op, const Tensor& t) {
  if (t.shape.size() != 3)
    throw ShapeError(strformat("%s: expected [H,W,C], got %s", op,
                               shape_str(t.shape).c_str()));
  if (t.numel() == 0) throw ContractError(strformat("%s: empty image", op));
}

// Edge-replicates to even dimensions. Returns the input untouched when
// already even.
Tensor pad_even(const Tensor& img) {
  int H = img.shape[0], W = img.shape[1], C = img.shape[2];
  int He = H + (H % 2), We = W + (W % 2);
  if (He == H && We == W) return img;
  Tensor out = zeros({He, We, C});
  const real* src = img.ptr();
  real* dst = out.ptr();
  for (int y = 0; y < He; ++y) {
    int sy = std::min(y, H - 1);
    for (int x = 0; x < We; ++x) {
      int sx = std::min(x, W - 1);
      std::copy_n(src + (int64_t(sy) * W + sx) * C, C,
                  dst + (int64_t(y) * We + x) * C);
    }
  }
  return out;
}

}  // namespace

WaveletBands dwt2(const Tensor& image) {
  check_image("dwt2", image);
  if (image.shape[0] < 2 || image.shape[1] < 2)
    throw ContractError(strformat("dwt2: image must be at least 2x2, got %s",
                                  shape_str(image.shape).c_str()));
  WaveletBands out;
  out.src_h = image.shape[0];
  out.src_w = image.shape[1];
  Tensor img = pad_even(image);
  int H = img.shape[0], W = img.shape[1], C = img.shape[2];
  int H2 = H / 2, W2 = W / 2;
  out.ll = zeros({H2, W2, C});
  out.lh = zeros({H2, W2, C});
  out.hl = zeros({H2, W2, C});
  out.hh = zeros({H2, W2, C});
  const real* src = img.ptr();
  for (int by = 0; by < H2; ++by) {
    for (int bx = 0; bx < W2; ++bx) {
      for (int c = 0; c < C; ++c) {
        real a = src[(int64_t(2 * by) * W + 2 * bx) * C + c];
        real b = src[(int64_t(2 * by) * W + 2 * bx + 1) * C + c];
        real d = src[(int64_t(2 * by + 1) * W + 2 * bx) * C + c];
        real e = src[(int64_t(2 * by + 1) * W + 2 * bx + 1) * C + c];
        int64_t o = (int64_t(by) * W2 + bx) * C + c;
        out.ll.ptr()[o] = (a + b + d + e) * real(0.5);
        out.hl.ptr()[o] = (a - b + d - e) * real(0.5);
        out.lh.ptr()[o] = (a + b - d - e) * real(0.5);
        out.hh.ptr()[o] = (a - b - d + e) * real(0.5);
      }
    }
  }
  return out;
}

Tensor idwt2(const WaveletBands& bands) {
  const Tensor& ll = bands.ll;
  if (ll.shape.size() != 3)
    throw ShapeError("idwt2: bands must be [H,W,C], got " + shape_str(ll.shape));
  for (const Tensor* b : {&bands.lh, &bands.hl, &bands.hh})
    if (b->shape != ll.shape)
      throw ShapeError("idwt2: band shape mismatch " + shape_str(b->shape) +
                       " vs " + shape_str(ll.shape));
  int H2 = ll.shape[0], W2 = ll.shape[1], C = ll.shape[2];
  int H = bands.src_h > 0 ? bands.src_h : 2 * H2;
  int W = bands.src_w > 0 ? bands.src_w : 2 * W2;
  Tensor out = zeros({H, W, C});
  real* dst = out.ptr();
  for (int by = 0; by < H2; ++by) {
    for (int bx = 0; bx < W2; ++bx) {
      for (int c = 0; c < C; ++c) {
        int64_t o = (int64_t(by) * W2 + bx) * C + c;
        real vll = bands.ll.ptr()[o];
        real vhl = bands.hl.ptr()[o];
        real vlh = bands.lh.ptr()[o];
        real vhh = bands.hh.ptr()[o];
        real a = (vll + vhl + vlh + vhh) * real(0.5);
        real b = (vll - vhl + vlh - vhh) * real(0.5);
        real d = (vll + vhl - vlh - vhh) * real(0.5);
        real e = (vll - vhl - vlh + vhh) * real(0.5);
        int y0 = 2 * by, x0 = 2 * bx;
        if (y0 < H && x0 < W) dst[(int64_t(y0) * W + x0) * C + c] = a;
        if (y0 < H && x0 + 1 < W) dst[(int64_t(y0) * W + x0 + 1) * C + c] = b;
        if (y0 + 1 < H && x0 < W) dst[(int64_t(y0 + 1) * W + x0) * C + c] = d;
        if (y0 + 1 < H && x0 + 1 < W)
          dst[(int64_t(y0 + 1) * W + x0 + 1) * C + c] = e;
      }
    }
  }
  return out;
}

Tensor luminance(const Tensor& image) {
  check_image("luminance", image);
  int H = image.shape[0], W = image.shape[1], C = image.shape[2];
  if (C == 1) return constant({H, W, 1}, *image.data);
  if (C != 3)
    throw ShapeError(strformat("luminance: expected 1 or 3 channels, got %s",
                               shape_str(image.shape).c_str()));
  Tensor out = zeros({H, W, 1});
  const real* src = image.ptr();
  real* dst = out.ptr();
  for (int64_t p = 0; p < int64_t(H) * W; ++p)
    dst[p] = real(0.299) * src[3 * p] + real(0.587) * src[3 * p + 1] +
             real(0.114) * src[3 * p + 2];
  return out;
}

Tensor hf_energy(const Tensor& image) {
  check_image("hf_energy", image);
  WaveletBands bands = dwt2(luminance(detach(image)));
  int H2 = bands.ll.shape[0], W2 = bands.ll.shape[1];
  Tensor e2 = zeros({H2, W2});
  for (int64_t i = 0; i < e2.numel(); ++i) {
    real lh = bands.lh.ptr()[i], hl = bands.hl.ptr()[i], hh = bands.hh.ptr()[i];
    e2.ptr()[i] = std::sqrt(lh * lh + hl * hl + hh * hh);
  }
  int H = image.shape[0], W = image.shape[1];
  Tensor out = zeros({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      out.ptr()[int64_t(y) * W + x] = e2.ptr()[int64_t(y / 2) * W2 + x / 2];
  return out;
}

FrequencyGuidance::FrequencyGuidance(const std::string& prefix,
                                     int image_channels, int feat_dim,
                                     bool shared_branches, Rng& rng)
    : feat_dim(feat_dim), shared_branches(shared_branches) {
  int half = std::max(1, feat_dim / 2);
  int branches = shared_branches ? 1 : 3;
  for (int i = 0; i < branches; ++i) {
    std::string bp = prefix + ".band" + std::to_string(i);
    band_lin.emplace_back(bp + ".lin", 1, 1, image_channels, half, 1, 0, rng);
    band_conv.emplace_back(bp + ".conv", 3, 3, half, half, 1, 1, rng);
  }
  merge_conv = Conv2dLayer(prefix + ".merge", 3, 3, half, feat_dim, 1, 1, rng);
  res_conv = Conv2dLayer(prefix + ".res", 3, 3, feat_dim, feat_dim, 1, 1, rng);
}

Tensor FrequencyGuidance::gate(Tape* tape, const WaveletBands& bands, int out_h,
                               int out_w) const {
  const Tensor* hf[3] = {&bands.lh, &bands.hl, &bands.hh};
  Tensor merged;
  for (int i = 0; i < 3; ++i) {
    const Conv2dLayer& lin = band_lin[shared_branches ? 0 : size_t(i)];
    const Conv2dLayer& cv = band_conv[shared_branches ? 0 : size_t(i)];
    Tensor x = cv.forward(tape, relu(lin.forward(tape, detach(*hf[i]))));
    merged = i == 0 ? x : add(merged, x);
  }
  Tensor up = upsample2x_nearest(merged);
  if (up.shape[0] != out_h || up.shape[1] != out_w) {
    if (up.shape[0] < out_h || up.shape[1] < out_w)
      throw ShapeError(strformat(
          "frequency_prior_guidance: gate %s cannot cover features [%d,%d]",
          shape_str(up.shape).c_str(), out_h, out_w));
    up = slice(slice(up, 0, 0, out_h), 1, 0, out_w);
  }
  return sigmoid(merge_conv.forward(tape, up));
}

Tensor FrequencyGuidance::forward(Tape* tape, const Tensor& features,
                                  const WaveletBands& bands) const {
  if (features.shape.size() != 3 || features.shape[2] != feat_dim)
    throw ShapeError(strformat("frequency_prior_guidance: features %s, want depth %d",
                               shape_str(features.shape).c_str(), feat_dim));
  int H = features.shape[0], W = features.shape[1];
  int bh = bands.ll.shape[0], bw = bands.ll.shape[1];
  if (2 * bh < H || 2 * bw < W || bh > H || bw > W)
    throw ShapeError(strformat(
        "frequency_prior_guidance: bands %s do not match features %s",
        shape_str(bands.ll.shape).c_str(), shape_str(features.shape).c_str()));
  Tensor g = gate(tape, bands, H, W);
  return add(mul(features, g), res_conv.forward(tape, features));
}

void FrequencyGuidance::collect(ParamRefs& out) {
  for (auto& l : band_lin) l.collect(out);
  for (auto& c : band_conv) c.collect(out);
  merge_conv.collect(out);
  res_conv.collect(out);
}

}  // namespace splat
