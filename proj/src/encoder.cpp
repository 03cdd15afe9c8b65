#include "splatweaver/encoder.hpp"

namespace splat {

Encoder::Encoder(const std::string& prefix, int feat_dim, Rng& rng)
    : feat_dim(feat_dim) {
  int dm = feat_dim + feat_dim / 2;
  int db = 2 * feat_dim;
  c0 = Conv2dLayer(prefix + ".c0", 3, 3, 3, feat_dim, 1, 1, rng);
  c1 = Conv2dLayer(prefix + ".c1", 3, 3, feat_dim, feat_dim, 1, 1, rng);
  d1 = Conv2dLayer(prefix + ".d1", 3, 3, feat_dim, dm, 2, 1, rng);
  c2 = Conv2dLayer(prefix + ".c2", 3, 3, dm, dm, 1, 1, rng);
  d2 = Conv2dLayer(prefix + ".d2", 3, 3, dm, db, 2, 1, rng);
  c3 = Conv2dLayer(prefix + ".c3", 3, 3, db, db, 1, 1, rng);
  u1c = Conv2dLayer(prefix + ".u1c", 3, 3, db, dm, 1, 1, rng);
  c4 = Conv2dLayer(prefix + ".c4", 3, 3, dm, dm, 1, 1, rng);
  u2c = Conv2dLayer(prefix + ".u2c", 3, 3, dm, feat_dim, 1, 1, rng);
  c5 = Conv2dLayer(prefix + ".c5", 3, 3, feat_dim, feat_dim, 1, 1, rng);
}

namespace {
Tensor crop_to(const Tensor& x, int h, int w) {
  Tensor out = x;
  if (out.shape[0] != h) out = slice(out, 0, 0, h);
  if (out.shape[1] != w) out = slice(out, 1, 0, w);
  return out;
}
}  // namespace

Tensor Encoder::forward(Tape* tape, const Tensor& image) const {
  if (image.shape.size() != 3 || image.shape[2] != 3)
    throw ShapeError("encoder: expected [H,W,3] image, got " +
                     shape_str(image.shape));
  Tensor x0 = relu(c0.forward(tape, image));
  Tensor x1 = relu(c1.forward(tape, x0));
  Tensor y1 = relu(d1.forward(tape, x1));
  Tensor y2 = relu(c2.forward(tape, y1));
  Tensor z1 = relu(d2.forward(tape, y2));
  Tensor z2 = relu(c3.forward(tape, z1));
  Tensor up1 = crop_to(upsample2x_nearest(z2), y2.shape[0], y2.shape[1]);
  Tensor m = relu(add(u1c.forward(tape, up1), y2));
  Tensor m2 = relu(c4.forward(tape, m));
  Tensor up2 = crop_to(upsample2x_nearest(m2), x1.shape[0], x1.shape[1]);
  Tensor f = relu(add(u2c.forward(tape, up2), x1));
  return c5.forward(tape, f);
}

void Encoder::collect(ParamRefs& out) {
  for (Conv2dLayer* l : {&c0, &c1, &d1, &c2, &d2, &c3, &u1c, &c4, &u2c, &c5})
    l->collect(out);
}

}  // namespace splat
