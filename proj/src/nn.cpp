#include "splatweaver/nn.hpp"

#include <cmath>

namespace splat {

Tensor xavier_init(Shape shape, int fan_in, int fan_out, Rng& rng) {
  real a = std::sqrt(real(6) / real(fan_in + fan_out));
  int64_t n = shape_numel(shape);
  std::vector<real> vals(size_t(n), real(0));
  for (auto& v : vals) v = real(rng.uniform(-double(a), double(a)));
  return make_param(std::move(shape), std::move(vals));
}

Linear::Linear(const std::string& prefix, int in, int out, Rng& rng)
    : w(prefix + ".w", xavier_init({in, out}, in, out, rng)),
      b(prefix + ".b", make_param({out}, std::vector<real>(size_t(out), real(0)))) {}

Tensor Linear::forward(Tape* tape, const Tensor& x) const {
  return add(matmul(x, track(tape, w.t)), track(tape, b.t));
}

void Linear::collect(ParamRefs& out) {
  out.push_back(&w);
  out.push_back(&b);
}

Mlp2::Mlp2(const std::string& prefix, int in, int hidden, int out, Rng& rng)
    : l1(prefix + ".l1", in, hidden, rng), l2(prefix + ".l2", hidden, out, rng) {}

Tensor Mlp2::forward(Tape* tape, const Tensor& x) const {
  return l2.forward(tape, relu(l1.forward(tape, x)));
}

void Mlp2::collect(ParamRefs& out) {
  l1.collect(out);
  l2.collect(out);
}

Conv2dLayer::Conv2dLayer(const std::string& prefix, int kh, int kw, int cin,
                         int cout, int stride, int pad, Rng& rng)
    : w(prefix + ".w", xavier_init({kh, kw, cin, cout}, kh * kw * cin,
                                   kh * kw * cout, rng)),
      b(prefix + ".b", make_param({cout}, std::vector<real>(size_t(cout), real(0)))),
      stride(stride),
      pad(pad) {}

Tensor Conv2dLayer::forward(Tape* tape, const Tensor& x) const {
  return conv2d(x, track(tape, w.t), track(tape, b.t), stride, pad);
}

void Conv2dLayer::collect(ParamRefs& out) {
  out.push_back(&w);
  out.push_back(&b);
}

}  // namespace splat
