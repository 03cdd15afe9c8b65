#include "splatweaver/adam.hpp"

#include <cmath>

namespace splat {

void zero_grads(const ParamRefs& params) {
  for (Param* p : params) p->t.zero_grad();
}

void AdamState::init(const ParamRefs& params) {
  step = 0;
  m.clear();
  v.clear();
  for (Param* p : params) {
    m.emplace_back(p->t.data->size(), real(0));
    v.emplace_back(p->t.data->size(), real(0));
  }
}

void adam_step(const ParamRefs& params, AdamState& state, const AdamConfig& cfg) {
  if (!state.initialized()) state.init(params);
  if (state.m.size() != params.size())
    throw ContractError("adam_step: optimizer state does not match parameter list");
  state.step += 1;
  real bc1 = real(1) - std::pow(cfg.beta1, real(state.step));
  real bc2 = real(1) - std::pow(cfg.beta2, real(state.step));
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    if (!p.t.grad)
      throw ContractError("adam_step: parameter '" + p.name + "' has no gradient");
    auto& data = *p.t.data;
    auto& grad = *p.t.grad;
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      real g = grad[i];
      m[i] = cfg.beta1 * m[i] + (real(1) - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (real(1) - cfg.beta2) * g * g;
      real mhat = m[i] / bc1;
      real vhat = v[i] / bc2;
      data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

real cosine_lr(int64_t step, int64_t total, real lr_init, real lr_final) {
  if (total <= 1 || step >= total - 1) return lr_final;
  if (step <= 0) return lr_init;
  real t = real(step) / real(total - 1);
  return lr_final + real(0.5) * (lr_init - lr_final) *
                        (real(1) + std::cos(real(kPi) * t));
}

}  // namespace splat
