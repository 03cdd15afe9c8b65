#pragma once

#include <string>
#include <vector>

#include "splatweaver/tensor.hpp"

namespace splat {

// Named optimizable tensor. Modules own Params and register pointers into a
// ParamRefs list; the optimizer, checkpointing, and gradient checks all walk
// that list in registration order.
struct Param {
  std::string name;
  Tensor t;

  Param() = default;
  Param(std::string n, Tensor tensor) : name(std::move(n)), t(std::move(tensor)) {}
};

using ParamRefs = std::vector<Param*>;

void zero_grads(const ParamRefs& params);

struct AdamConfig {
  real lr = real(2e-4);
  real beta1 = real(0.9);
  real beta2 = real(0.999);
  real eps = real(1e-8);
};

struct AdamState {
  int64_t step = 0;  // completed steps
  std::vector<std::vector<real>> m, v;

  void init(const ParamRefs& params);
  bool initialized() const { return !m.empty(); }
};

// One bias-corrected Adam update. Grads must be populated and are left
// untouched. Throws ContractError naming the parameter if a grad is missing.
void adam_step(const ParamRefs& params, AdamState& state, const AdamConfig& cfg);

// Cosine annealing from lr_init at step 0 to lr_final at step total-1.
real cosine_lr(int64_t step, int64_t total, real lr_init, real lr_final);

}  // namespace splat
