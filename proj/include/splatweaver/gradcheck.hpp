#pragma once

#include <functional>
#include <string>

#include "splatweaver/adam.hpp"

namespace splat {

struct GradCheckResult {
  bool ok = true;
  real max_rel_err = 0;
  std::string worst;  // "param[i]" of the worst entry

  std::string summary() const;
};

struct GradCheckOptions {
  real step = real(1e-5);     // central finite-difference step
  real tol = real(1e-4);      // max relative error
  real floor = real(1e-6);    // denominators below this compare absolutely
  int samples_per_param = 0;  // 0 = every entry
  uint64_t sample_seed = 17;
};

// Compares analytic gradients of loss_fn against central finite differences
// for every parameter in `params`. loss_fn must build a fresh graph on the
// given tape and return a scalar; it is re-evaluated with perturbed parameter
// buffers, so it must read parameter values through the Params each call.
GradCheckResult gradcheck(const ParamRefs& params,
                          const std::function<Tensor(Tape&)>& loss_fn,
                          const GradCheckOptions& opt = {});

}  // namespace splat
