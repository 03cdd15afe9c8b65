#include "splatweaver/gradcheck.hpp"

#include <cmath>

namespace splat {

std::string GradCheckResult::summary() const {
  return strformat("%s max_rel_err=%.3e at %s", ok ? "ok" : "FAIL",
                   double(max_rel_err), worst.empty() ? "-" : worst.c_str());
}

GradCheckResult gradcheck(const ParamRefs& params,
                          const std::function<Tensor(Tape&)>& loss_fn,
                          const GradCheckOptions& opt) {
  GradCheckResult res;
  zero_grads(params);
  {
    Tape tape;
    Tensor loss = loss_fn(tape);
    tape.backward(loss);
  }
  auto eval = [&]() -> real {
    Tape tape;
    return loss_fn(tape).value();
  };
  Rng rng(opt.sample_seed);
  for (Param* p : params) {
    auto& data = *p->t.data;
    auto& grad = *p->t.grad;
    int64_t n = int64_t(data.size());
    std::vector<int64_t> picks;
    if (opt.samples_per_param > 0 && n > opt.samples_per_param) {
      for (int s = 0; s < opt.samples_per_param; ++s)
        picks.push_back(rng.uniform_int(int(n)));
    } else {
      picks.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) picks[size_t(i)] = i;
    }
    for (int64_t i : picks) {
      real keep = data[size_t(i)];
      data[size_t(i)] = keep + opt.step;
      real up = eval();
      data[size_t(i)] = keep - opt.step;
      real down = eval();
      data[size_t(i)] = keep;
      real fd = (up - down) / (real(2) * opt.step);
      real an = grad[size_t(i)];
      real denom = std::max(std::fabs(fd), std::fabs(an));
      real err = std::fabs(fd - an);
      real rel = denom > opt.floor ? err / denom : err;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst = strformat("%s[%lld] fd=%.6e analytic=%.6e", p->name.c_str(),
                              (long long)i, double(fd), double(an));
      }
    }
  }
  res.ok = res.max_rel_err <= opt.tol;
  return res;
}

}  // namespace splat
