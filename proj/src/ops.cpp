#include "splatweaver/ops.hpp"

#include <algorithm>
#include <cmath>

#include "splatweaver/kernels.hpp"

namespace splat {

namespace {

using kernels::table;

// Finds the recording tape among the inputs (at most one distinct).
struct Rec {
  Tape* tape = nullptr;

  static Rec of(std::initializer_list<const Tensor*> ts) {
    Rec r;
    for (const Tensor* t : ts) {
      if (!t->tracked()) continue;
      if (!r.tape)
        r.tape = t->tape;
      else if (r.tape != t->tape)
        throw ContractError("op inputs recorded on different tapes");
    }
    return r;
  }

  int parent(const Tensor& t) const {
    return (tape && t.tracked() && t.tape == tape) ? t.node : -1;
  }
};

Tensor emit(const Rec& r, Shape shape, std::shared_ptr<std::vector<real>> data,
            Tape::BackFn fn) {
  Tensor out;
  out.shape = std::move(shape);
  out.data = std::move(data);
  if (r.tape) {
    out.tape = r.tape;
    out.tape_uid = r.tape->uid();
    out.node = r.tape->record(out.numel(), std::move(fn));
  }
  return out;
}

std::shared_ptr<std::vector<real>> alloc(int64_t n) {
  return std::make_shared<std::vector<real>>(size_t(n));
}

// Broadcast plan for binary elementwise ops: equal shapes, scalar operand, or
// the smaller shape a suffix of the larger (leading-dimension broadcast).
struct BinPlan {
  Shape out_shape;
  bool same = false;
  bool b_small = true;  // which operand repeats
  int64_t rep = 1;
  int64_t inner = 1;
};

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

BinPlan bin_plan(const char* op, const Tensor& a, const Tensor& b) {
  BinPlan p;
  if (a.shape == b.shape) {
    p.out_shape = a.shape;
    p.same = true;
    p.rep = 1;
    p.inner = a.numel();
    return p;
  }
  if (b.numel() == 1) {
    p.out_shape = a.shape;
    p.b_small = true;
    p.rep = a.numel();
    p.inner = 1;
  } else if (a.numel() == 1) {
    p.out_shape = b.shape;
    p.b_small = false;
    p.rep = b.numel();
    p.inner = 1;
  } else if (is_suffix(b.shape, a.shape)) {
    p.out_shape = a.shape;
    p.b_small = true;
    p.inner = b.numel();
    p.rep = a.numel() / p.inner;
  } else if (is_suffix(a.shape, b.shape)) {
    p.out_shape = b.shape;
    p.b_small = false;
    p.inner = a.numel();
    p.rep = b.numel() / p.inner;
  } else {
    throw ShapeError(strformat("%s: shape mismatch %s vs %s", op,
                               shape_str(a.shape).c_str(),
                               shape_str(b.shape).c_str()));
  }
  return p;
}

// Shared skeleton for the arithmetic binaries. fwd(lhs, rhs, z, n) computes
// the op over equal-length chunks (lhs always operand a, rhs operand b);
// back_large/back_small push the output gradient into the non-broadcast /
// broadcast operand. `swapped` means the broadcast (small) side is `a`.
template <class Fwd, class BackLarge, class BackSmall>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 BackLarge back_large, BackSmall back_small) {
  BinPlan p = bin_plan(name, a, b);
  Rec r = Rec::of({&a, &b});
  auto out = alloc(shape_numel(p.out_shape));
  for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk) {
    int64_t off = rchunk * p.inner;
    fwd(p.b_small ? a.ptr() + off : a.ptr(),
        p.b_small ? b.ptr() : b.ptr() + off, out->data() + off, p.inner);
  }

  int pa = r.parent(a), pb = r.parent(b);
  if (!r.tape || (pa < 0 && pb < 0))
    return emit(r, std::move(p.out_shape), std::move(out), nullptr);

  Tensor a_keep = a, b_keep = b;
  Shape oshape = p.out_shape;
  auto fn = [p, pa, pb, a_keep, b_keep, back_large, back_small](
                const real* g, Tape& t) {
    const Tensor& big = p.b_small ? a_keep : b_keep;
    const Tensor& small = p.b_small ? b_keep : a_keep;
    int pbig = p.b_small ? pa : pb;
    int psmall = p.b_small ? pb : pa;
    bool swapped = !p.same && !p.b_small;
    if (pbig >= 0)
      back_large(g, big.ptr(), small.ptr(), t.scratch(pbig).data(), p, swapped);
    if (psmall >= 0)
      back_small(g, big.ptr(), small.ptr(), t.scratch(psmall).data(), p, swapped);
  };
  return emit(r, std::move(p.out_shape), std::move(out), std::move(fn));
}

// Generic unary skeleton: out[i] = f(x[i]), gx[i] += g[i] * df(saved).
Tensor unary_op(const Tensor& x, const std::function<void(const real*, real*, int64_t)>& fwd,
                std::function<void(const real* g, const real* xv, const real* yv,
                                   real* gx, int64_t n)> back) {
  Rec r = Rec::of({&x});
  int64_t n = x.numel();
  auto out = alloc(n);
  fwd(x.ptr(), out->data(), n);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  Tensor x_keep = x;
  auto out_keep = out;
  auto fn = [px, x_keep, out_keep, back, n](const real* g, Tape& t) {
    back(g, x_keep.ptr(), out_keep->data(), t.scratch(px).data(), n);
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

}  // namespace

// ---------------------------------------------------------------------------
// Arithmetic

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b,
      [](const real* x, const real* y, real* z, int64_t n) {
        table().add(x, y, z, n);
      },
      [](const real* g, const real*, const real*, real* gx, const BinPlan& p, bool) {
        table().axpy(real(1), g, gx, p.rep * p.inner);
      },
      [](const real* g, const real*, const real*, real* gs, const BinPlan& p, bool) {
        for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
          table().axpy(real(1), g + rchunk * p.inner, gs, p.inner);
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b,
      [](const real* x, const real* y, real* z, int64_t n) {
        table().sub(x, y, z, n);
      },
      [](const real* g, const real*, const real*, real* gx, const BinPlan& p,
         bool swapped) {
        table().axpy(swapped ? real(-1) : real(1), g, gx, p.rep * p.inner);
      },
      [](const real* g, const real*, const real*, real* gs, const BinPlan& p,
         bool swapped) {
        real s = swapped ? real(1) : real(-1);
        for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
          table().axpy(s, g + rchunk * p.inner, gs, p.inner);
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b,
      [](const real* x, const real* y, real* z, int64_t n) {
        table().mul(x, y, z, n);
      },
      [](const real* g, const real*, const real* small, real* gx,
         const BinPlan& p, bool) {
        for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
          table().mul_acc(g + rchunk * p.inner, small, gx + rchunk * p.inner,
                          p.inner);
      },
      [](const real* g, const real* big, const real*, real* gs,
         const BinPlan& p, bool) {
        for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
          table().mul_acc(g + rchunk * p.inner, big + rchunk * p.inner, gs,
                          p.inner);
      });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  return binary_op(
      "divide", a, b,
      [](const real* x, const real* y, real* z, int64_t n) {
        table().div(x, y, z, n);
      },
      [](const real* g, const real* big, const real* small, real* gx,
         const BinPlan& p, bool swapped) {
        if (!swapped) {
          // z = big / small : d/d big = 1/small
          for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
            for (int64_t i = 0; i < p.inner; ++i)
              gx[rchunk * p.inner + i] += g[rchunk * p.inner + i] / small[i];
        } else {
          // z = small / big : d/d big = -small / big^2
          for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
            for (int64_t i = 0; i < p.inner; ++i) {
              int64_t k = rchunk * p.inner + i;
              gx[k] += -g[k] * small[i] / (big[k] * big[k]);
            }
        }
      },
      [](const real* g, const real* big, const real* small, real* gs,
         const BinPlan& p, bool swapped) {
        if (!swapped) {
          // z = big / small : d/d small = -big / small^2
          for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
            for (int64_t i = 0; i < p.inner; ++i) {
              int64_t k = rchunk * p.inner + i;
              gs[i] += -g[k] * big[k] / (small[i] * small[i]);
            }
        } else {
          // z = small / big : d/d small = 1/big
          for (int64_t rchunk = 0; rchunk < p.rep; ++rchunk)
            for (int64_t i = 0; i < p.inner; ++i) {
              int64_t k = rchunk * p.inner + i;
              gs[i] += g[k] / big[k];
            }
        }
      });
}

Tensor squared_difference(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape)
    throw ShapeError(strformat("squared_difference: shape mismatch %s vs %s",
                               shape_str(a.shape).c_str(),
                               shape_str(b.shape).c_str()));
  Rec r = Rec::of({&a, &b});
  int64_t n = a.numel();
  auto out = alloc(n);
  table().sqdiff(a.ptr(), b.ptr(), out->data(), n);
  int pa = r.parent(a), pb = r.parent(b);
  if (!r.tape || (pa < 0 && pb < 0)) return emit(r, a.shape, std::move(out), nullptr);
  Tensor ak = a, bk = b;
  auto fn = [pa, pb, ak, bk, n](const real* g, Tape& t) {
    if (pa >= 0) {
      real* gx = t.scratch(pa).data();
      for (int64_t i = 0; i < n; ++i)
        gx[i] += real(2) * (ak.ptr()[i] - bk.ptr()[i]) * g[i];
    }
    if (pb >= 0) {
      real* gx = t.scratch(pb).data();
      for (int64_t i = 0; i < n; ++i)
        gx[i] -= real(2) * (ak.ptr()[i] - bk.ptr()[i]) * g[i];
    }
  };
  return emit(r, a.shape, std::move(out), std::move(fn));
}

Tensor scale(const Tensor& x, real c) {
  Rec r = Rec::of({&x});
  int64_t n = x.numel();
  auto out = alloc(n);
  table().scale_shift(x.ptr(), c, real(0), out->data(), n);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  auto fn = [px, c, n](const real* g, Tape& t) {
    table().axpy(c, g, t.scratch(px).data(), n);
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

Tensor add_scalar(const Tensor& x, real c) {
  Rec r = Rec::of({&x});
  int64_t n = x.numel();
  auto out = alloc(n);
  table().scale_shift(x.ptr(), real(1), c, out->data(), n);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  auto fn = [px, n](const real* g, Tape& t) {
    table().axpy(real(1), g, t.scratch(px).data(), n);
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

Tensor neg(const Tensor& x) { return scale(x, real(-1)); }

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](const real* xv, real* y, int64_t n) { table().relu(xv, y, n); },
      [](const real* g, const real* xv, const real*, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i)
          if (xv[i] > real(0)) gx[i] += g[i];
      });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x,
      [](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) {
          real v = xv[i];
          if (v >= real(0)) {
            y[i] = real(1) / (real(1) + std::exp(-v));
          } else {
            real e = std::exp(v);
            y[i] = e / (real(1) + e);
          }
        }
      },
      [](const real* g, const real*, const real* yv, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i)
          gx[i] += g[i] * yv[i] * (real(1) - yv[i]);
      });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x,
      [](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) {
          real v = xv[i];
          y[i] = v > real(0) ? v + std::log1p(std::exp(-v))
                             : std::log1p(std::exp(v));
        }
      },
      [](const real* g, const real* xv, const real*, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i) {
          real v = xv[i];
          real s = v >= real(0) ? real(1) / (real(1) + std::exp(-v))
                                : std::exp(v) / (real(1) + std::exp(v));
          gx[i] += g[i] * s;
        }
      });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x,
      [](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) y[i] = std::exp(xv[i]);
      },
      [](const real* g, const real*, const real* yv, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i] * yv[i];
      });
}

Tensor log(const Tensor& x) {
  return unary_op(
      x,
      [](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) y[i] = std::log(xv[i]);
      },
      [](const real* g, const real* xv, const real*, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i) gx[i] += g[i] / xv[i];
      });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x,
      [](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(xv[i]);
      },
      [](const real* g, const real*, const real* yv, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i)
          gx[i] += g[i] * (real(1) - yv[i] * yv[i]);
      });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x,
      [](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) y[i] = std::fabs(xv[i]);
      },
      [](const real* g, const real* xv, const real*, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i) {
          if (xv[i] > real(0)) gx[i] += g[i];
          else if (xv[i] < real(0)) gx[i] -= g[i];
        }
      });
}

Tensor clamp(const Tensor& x, real lo, real hi) {
  return unary_op(
      x,
      [lo, hi](const real* xv, real* y, int64_t n) {
        for (int64_t i = 0; i < n; ++i) y[i] = std::min(hi, std::max(lo, xv[i]));
      },
      [lo, hi](const real* g, const real* xv, const real*, real* gx, int64_t n) {
        for (int64_t i = 0; i < n; ++i)
          if (xv[i] > lo && xv[i] < hi) gx[i] += g[i];
      });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace {
void check_matrix(const char* op, const Tensor& t) {
  if (t.shape.size() != 2)
    throw ShapeError(strformat("%s: expected rank-2 tensor, got %s", op,
                               shape_str(t.shape).c_str()));
}

std::vector<real> transposed(const real* x, int m, int n) {
  std::vector<real> out(size_t(m) * n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out[size_t(j) * m + i] = x[size_t(i) * n + j];
  return out;
}
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix("matmul", a);
  check_matrix("matmul", b);
  if (a.shape[1] != b.shape[0])
    throw ShapeError(strformat("matmul: shape mismatch %s vs %s",
                               shape_str(a.shape).c_str(),
                               shape_str(b.shape).c_str()));
  int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Rec r = Rec::of({&a, &b});
  auto out = std::make_shared<std::vector<real>>(size_t(m) * n, real(0));
  kernels::matmul_acc(a.ptr(), b.ptr(), out->data(), m, k, n);
  int pa = r.parent(a), pb = r.parent(b);
  if (!r.tape || (pa < 0 && pb < 0))
    return emit(r, {m, n}, std::move(out), nullptr);
  Tensor ak = a, bk = b;
  auto fn = [pa, pb, ak, bk, m, k, n](const real* g, Tape& t) {
    if (pa >= 0) {
      // gA[m,k] += g[m,n] * B^T[n,k]
      std::vector<real> bt = transposed(bk.ptr(), k, n);
      kernels::matmul_acc(g, bt.data(), t.scratch(pa).data(), m, n, k);
    }
    if (pb >= 0) {
      // gB[k,n] += A^T[k,m] * g[m,n]
      std::vector<real> at = transposed(ak.ptr(), m, k);
      kernels::matmul_acc(at.data(), g, t.scratch(pb).data(), k, m, n);
    }
  };
  return emit(r, {m, n}, std::move(out), std::move(fn));
}

Tensor transpose(const Tensor& x) {
  check_matrix("transpose", x);
  int m = x.shape[0], n = x.shape[1];
  Rec r = Rec::of({&x});
  auto out = std::make_shared<std::vector<real>>(transposed(x.ptr(), m, n));
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, {n, m}, std::move(out), nullptr);
  auto fn = [px, m, n](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) gx[size_t(i) * n + j] += g[size_t(j) * m + i];
  };
  return emit(r, {n, m}, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  Rec r = Rec::of({&x});
  real acc = 0;
  const real* xv = x.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) acc += xv[i];
  auto out = std::make_shared<std::vector<real>>(1, acc);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, {1}, std::move(out), nullptr);
  auto fn = [px, n](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (int64_t i = 0; i < n; ++i) gx[i] += g[0];
  };
  return emit(r, {1}, std::move(out), std::move(fn));
}

Tensor mean(const Tensor& x) {
  Rec r = Rec::of({&x});
  int64_t n = x.numel();
  if (n == 0) throw ContractError("mean: empty tensor");
  real acc = 0;
  const real* xv = x.ptr();
  for (int64_t i = 0; i < n; ++i) acc += xv[i];
  acc /= real(n);
  auto out = std::make_shared<std::vector<real>>(1, acc);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, {1}, std::move(out), nullptr);
  auto fn = [px, n](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    real gv = g[0] / real(n);
    for (int64_t i = 0; i < n; ++i) gx[i] += gv;
  };
  return emit(r, {1}, std::move(out), std::move(fn));
}

Tensor max_all(const Tensor& x) {
  Rec r = Rec::of({&x});
  int64_t n = x.numel();
  if (n == 0) throw ContractError("max_all: empty tensor");
  const real* xv = x.ptr();
  int64_t arg = 0;
  for (int64_t i = 1; i < n; ++i)
    if (xv[i] > xv[arg]) arg = i;
  auto out = std::make_shared<std::vector<real>>(1, xv[arg]);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, {1}, std::move(out), nullptr);
  auto fn = [px, arg](const real* g, Tape& t) { t.scratch(px)[size_t(arg)] += g[0]; };
  return emit(r, {1}, std::move(out), std::move(fn));
}

namespace {
struct Lanes {
  int64_t outer, len, inner;
};

Lanes lanes_for(const char* op, const Shape& s, int axis) {
  if (axis < 0) axis += int(s.size());
  if (axis < 0 || axis >= int(s.size()))
    throw ShapeError(strformat("%s: axis %d out of range for %s", op, axis,
                               shape_str(s).c_str()));
  Lanes l{1, s[size_t(axis)], 1};
  for (int i = 0; i < axis; ++i) l.outer *= s[size_t(i)];
  for (int i = axis + 1; i < int(s.size()); ++i) l.inner *= s[size_t(i)];
  return l;
}
}  // namespace

Tensor sum_axis(const Tensor& x, int axis) {
  if (axis < 0) axis += int(x.shape.size());
  Lanes l = lanes_for("sum_axis", x.shape, axis);
  Shape oshape;
  for (int i = 0; i < int(x.shape.size()); ++i)
    if (i != axis) oshape.push_back(x.shape[size_t(i)]);
  if (oshape.empty()) oshape.push_back(1);
  Rec r = Rec::of({&x});
  auto out = std::make_shared<std::vector<real>>(size_t(l.outer * l.inner), real(0));
  const real* xv = x.ptr();
  for (int64_t o = 0; o < l.outer; ++o)
    for (int64_t a = 0; a < l.len; ++a)
      table().axpy(real(1), xv + (o * l.len + a) * l.inner,
                   out->data() + o * l.inner, l.inner);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, std::move(oshape), std::move(out), nullptr);
  auto fn = [px, l](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (int64_t o = 0; o < l.outer; ++o)
      for (int64_t a = 0; a < l.len; ++a)
        table().axpy(real(1), g + o * l.inner,
                     gx + (o * l.len + a) * l.inner, l.inner);
  };
  return emit(r, std::move(oshape), std::move(out), std::move(fn));
}

Tensor softmax(const Tensor& x, int axis) {
  Lanes l = lanes_for("softmax", x.shape, axis);
  Rec r = Rec::of({&x});
  auto out = alloc(x.numel());
  const real* xv = x.ptr();
  real* yv = out->data();
  for (int64_t o = 0; o < l.outer; ++o) {
    for (int64_t i = 0; i < l.inner; ++i) {
      int64_t base = o * l.len * l.inner + i;
      real m = xv[base];
      for (int64_t a = 1; a < l.len; ++a)
        m = std::max(m, xv[base + a * l.inner]);
      real denom = 0;
      for (int64_t a = 0; a < l.len; ++a) {
        real e = std::exp(xv[base + a * l.inner] - m);
        yv[base + a * l.inner] = e;
        denom += e;
      }
      for (int64_t a = 0; a < l.len; ++a) yv[base + a * l.inner] /= denom;
    }
  }
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  auto out_keep = out;
  auto fn = [px, l, out_keep](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    const real* p = out_keep->data();
    for (int64_t o = 0; o < l.outer; ++o) {
      for (int64_t i = 0; i < l.inner; ++i) {
        int64_t base = o * l.len * l.inner + i;
        real dot = 0;
        for (int64_t a = 0; a < l.len; ++a)
          dot += g[base + a * l.inner] * p[base + a * l.inner];
        for (int64_t a = 0; a < l.len; ++a) {
          int64_t k = base + a * l.inner;
          gx[k] += p[k] * (g[k] - dot);
        }
      }
    }
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

Tensor log_softmax(const Tensor& x, int axis) {
  Lanes l = lanes_for("log_softmax", x.shape, axis);
  Rec r = Rec::of({&x});
  auto out = alloc(x.numel());
  const real* xv = x.ptr();
  real* yv = out->data();
  for (int64_t o = 0; o < l.outer; ++o) {
    for (int64_t i = 0; i < l.inner; ++i) {
      int64_t base = o * l.len * l.inner + i;
      real m = xv[base];
      for (int64_t a = 1; a < l.len; ++a)
        m = std::max(m, xv[base + a * l.inner]);
      real denom = 0;
      for (int64_t a = 0; a < l.len; ++a)
        denom += std::exp(xv[base + a * l.inner] - m);
      real lse = m + std::log(denom);
      for (int64_t a = 0; a < l.len; ++a)
        yv[base + a * l.inner] = xv[base + a * l.inner] - lse;
    }
  }
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  auto out_keep = out;
  auto fn = [px, l, out_keep](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    const real* ls = out_keep->data();
    for (int64_t o = 0; o < l.outer; ++o) {
      for (int64_t i = 0; i < l.inner; ++i) {
        int64_t base = o * l.len * l.inner + i;
        real gsum = 0;
        for (int64_t a = 0; a < l.len; ++a) gsum += g[base + a * l.inner];
        for (int64_t a = 0; a < l.len; ++a) {
          int64_t k = base + a * l.inner;
          gx[k] += g[k] - std::exp(ls[k]) * gsum;
        }
      }
    }
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// Shape manipulation

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& ref = parts[0].shape;
  if (axis < 0) axis += int(ref.size());
  if (axis < 0 || axis >= int(ref.size()))
    throw ShapeError(strformat("concat: axis %d out of range for %s", axis,
                               shape_str(ref).c_str()));
  int axis_total = 0;
  for (const Tensor& p : parts) {
    if (int(p.shape.size()) != int(ref.size()))
      throw ShapeError("concat: rank mismatch " + shape_str(p.shape) + " vs " +
                       shape_str(ref));
    for (int i = 0; i < int(ref.size()); ++i)
      if (i != axis && p.shape[size_t(i)] != ref[size_t(i)])
        throw ShapeError("concat: shape mismatch " + shape_str(p.shape) +
                         " vs " + shape_str(ref));
    axis_total += p.shape[size_t(axis)];
  }
  Shape oshape = ref;
  oshape[size_t(axis)] = axis_total;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= ref[size_t(i)];
  for (int i = axis + 1; i < int(ref.size()); ++i) inner *= ref[size_t(i)];

  std::vector<const Tensor*> ins;
  for (const Tensor& p : parts) ins.push_back(&p);
  Rec r;
  for (const Tensor* t : ins) {
    if (!t->tracked()) continue;
    if (!r.tape) r.tape = t->tape;
    else if (r.tape != t->tape)
      throw ContractError("concat inputs recorded on different tapes");
  }

  auto out = alloc(shape_numel(oshape));
  int64_t out_row = int64_t(axis_total) * inner;
  int64_t off = 0;
  std::vector<int64_t> offsets, chunks;
  for (const Tensor& p : parts) {
    int64_t chunk = int64_t(p.shape[size_t(axis)]) * inner;
    offsets.push_back(off);
    chunks.push_back(chunk);
    for (int64_t o = 0; o < outer; ++o)
      std::copy_n(p.ptr() + o * chunk, chunk, out->data() + o * out_row + off);
    off += chunk;
  }

  std::vector<int> pids;
  bool any = false;
  for (const Tensor& p : parts) {
    int id = r.parent(p);
    pids.push_back(id);
    any = any || id >= 0;
  }
  if (!r.tape || !any) return emit(r, std::move(oshape), std::move(out), nullptr);
  auto fn = [pids, offsets, chunks, outer, out_row](const real* g, Tape& t) {
    for (size_t pi = 0; pi < pids.size(); ++pi) {
      if (pids[pi] < 0) continue;
      real* gx = t.scratch(pids[pi]).data();
      for (int64_t o = 0; o < outer; ++o)
        table().axpy(real(1), g + o * out_row + offsets[pi],
                     gx + o * chunks[pi], chunks[pi]);
    }
  };
  return emit(r, std::move(oshape), std::move(out), std::move(fn));
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
  if (axis < 0) axis += int(x.shape.size());
  if (axis < 0 || axis >= int(x.shape.size()))
    throw ShapeError(strformat("slice: axis %d out of range for %s", axis,
                               shape_str(x.shape).c_str()));
  if (start < 0 || len < 0 || start + len > x.shape[size_t(axis)])
    throw ShapeError(strformat("slice: range [%d,%d) out of bounds for %s",
                               start, start + len, shape_str(x.shape).c_str()));
  Shape oshape = x.shape;
  oshape[size_t(axis)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape[size_t(i)];
  for (int i = axis + 1; i < int(x.shape.size()); ++i) inner *= x.shape[size_t(i)];
  int64_t in_row = int64_t(x.shape[size_t(axis)]) * inner;
  int64_t out_chunk = int64_t(len) * inner;
  Rec r = Rec::of({&x});
  auto out = alloc(outer * out_chunk);
  for (int64_t o = 0; o < outer; ++o)
    std::copy_n(x.ptr() + o * in_row + start * inner, out_chunk,
                out->data() + o * out_chunk);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, std::move(oshape), std::move(out), nullptr);
  auto fn = [px, outer, in_row, out_chunk, start, inner](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (int64_t o = 0; o < outer; ++o)
      table().axpy(real(1), g + o * out_chunk, gx + o * in_row + start * inner,
                   out_chunk);
  };
  return emit(r, std::move(oshape), std::move(out), std::move(fn));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError(strformat("reshape: %s has %lld elements, target %s",
                               shape_str(x.shape).c_str(),
                               (long long)x.numel(), shape_str(shape).c_str()));
  Rec r = Rec::of({&x});
  int px = r.parent(x);
  if (!r.tape || px < 0) {
    Tensor out;
    out.shape = std::move(shape);
    out.data = x.data;
    return out;
  }
  int64_t n = x.numel();
  auto fn = [px, n](const real* g, Tape& t) {
    table().axpy(real(1), g, t.scratch(px).data(), n);
  };
  return emit(r, std::move(shape), x.data, std::move(fn));
}

Tensor broadcast(const Tensor& x, Shape target) {
  int rank = int(target.size());
  int xr = int(x.shape.size());
  if (xr > rank)
    throw ShapeError(strformat("broadcast: rank of %s exceeds target %s",
                               shape_str(x.shape).c_str(),
                               shape_str(target).c_str()));
  // Right-align input dims, stride 0 where broadcasting.
  std::vector<int64_t> xstride(size_t(rank), 0);
  int64_t s = 1;
  for (int i = xr - 1; i >= 0; --i) {
    int td = target[size_t(rank - xr + i)];
    int xd = x.shape[size_t(i)];
    if (xd != td && xd != 1)
      throw ShapeError(strformat("broadcast: cannot expand %s to %s",
                                 shape_str(x.shape).c_str(),
                                 shape_str(target).c_str()));
    xstride[size_t(rank - xr + i)] = (xd == 1 && td != 1) ? 0 : s;
    s *= xd;
  }
  Rec r = Rec::of({&x});
  int64_t n = shape_numel(target);
  auto out = alloc(n);
  const real* xv = x.ptr();
  real* yv = out->data();
  std::vector<int> idx(size_t(rank), 0);
  int64_t xoff = 0;
  for (int64_t flat = 0; flat < n; ++flat) {
    yv[flat] = xv[xoff];
    for (int d = rank - 1; d >= 0; --d) {
      xoff += xstride[size_t(d)];
      if (++idx[size_t(d)] < target[size_t(d)]) break;
      xoff -= xstride[size_t(d)] * target[size_t(d)];
      idx[size_t(d)] = 0;
    }
  }
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, std::move(target), std::move(out), nullptr);
  Shape tgt = target;
  auto fn = [px, xstride, tgt, rank, n](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    std::vector<int> idx(size_t(rank), 0);
    int64_t xoff = 0;
    for (int64_t flat = 0; flat < n; ++flat) {
      gx[xoff] += g[flat];
      for (int d = rank - 1; d >= 0; --d) {
        xoff += xstride[size_t(d)];
        if (++idx[size_t(d)] < tgt[size_t(d)]) break;
        xoff -= xstride[size_t(d)] * tgt[size_t(d)];
        idx[size_t(d)] = 0;
      }
    }
  };
  return emit(r, std::move(target), std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// Image ops

namespace {
void check_hwc(const char* op, const Tensor& t) {
  if (t.shape.size() != 3)
    throw ShapeError(strformat("%s: expected [H,W,C], got %s", op,
                               shape_str(t.shape).c_str()));
}
}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int pad) {
  check_hwc("conv2d", x);
  if (w.shape.size() != 4)
    throw ShapeError(strformat("conv2d: expected weights [kh,kw,Cin,Cout], got %s",
                               shape_str(w.shape).c_str()));
  int H = x.shape[0], W = x.shape[1], Ci = x.shape[2];
  int kh = w.shape[0], kw = w.shape[1], wci = w.shape[2], Co = w.shape[3];
  if (wci != Ci)
    throw ShapeError(strformat("conv2d: shape mismatch %s vs %s",
                               shape_str(x.shape).c_str(),
                               shape_str(w.shape).c_str()));
  bool has_bias = bias.data && bias.numel() > 0;
  if (has_bias && bias.numel() != Co)
    throw ShapeError(strformat("conv2d: bias %s does not match Cout=%d",
                               shape_str(bias.shape).c_str(), Co));
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  int Ho = (H + 2 * pad - kh) / stride + 1;
  int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError(strformat("conv2d: kernel %s too large for input %s",
                               shape_str(w.shape).c_str(),
                               shape_str(x.shape).c_str()));
  Rec r = has_bias ? Rec::of({&x, &w, &bias}) : Rec::of({&x, &w});
  auto out = std::make_shared<std::vector<real>>(size_t(Ho) * Wo * Co, real(0));
  const real* xv = x.ptr();
  const real* wv = w.ptr();
  real* yv = out->data();

  parallel_for(Ho, [&](int64_t y0, int64_t y1) {
    for (int64_t oy = y0; oy < y1; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        real* opx = yv + (oy * Wo + ox) * Co;
        if (has_bias) std::copy_n(bias.ptr(), Co, opx);
        for (int ky = 0; ky < kh; ++ky) {
          int iy = int(oy) * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const real* ipx = xv + (int64_t(iy) * W + ix) * Ci;
            const real* wk = wv + (int64_t(ky) * kw + kx) * Ci * Co;
            for (int ci = 0; ci < Ci; ++ci)
              table().axpy(ipx[ci], wk + int64_t(ci) * Co, opx, Co);
          }
        }
      }
    }
  });

  int px = r.parent(x), pw = r.parent(w);
  int pb = has_bias ? r.parent(bias) : -1;
  if (!r.tape || (px < 0 && pw < 0 && pb < 0))
    return emit(r, {Ho, Wo, Co}, std::move(out), nullptr);
  Tensor xk = x, wk_t = w;
  auto fn = [px, pw, pb, xk, wk_t, H, W, Ci, kh, kw, Co, Ho, Wo, stride,
             pad](const real* g, Tape& t) {
    const real* xv = xk.ptr();
    const real* wv = wk_t.ptr();
    real* gx = px >= 0 ? t.scratch(px).data() : nullptr;
    real* gw = pw >= 0 ? t.scratch(pw).data() : nullptr;
    real* gb = pb >= 0 ? t.scratch(pb).data() : nullptr;
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const real* gpx = g + (int64_t(oy) * Wo + ox) * Co;
        if (gb)
          for (int co = 0; co < Co; ++co) gb[co] += gpx[co];
        for (int ky = 0; ky < kh; ++ky) {
          int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const real* ipx = xv + (int64_t(iy) * W + ix) * Ci;
            const real* wkk = wv + (int64_t(ky) * kw + kx) * Ci * Co;
            real* gxpx = gx ? gx + (int64_t(iy) * W + ix) * Ci : nullptr;
            for (int ci = 0; ci < Ci; ++ci) {
              if (gw)
                table().axpy(ipx[ci],
                             gpx, gw + ((int64_t(ky) * kw + kx) * Ci + ci) * Co,
                             Co);
              if (gxpx) {
                real acc = 0;
                const real* wrow = wkk + int64_t(ci) * Co;
                for (int co = 0; co < Co; ++co) acc += wrow[co] * gpx[co];
                gxpx[ci] += acc;
              }
            }
          }
        }
      }
    }
  };
  return emit(r, {Ho, Wo, Co}, std::move(out), std::move(fn));
}

Tensor upsample2x_nearest(const Tensor& x) {
  check_hwc("upsample2x_nearest", x);
  int H = x.shape[0], W = x.shape[1], C = x.shape[2];
  Rec r = Rec::of({&x});
  auto out = alloc(int64_t(2 * H) * (2 * W) * C);
  const real* xv = x.ptr();
  real* yv = out->data();
  for (int y = 0; y < 2 * H; ++y)
    for (int xc = 0; xc < 2 * W; ++xc)
      std::copy_n(xv + (int64_t(y / 2) * W + xc / 2) * C, C,
                  yv + (int64_t(y) * 2 * W + xc) * C);
  int px = r.parent(x);
  if (!r.tape || px < 0)
    return emit(r, {2 * H, 2 * W, C}, std::move(out), nullptr);
  auto fn = [px, H, W, C](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (int y = 0; y < 2 * H; ++y)
      for (int xc = 0; xc < 2 * W; ++xc)
        table().axpy(real(1), g + (int64_t(y) * 2 * W + xc) * C,
                     gx + (int64_t(y / 2) * W + xc / 2) * C, C);
  };
  return emit(r, {2 * H, 2 * W, C}, std::move(out), std::move(fn));
}

Tensor avgpool2x2(const Tensor& x) {
  check_hwc("avgpool2x2", x);
  int H = x.shape[0], W = x.shape[1], C = x.shape[2];
  if (H % 2 || W % 2)
    throw ShapeError(strformat("avgpool2x2: dimensions must be even, got %s",
                               shape_str(x.shape).c_str()));
  int Ho = H / 2, Wo = W / 2;
  Rec r = Rec::of({&x});
  auto out = std::make_shared<std::vector<real>>(size_t(Ho) * Wo * C, real(0));
  const real* xv = x.ptr();
  real* yv = out->data();
  for (int y = 0; y < Ho; ++y)
    for (int xc = 0; xc < Wo; ++xc) {
      real* opx = yv + (int64_t(y) * Wo + xc) * C;
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          table().axpy(real(0.25),
                       xv + (int64_t(2 * y + dy) * W + 2 * xc + dx) * C, opx, C);
    }
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, {Ho, Wo, C}, std::move(out), nullptr);
  auto fn = [px, Ho, Wo, W, C](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (int y = 0; y < Ho; ++y)
      for (int xc = 0; xc < Wo; ++xc) {
        const real* gpx = g + (int64_t(y) * Wo + xc) * C;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            table().axpy(real(0.25), gpx,
                         gx + (int64_t(2 * y + dy) * W + 2 * xc + dx) * C, C);
      }
  };
  return emit(r, {Ho, Wo, C}, std::move(out), std::move(fn));
}

Tensor l2_normalize(const Tensor& x, int axis) {
  Lanes l = lanes_for("l2_normalize", x.shape, axis);
  Rec r = Rec::of({&x});
  auto out = alloc(x.numel());
  auto norms = std::make_shared<std::vector<real>>(size_t(l.outer * l.inner));
  const real* xv = x.ptr();
  real* yv = out->data();
  constexpr real kEps2 = real(1e-24);
  for (int64_t o = 0; o < l.outer; ++o) {
    for (int64_t i = 0; i < l.inner; ++i) {
      int64_t base = o * l.len * l.inner + i;
      real ss = 0;
      for (int64_t a = 0; a < l.len; ++a) {
        real v = xv[base + a * l.inner];
        ss += v * v;
      }
      real nrm = std::sqrt(ss > kEps2 ? ss : kEps2);
      (*norms)[size_t(o * l.inner + i)] = nrm;
      for (int64_t a = 0; a < l.len; ++a)
        yv[base + a * l.inner] = xv[base + a * l.inner] / nrm;
    }
  }
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  auto out_keep = out;
  auto fn = [px, l, out_keep, norms](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    const real* y = out_keep->data();
    for (int64_t o = 0; o < l.outer; ++o) {
      for (int64_t i = 0; i < l.inner; ++i) {
        int64_t base = o * l.len * l.inner + i;
        real nrm = (*norms)[size_t(o * l.inner + i)];
        real dot = 0;
        for (int64_t a = 0; a < l.len; ++a)
          dot += g[base + a * l.inner] * y[base + a * l.inner];
        for (int64_t a = 0; a < l.len; ++a) {
          int64_t k = base + a * l.inner;
          gx[k] += (g[k] - y[k] * dot) / nrm;
        }
      }
    }
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

// ---------------------------------------------------------------------------
// Indexing

Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
  if (x.shape.empty()) throw ShapeError("gather_rows: scalar input");
  int n = x.shape[0];
  int64_t row = x.numel() / std::max(1, n);
  for (int i : idx)
    if (i < 0 || i >= n)
      throw ContractError(strformat("gather_rows: index %d out of range [0,%d)", i, n));
  Shape oshape = x.shape;
  oshape[0] = int(idx.size());
  Rec r = Rec::of({&x});
  auto out = alloc(int64_t(idx.size()) * row);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy_n(x.ptr() + int64_t(idx[i]) * row, row, out->data() + int64_t(i) * row);
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, std::move(oshape), std::move(out), nullptr);
  auto idx_keep = std::make_shared<std::vector<int>>(idx);
  auto fn = [px, idx_keep, row](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (size_t i = 0; i < idx_keep->size(); ++i)
      table().axpy(real(1), g + int64_t(i) * row,
                   gx + int64_t((*idx_keep)[i]) * row, row);
  };
  return emit(r, std::move(oshape), std::move(out), std::move(fn));
}

Tensor gather_cols(const Tensor& x, const std::vector<int>& idx) {
  check_matrix("gather_cols", x);
  int n = x.shape[0], m = x.shape[1];
  if (int(idx.size()) != n)
    throw ShapeError(strformat("gather_cols: %zu indices for %d rows",
                               idx.size(), n));
  for (int i : idx)
    if (i < 0 || i >= m)
      throw ContractError(strformat("gather_cols: index %d out of range [0,%d)", i, m));
  Rec r = Rec::of({&x});
  auto out = alloc(n);
  for (int i = 0; i < n; ++i)
    (*out)[size_t(i)] = x.ptr()[int64_t(i) * m + idx[size_t(i)]];
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, {n}, std::move(out), nullptr);
  auto idx_keep = std::make_shared<std::vector<int>>(idx);
  auto fn = [px, idx_keep, m](const real* g, Tape& t) {
    real* gx = t.scratch(px).data();
    for (size_t i = 0; i < idx_keep->size(); ++i)
      gx[int64_t(i) * m + (*idx_keep)[i]] += g[i];
  };
  return emit(r, {n}, std::move(out), std::move(fn));
}

Tensor detach(const Tensor& x) {
  Tensor out;
  out.shape = x.shape;
  out.data = x.data;
  return out;
}

Tensor st_override(const Tensor& x, std::vector<real> values) {
  if (int64_t(values.size()) != x.numel())
    throw ShapeError(strformat("st_override: %lld values for shape %s",
                               (long long)values.size(),
                               shape_str(x.shape).c_str()));
  Rec r = Rec::of({&x});
  auto out = std::make_shared<std::vector<real>>(std::move(values));
  int px = r.parent(x);
  if (!r.tape || px < 0) return emit(r, x.shape, std::move(out), nullptr);
  int64_t n = x.numel();
  auto fn = [px, n](const real* g, Tape& t) {
    table().axpy(real(1), g, t.scratch(px).data(), n);
  };
  return emit(r, x.shape, std::move(out), std::move(fn));
}

}  // namespace splat
