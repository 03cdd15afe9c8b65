#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "splatweaver/common.hpp"

namespace splat {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

// Dense multi-dimensional array, row-major. A tensor is either free
// (tape == nullptr) or tracked as node `node` on `tape`. Tracked tensors must
// not outlive their tape. Data buffers are shared, never mutated by ops;
// the optimizer mutates parameter buffers in place between tapes.
struct Tensor {
  Shape shape;
  std::shared_ptr<std::vector<real>> data;
  std::shared_ptr<std::vector<real>> grad;  // persistent sink; parameters only
  Tape* tape = nullptr;
  int node = -1;
  uint64_t tape_uid = 0;

  Tensor() = default;

  int64_t numel() const { return data ? int64_t(data->size()) : 0; }
  bool tracked() const { return tape != nullptr && node >= 0; }
  bool requires_grad() const { return grad != nullptr; }

  real* ptr() { return data->data(); }
  const real* ptr() const { return data->data(); }
  std::vector<real>& vals() { return *data; }
  const std::vector<real>& vals() const { return *data; }

  // Scalar read; contract: numel == 1.
  real value() const;
  real at(std::initializer_list<int> idx) const;

  void zero_grad() {
    if (grad) std::fill(grad->begin(), grad->end(), real(0));
  }
};

Tensor constant(Shape shape, std::vector<real> values);
Tensor zeros(Shape shape);
Tensor full(Shape shape, real v);
Tensor scalar_tensor(real v);
// Tensor with a persistent gradient buffer (an optimizable leaf).
Tensor make_param(Shape shape, std::vector<real> values);

// Records one operation per node: the parents it reads and a closure that
// pushes the node's gradient into the parents' scratch gradients. Nodes are
// appended in execution order, so the list is already topologically sorted
// and backward() is a single reverse sweep that visits each node once.
class Tape {
 public:
  using BackFn = std::function<void(const real* gout, Tape& tape)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  uint64_t uid() const { return uid_; }
  int size() const { return int(nodes_.size()); }

  // Registers a parameter as a leaf node; memoized per data buffer so every
  // use of the same parameter within a step shares one node.
  Tensor watch(const Tensor& param);

  // Accumulates d root / d leaf into every reachable watched leaf's grad
  // buffer. Additive across calls; callers zero grads explicitly.
  void backward(const Tensor& root);

  // Op-recording interface.
  int record(int64_t out_numel, BackFn fn);
  // Scratch gradient buffer for node `n` during backward, lazily zeroed.
  std::vector<real>& scratch(int n);

 private:
  struct Node {
    int64_t numel;
    BackFn back;
    std::shared_ptr<std::vector<real>> sink;  // leaf gradient buffer
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<real>> scratch_;
  std::unordered_map<const void*, int> watched_;
  uint64_t uid_;
};

// Helper for module code: track a parameter on the tape, or pass it through
// untouched in evaluation mode (tape == nullptr).
inline Tensor track(Tape* tape, const Tensor& param) {
  return tape ? tape->watch(param) : param;
}

}  // namespace splat
