#include "splatweaver/tensor.hpp"

#include <atomic>

namespace splat {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

real Tensor::value() const {
  if (numel() != 1)
    throw ContractError("Tensor::value: expected scalar, got shape " + shape_str(shape));
  return (*data)[0];
}

real Tensor::at(std::initializer_list<int> idx) const {
  int64_t flat = 0;
  size_t k = 0;
  for (int i : idx) flat = flat * shape[k++] + i;
  return (*data)[size_t(flat)];
}

Tensor constant(Shape shape, std::vector<real> values) {
  if (shape_numel(shape) != int64_t(values.size()))
    throw ShapeError(strformat("constant: %lld values for shape %s",
                               (long long)values.size(), shape_str(shape).c_str()));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<real>>(std::move(values));
  return t;
}

Tensor zeros(Shape shape) {
  Tensor t;
  int64_t n = shape_numel(shape);
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<real>>(size_t(n), real(0));
  return t;
}

Tensor full(Shape shape, real v) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data->begin(), t.data->end(), v);
  return t;
}

Tensor scalar_tensor(real v) { return constant({1}, {v}); }

Tensor make_param(Shape shape, std::vector<real> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.grad = std::make_shared<std::vector<real>>(t.data->size(), real(0));
  return t;
}

namespace {
std::atomic<uint64_t> g_tape_uid{1};
}

Tape::Tape() : uid_(g_tape_uid.fetch_add(1)) {}

Tensor Tape::watch(const Tensor& param) {
  auto it = watched_.find(param.data.get());
  if (it != watched_.end()) {
    Tensor t = param;
    t.tape = this;
    t.node = it->second;
    t.tape_uid = uid_;
    return t;
  }
  Node n;
  n.numel = param.numel();
  n.back = nullptr;
  n.sink = param.grad;
  nodes_.push_back(std::move(n));
  int id = int(nodes_.size()) - 1;
  watched_.emplace(param.data.get(), id);
  Tensor t = param;
  t.tape = this;
  t.node = id;
  t.tape_uid = uid_;
  return t;
}

int Tape::record(int64_t out_numel, BackFn fn) {
  nodes_.push_back(Node{out_numel, std::move(fn), nullptr});
  return int(nodes_.size()) - 1;
}

std::vector<real>& Tape::scratch(int n) {
  auto& g = scratch_[size_t(n)];
  if (g.empty()) g.assign(size_t(nodes_[size_t(n)].numel), real(0));
  return g;
}

void Tape::backward(const Tensor& root) {
  if (root.tape != this || root.node < 0)
    throw ContractError("backward: root is not on this tape");
  if (root.numel() != 1)
    throw ContractError("backward: root must be scalar, got shape " +
                        shape_str(root.shape));
  scratch_.assign(nodes_.size(), {});
  scratch(root.node)[0] = real(1);
  for (int i = root.node; i >= 0; --i) {
    auto& g = scratch_[size_t(i)];
    if (g.empty()) continue;  // not reachable from root
    const Node& n = nodes_[size_t(i)];
    if (n.back) n.back(g.data(), *this);
    if (n.sink) {
      auto& sink = *n.sink;
      for (size_t j = 0; j < sink.size(); ++j) sink[j] += g[j];
    }
  }
  scratch_.clear();
}

}  // namespace splat
