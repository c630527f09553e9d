#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "discup/error.hpp"
#include "discup/rng.hpp"

namespace discup {

// Define-by-run reverse-mode autodiff over dense row-major tensors.
// The graph is rebuilt on every forward pass; a node records its inputs and
// a closure that scatters the node's gradient into them. Ops that see no
// grad-requiring input record nothing, so inference passes build no graph.

template <typename S>
struct TensorNode {
  std::vector<int> shape;
  std::vector<S> value;
  std::vector<S> grad;  // empty until touched by backward
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode<S>>> parents;
  std::function<void()> backward_fn;
  uint64_t visit_mark = 0;

  size_t numel() const { return value.size(); }

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), S(0));
  }
};

template <typename S>
class Tensor {
 public:
  using Node = TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false) {
    auto n = std::make_shared<Node>();
    size_t count = 1;
    for (int d : shape) {
      if (d < 0) throw InvalidInputError("tensor: negative dimension");
      count *= size_t(d);
    }
    n->shape = std::move(shape);
    n->value.assign(count, S(0));
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from(std::vector<int> shape, std::vector<S> data,
                     bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    if (data.size() != t.numel())
      throw ContractViolation("tensor: data length does not match shape");
    t.node_->value = std::move(data);
    return t;
  }

  static Tensor scalar(S v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  static Tensor randn(std::vector<int> shape, S stddev, Rng& rng,
                      bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->value) v = S(rng.normal(0.0, double(stddev)));
    return t;
  }

  static Tensor uniform(std::vector<int> shape, S lo, S hi, Rng& rng,
                        bool requires_grad = false) {
    auto t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->value) v = S(lo + (hi - lo) * S(rng.uniform()));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  size_t numel() const { return node_->numel(); }
  int rows() const { return node_->shape.at(0); }
  int cols() const { return node_->shape.at(1); }
  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& value() { return node_->value; }
  const S* data() const { return node_->value.data(); }
  S* data() { return node_->value.data(); }
  S item() const {
    if (numel() != 1) throw ContractViolation("item() on non-scalar tensor");
    return node_->value[0];
  }

  // Gradient of the last backward() that reached this tensor; zeros if none.
  const std::vector<S>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->grad.size(), S(0));
  }

  std::shared_ptr<Node> node() const { return node_; }
  Node* raw() const { return node_.get(); }

  // Reverse-mode sweep from a scalar root. Topological order is derived from
  // the recorded parent lists alone, so repeated runs are bit-identical.
  void backward() const {
    if (numel() != 1)
      throw ContractViolation("backward() requires a scalar loss");
    static uint64_t stamp_source = 0;
    const uint64_t stamp = ++stamp_source;

    std::vector<Node*> order;
    std::vector<std::pair<Node*, size_t>> stack;
    if (node_->visit_mark != stamp) {
      node_->visit_mark = stamp;
      stack.emplace_back(node_.get(), 0);
    }
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node* p = n->parents[idx++].get();
        if (p->visit_mark != stamp) {
          p->visit_mark = stamp;
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward_fn) (*it)->backward_fn();
    }
  }

 private:
  std::shared_ptr<Node> node_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// FNV-1a over the raw value bits; used for frozen-parameter checks.
template <typename S>
uint64_t bit_hash(const Tensor<S>& t, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
  size_t n = t.numel() * sizeof(S);
  for (size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename S>
uint64_t bit_hash(const std::vector<Tensor<S>>& ts) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : ts) h = bit_hash(t, h);
  return h;
}

}  // namespace discup
