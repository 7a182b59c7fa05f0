#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lvnet/errors.hpp"

namespace lvnet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
  std::vector<int64_t> st(s.size());
  int64_t acc = 1;
  for (int i = static_cast<int>(s.size()) - 1; i >= 0; --i) {
    st[static_cast<size_t>(i)] = acc;
    acc *= s[static_cast<size_t>(i)];
  }
  return st;
}

// Global multiply-accumulate tally. Enabled only while cross-checking the
// analytic FLOPs counter against an executed forward pass.
struct MacTally {
  static bool& enabled() {
    static bool on = false;
    return on;
  }
  static uint64_t& count() {
    static uint64_t c = 0;
    return c;
  }
  static void add(uint64_t macs) {
    if (enabled()) count() += macs;
  }
  static void reset() { count() = 0; }
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;  // reads this->grad, accumulates into parents
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

// Value-semantics handle over a shared autodiff node. Copies alias the same
// storage; ops build fresh nodes, so tensors behave as immutable values
// except for explicit in-place parameter updates.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorNode<T>> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<TensorNode<T>>();
    n->data.assign(static_cast<size_t>(shape_numel(shape)), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor from_vector(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size()))
      throw ConfigError("tensor: " + shape_str(shape) + " does not hold " +
                        std::to_string(values.size()) + " values");
    auto n = std::make_shared<TensorNode<T>>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor scalar(T value) { return from_vector({}, {value}); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int rank() const { return static_cast<int>(n_->shape.size()); }
  int64_t numel() const { return static_cast<int64_t>(n_->data.size()); }

  int64_t dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    return n_->shape[static_cast<size_t>(i)];
  }

  const std::vector<T>& data() const { return n_->data; }
  std::vector<T>& raw_data() { return n_->data; }  // init / optimizer only

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool v) { n_->requires_grad = v; }

  bool has_grad() const { return !n_->grad.empty(); }
  const std::vector<T>& grad() const {
    if (n_->grad.empty()) throw NumericError("tensor has no gradient");
    return n_->grad;
  }
  std::vector<T>& raw_grad() { return n_->grad; }
  void zero_grad() { n_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw UsageError("item() on non-scalar tensor " + shape_str(shape()));
    return n_->data[0];
  }

  TensorNode<T>* node() const { return n_.get(); }
  const std::shared_ptr<TensorNode<T>>& node_ptr() const { return n_; }

  // Reverse-mode sweep from a scalar root.
  void backward() const {
    if (numel() != 1) throw UsageError("backward() requires a scalar root");
    std::vector<TensorNode<T>*> order;
    topo_sort(order);
    n_->ensure_grad();
    n_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      TensorNode<T>* node = *it;
      if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
  }

 private:
  void topo_sort(std::vector<TensorNode<T>*>& order) const {
    std::unordered_set<TensorNode<T>*> seen;
    // Iterative post-order DFS; graphs are deep enough to overflow the
    // call stack on long training sequences.
    std::vector<std::pair<TensorNode<T>*, size_t>> stack;
    stack.emplace_back(n_.get(), 0);
    seen.insert(n_.get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        TensorNode<T>* p = node->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }

  std::shared_ptr<TensorNode<T>> n_;
};

template <typename T>
inline void check_finite(const char* op, const std::vector<T>& values) {
  for (const T& v : values) {
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
  }
}

// All ops funnel through here: wires parents, prunes dead graph branches,
// and enforces the everything-finite contract.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorNode<T>&)> backward_fn) {
  check_finite(op, data);
  auto n = std::make_shared<TensorNode<T>>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->op = op;
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (needs) {
    n->requires_grad = true;
    n->parents.reserve(parents.size());
    for (auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Tensor<T>(std::move(n));
}

// Accumulate `values` into the parent's grad buffer if it participates.
template <typename T>
inline void accumulate_grad(const std::shared_ptr<TensorNode<T>>& parent,
                            const std::vector<T>& values) {
  if (!parent->requires_grad) return;
  parent->ensure_grad();
  for (size_t i = 0; i < values.size(); ++i) parent->grad[i] += values[i];
}

}  // namespace lvnet
