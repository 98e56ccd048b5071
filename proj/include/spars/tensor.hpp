// tensor.hpp — n-dimensional tensors and the reverse-mode gradient tape.
// Scalar type is a template parameter: float for training, double for
// finite-difference gradient checks.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace spars::ad {

struct shape_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

inline std::size_t numel_of(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw shape_error("non-positive dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

template <class S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> sh, S fill = S(0))
      : shape(std::move(sh)), data(numel_of(shape), fill) {}
  Tensor(std::vector<int> sh, std::vector<S> d)
      : shape(std::move(sh)), data(std::move(d)) {
    if (data.size() != numel_of(shape))
      throw shape_error("data size " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
  }

  std::size_t numel() const { return data.size(); }
  int dim(std::size_t i) const { return shape[i]; }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<T>(data[i]);
    return out;
  }
};

// Thread-local switch: with grads disabled, ops do not record the tape.
struct GradMode {
  static bool& enabled() {
    thread_local bool on = true;
    return on;
  }
};

struct NoGradGuard {
  bool prev;
  NoGradGuard() : prev(GradMode::enabled()) { GradMode::enabled() = false; }
  ~NoGradGuard() { GradMode::enabled() = prev; }
};

template <class S>
class Node;
template <class S>
using Var = std::shared_ptr<Node<S>>;

template <class S>
class Node {
 public:
  Tensor<S> value;
  Tensor<S> grad;  // allocated on demand, same shape as value
  bool requires_grad = false;
  bool backward_spent = false;  // set on the loss node after backward()
  std::vector<Var<S>> parents;
  std::function<void()> backprop;  // accumulates this->grad into parents

  Node() = default;
  explicit Node(Tensor<S> v, bool rg = false)
      : value(std::move(v)), requires_grad(rg) {}

  S* grad_data() {
    if (grad.data.empty()) grad = Tensor<S>(value.shape);
    return grad.data.data();
  }
  void zero_grad() {
    if (!grad.data.empty()) std::fill(grad.data.begin(), grad.data.end(), S(0));
  }
};

template <class S>
Var<S> make_var(Tensor<S> v, bool requires_grad = false) {
  return std::make_shared<Node<S>>(std::move(v), requires_grad);
}

template <class S>
Var<S> make_leaf(std::vector<int> shape, S fill = S(0)) {
  return make_var(Tensor<S>(std::move(shape), fill), true);
}

// Result node for an op: records parents and a backprop closure only when
// some parent needs gradients and grad mode is on.
template <class S>
Var<S> make_result(Tensor<S> value, std::vector<Var<S>> parents,
                   std::function<void()> (*)(void) = nullptr) {
  auto out = make_var(std::move(value));
  if (GradMode::enabled()) {
    for (const auto& p : parents)
      if (p && p->requires_grad) {
        out->requires_grad = true;
        break;
      }
    if (out->requires_grad) out->parents = std::move(parents);
  }
  return out;
}

// Reverse-topological traversal from the loss; each node visited once.
template <class S>
void backward(const Var<S>& loss) {
  if (!loss) throw usage_error("backward: null loss");
  if (loss->value.numel() != 1)
    throw usage_error("backward: loss must be scalar, got shape " +
                      shape_str(loss->value.shape));
  if (loss->backward_spent)
    throw usage_error("backward: tape already consumed; rebuild the graph");
  loss->backward_spent = true;
  if (!loss->requires_grad) return;

  std::vector<Node<S>*> order;
  std::unordered_set<Node<S>*> seen;
  // iterative DFS post-order
  std::vector<std::pair<Node<S>*, std::size_t>> stack;
  stack.emplace_back(loss.get(), 0);
  seen.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<S>* p = node->parents[idx++].get();
      if (p && p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  loss->grad_data()[0] = S(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backprop) (*it)->backprop();
  }
}

// Ordered name -> parameter map. Shapes are fixed after insertion.
template <class S>
class ParameterSet {
 public:
  Var<S> add(const std::string& name, Var<S> p) {
    if (index_.count(name)) throw usage_error("duplicate parameter: " + name);
    p->requires_grad = true;
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(p));
    return params_.back().second;
  }
  Var<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw usage_error("unknown parameter: " + name);
    return params_[it->second].second;
  }
  const Var<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw usage_error("unknown parameter: " + name);
    return params_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& [name, p] : params_) p->zero_grad();
  }

  template <class T>
  ParameterSet<T> cast() const {
    ParameterSet<T> out;
    for (const auto& [name, p] : params_)
      out.add(name, make_var(p->value.template cast<T>(), true));
    return out;
  }

 private:
  std::vector<std::pair<std::string, Var<S>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace spars::ad
