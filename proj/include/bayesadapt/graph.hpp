#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Graph is a dynamic tape: every operation appends a node holding its
// output value and a local adjoint rule, so inputs always precede the nodes
// that consume them. backward() walks the tape in reverse and sums adjoints,
// which makes shared subexpressions accumulate correctly.
//
// Broadcasting is limited to add_bias (a [n] bias across the rows of an
// [m x n] matrix); every other shape mismatch is a DimensionError.
// The ReLU subgradient at exactly zero is 0.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "bayesadapt/tensor.hpp"

namespace bayesadapt {

class Graph;

// Handle to a node on a Graph. Cheap to copy; valid while the Graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Gradients {
 public:
  // Gradient of the root with respect to a parameter leaf.
  const Tensor& of(Var param) const;
  bool contains(Var param) const { return grads_.count(param.id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Graph;
  std::unordered_map<std::size_t, Tensor> grads_;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf that receives a gradient.
  Var parameter(Tensor value);
  // Leaf that never receives a gradient.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  std::size_t size() const { return nodes_.size(); }
  std::size_t num_parameters() const { return num_params_; }
  // Number of nodes carrying an adjoint rule.
  std::size_t num_differentiable() const;

  // Gradients of a one-element root with respect to every parameter leaf.
  Gradients backward(Var root);

  // Used by operation implementations.
  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn);
  const Tensor& grad_of(std::size_t id) const { return nodes_[id].grad; }
  // Adjoint buffer for an input, allocated on first use; nullptr when the
  // input does not require a gradient.
  Tensor* grad_buffer(std::size_t id);
  const Tensor& value_of(std::size_t id) const { return nodes_[id].value; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool is_parameter = false;
  };

  std::deque<Node> nodes_;  // stable references across push_back
  std::size_t num_params_ = 0;
};

// Primitive operations. All inputs must live on the same graph.
Var matmul(Var a, Var b);
Var add_bias(Var x, Var bias);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var square(Var x);
Var relu(Var x);
Var exp(Var x);
// log(max(x, floor)); the adjoint is zero where the clamp is active.
Var clamped_log(Var x, double floor);
// Row-wise log-softmax with max subtraction.
Var log_softmax(Var logits);
// out[r] = x[r, labels[r]]
Var pick(Var x, std::span<const std::size_t> labels);
Var sum(Var x);
Var mean(Var x);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(double c, Var x) { return scale(x, c); }

}  // namespace bayesadapt
