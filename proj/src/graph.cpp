#include "bayesadapt/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bayesadapt/errors.hpp"

namespace bayesadapt {

const Tensor& Var::value() const { return graph->value(*this); }

const Tensor& Gradients::of(Var param) const {
  auto it = grads_.find(param.id);
  if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(param.id));
  return it->second;
}

Var Graph::parameter(Tensor value) {
  if (!value.all_finite()) throw NumericError("parameter contains non-finite values");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.is_parameter = true;
  nodes_.push_back(std::move(n));
  ++num_params_;
  return {this, nodes_.size() - 1};
}

Var Graph::constant(Tensor value) {
  if (!value.all_finite()) throw NumericError("constant contains non-finite values");
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::size_t Graph::num_differentiable() const {
  return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) {
    return n.requires_grad && !n.is_parameter;
  }));
}

Var Graph::record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError(std::string(op) + " produced non-finite values");
  Node n;
  n.value = std::move(value);
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](std::size_t i) { return nodes_[i].requires_grad; });
  if (n.requires_grad) n.backward = std::move(fn);
  n.inputs = std::move(inputs);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Tensor* Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return &n.grad;
}

Gradients Graph::backward(Var root) {
  if (root.graph != this) throw ContractError("root belongs to a different graph");
  if (nodes_[root.id].value.size() != 1) {
    throw ContractError("backward() requires a scalar root, got shape " +
                        shape_str(nodes_[root.id].value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor();
  if (nodes_[root.id].requires_grad) {
    nodes_[root.id].grad = Tensor(nodes_[root.id].value.shape(), 1.0);
  }
  for (std::size_t id = root.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (n.backward && !n.grad.empty()) n.backward(*this, id);
  }
  Gradients out;
  for (std::size_t id = 0; id <= root.id; ++id) {
    Node& n = nodes_[id];
    if (!n.is_parameter) continue;
    out.grads_.emplace(id, n.grad.empty() ? Tensor(n.value.shape(), 0.0) : n.grad);
  }
  return out;
}

namespace {

Graph& same_graph(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ContractError("operands live on different graphs");
  return *a.graph;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void accumulate(Tensor* dst, std::span<const double> src, double factor = 1.0) {
  if (!dst) return;
  auto d = dst->mutable_values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * src[i];
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw DimensionError("matmul: inner dimensions differ for " + shape_str(A.shape()) + " x " +
                         shape_str(B.shape()));
  }
  Tensor out({m, n}, 0.0);
  {
    const double* pa = A.data().data();
    const double* pb = B.data().data();
    double* po = out.mutable_values().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        const double av = pa[i * k + p];
        if (av == 0.0) continue;
        const double* brow = pb + p * n;
        double* orow = po + i * n;
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  return g.record("matmul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id, m, k, n](Graph& g, std::size_t self) {
    const double* go = g.grad_of(self).data().data();
    const double* pa = g.value_of(ia).data().data();
    const double* pb = g.value_of(ib).data().data();
    if (Tensor* ga = g.grad_buffer(ia)) {
      // dA = dO * B^T
      double* d = ga->mutable_values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += go[i * n + j] * pb[p * n + j];
          d[i * k + p] += acc;
        }
      }
    }
    if (Tensor* gb = g.grad_buffer(ib)) {
      // dB = A^T * dO
      double* d = gb->mutable_values().data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) d[p * n + j] += av * go[i * n + j];
        }
      }
    }
  });
}

Var add_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Tensor& X = x.value();
  const Tensor& B = bias.value();
  const std::size_t m = X.rows(), n = X.cols();
  if (B.rows() != 1 || B.cols() != n) {
    throw DimensionError("add_bias: bias " + shape_str(B.shape()) + " does not match columns of " +
                         shape_str(X.shape()));
  }
  Tensor out = X;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += B[j];
  return g.record("add_bias", std::move(out), {x.id, bias.id}, [ix = x.id, ib = bias.id, m, n](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    accumulate(g.grad_buffer(ix), go.values());
    if (Tensor* gb = g.grad_buffer(ib)) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) (*gb)[j] += go[i * n + j];
    }
  });
}

Var add(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return g.record("add", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    accumulate(g.grad_buffer(ia), go.values());
    accumulate(g.grad_buffer(ib), go.values());
  });
}

Var sub(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return g.record("sub", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    accumulate(g.grad_buffer(ia), go.values());
    accumulate(g.grad_buffer(ib), go.values(), -1.0);
  });
}

Var mul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return g.record("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& av = g.value_of(ia);
    const Tensor& bv = g.value_of(ib);
    if (Tensor* ga = g.grad_buffer(ia))
      for (std::size_t i = 0; i < go.size(); ++i) (*ga)[i] += go[i] * bv[i];
    if (Tensor* gb = g.grad_buffer(ib))
      for (std::size_t i = 0; i < go.size(); ++i) (*gb)[i] += go[i] * av[i];
  });
}

Var scale(Var x, double factor) {
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (auto& v : out.mutable_values()) v *= factor;
  return g.record("scale", std::move(out), {x.id}, [ix = x.id, factor](Graph& g, std::size_t self) {
    accumulate(g.grad_buffer(ix), g.grad_of(self).values(), factor);
  });
}

Var square(Var x) {
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (auto& v : out.mutable_values()) v *= v;
  return g.record("square", std::move(out), {x.id}, [ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& xv = g.value_of(ix);
    if (Tensor* gx = g.grad_buffer(ix))
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += 2.0 * xv[i] * go[i];
  });
}

Var relu(Var x) {
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (auto& v : out.mutable_values()) v = v > 0.0 ? v : 0.0;
  return g.record("relu", std::move(out), {x.id}, [ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& xv = g.value_of(ix);
    if (Tensor* gx = g.grad_buffer(ix))
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xv[i] > 0.0) (*gx)[i] += go[i];
  });
}

Var exp(Var x) {
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (auto& v : out.mutable_values()) v = std::exp(v);
  return g.record("exp", std::move(out), {x.id}, [ix = x.id](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    if (Tensor* gx = g.grad_buffer(ix))
      for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * y[i];
  });
}

Var clamped_log(Var x, double floor) {
  if (!(floor > 0.0)) throw ContractError("clamped_log floor must be positive");
  Graph& g = *x.graph;
  Tensor out = x.value();
  for (auto& v : out.mutable_values()) v = std::log(std::max(v, floor));
  return g.record("clamped_log", std::move(out), {x.id}, [ix = x.id, floor](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& xv = g.value_of(ix);
    if (Tensor* gx = g.grad_buffer(ix))
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xv[i] > floor) (*gx)[i] += go[i] / xv[i];
  });
}

Var log_softmax(Var logits) {
  Graph& g = *logits.graph;
  const Tensor& X = logits.value();
  if (!X.all_finite()) throw NumericError("log_softmax: non-finite logits");
  const std::size_t m = X.rows(), k = X.cols();
  if (k < 2) throw ContractError("log_softmax requires at least 2 classes, got " + std::to_string(k));
  Tensor out = X;
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, X.at(i, j));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(X.at(i, j) - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < k; ++j) out.at(i, j) = X.at(i, j) - lse;
  }
  return g.record("log_softmax", std::move(out), {logits.id}, [ix = logits.id, m, k](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    const Tensor& y = g.value_of(self);
    Tensor* gx = g.grad_buffer(ix);
    if (!gx) return;
    for (std::size_t i = 0; i < m; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < k; ++j) gs += go[i * k + j];
      for (std::size_t j = 0; j < k; ++j) (*gx)[i * k + j] += go[i * k + j] - std::exp(y[i * k + j]) * gs;
    }
  });
}

Var pick(Var x, std::span<const std::size_t> labels) {
  Graph& g = *x.graph;
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), k = X.cols();
  if (labels.size() != m) {
    throw DimensionError("pick: " + std::to_string(labels.size()) + " labels for " + std::to_string(m) + " rows");
  }
  std::vector<std::size_t> idx(labels.begin(), labels.end());
  Tensor out({m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (idx[i] >= k) {
      throw IndexError("label " + std::to_string(idx[i]) + " out of range [0, " + std::to_string(k) + ")");
    }
    out[i] = X.at(i, idx[i]);
  }
  return g.record("pick", std::move(out), {x.id}, [ix = x.id, idx = std::move(idx), k](Graph& g, std::size_t self) {
    const Tensor& go = g.grad_of(self);
    if (Tensor* gx = g.grad_buffer(ix))
      for (std::size_t i = 0; i < idx.size(); ++i) (*gx)[i * k + idx[i]] += go[i];
  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return g.record("sum", Tensor::scalar(s), {x.id}, [ix = x.id](Graph& g, std::size_t self) {
    const double go = g.grad_of(self)[0];
    if (Tensor* gx = g.grad_buffer(ix))
      for (auto& v : gx->mutable_values()) v += go;
  });
}

Var mean(Var x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

}  // namespace bayesadapt
