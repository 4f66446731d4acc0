#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bayesadapt/graph.hpp"

namespace bayesadapt {

// Builds a scalar loss on `graph` from parameter leaves, in block order.
using LossBuilder = std::function<Var(Graph& graph, std::span<const Var> params)>;

struct BlockCheck {
  std::size_t block = 0;
  // max_i |analytic_i - numeric_i| / max(max_i |analytic_i|, max_i |numeric_i|)
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<BlockCheck> blocks;
  double tolerance = 0.0;

  bool passed() const;
  double worst() const;
  std::string summary() const;
};

// Compares analytic gradients against central differences
// (f(p + eps) - f(p - eps)) / 2eps, one coordinate at a time. The loss must
// be deterministic; a loss that changes between two evaluations at the same
// point is rejected with a ContractError.
GradCheckReport finite_diff_check(const LossBuilder& loss, const std::vector<Tensor>& params,
                                  double epsilon, double tolerance);

}  // namespace bayesadapt
