#include "bayesadapt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bayesadapt/errors.hpp"

namespace bayesadapt {

namespace {

double evaluate(const LossBuilder& loss, const std::vector<Tensor>& params) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.constant(p));
  return loss(g, leaves).value().item();
}

}  // namespace

bool GradCheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const BlockCheck& b) { return b.passed; });
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& b : blocks) w = std::max(w, b.max_relative_error);
  return w;
}

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  for (const auto& b : blocks) {
    os << "block " << b.block << ": rel err " << b.max_relative_error << (b.passed ? " ok" : " FAIL") << '\n';
  }
  return os.str();
}

GradCheckReport finite_diff_check(const LossBuilder& loss, const std::vector<Tensor>& params,
                                  double epsilon, double tolerance) {
  if (!(epsilon > 0.0)) throw ContractError("finite_diff_check: epsilon must be positive");

  const double f0 = evaluate(loss, params);
  const double f1 = evaluate(loss, params);
  if (f0 != f1) {
    throw ContractError(
        "finite_diff_check: loss is not deterministic at a fixed point; pin the noise draw "
        "(e.g. construct the noise source from a fixed seed inside the loss builder)");
  }

  Graph g;
  std::vector<Var> leaves;
  for (const auto& p : params) leaves.push_back(g.parameter(p));
  const Var root = loss(g, leaves);
  const Gradients grads = g.backward(root);

  GradCheckReport report;
  report.tolerance = tolerance;
  std::vector<Tensor> probe = params;
  for (std::size_t b = 0; b < params.size(); ++b) {
    const Tensor& analytic = grads.of(leaves[b]);
    double max_diff = 0.0, max_mag = 0.0;
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const double orig = params[b][i];
      probe[b][i] = orig + epsilon;
      const double fp = evaluate(loss, probe);
      probe[b][i] = orig - epsilon;
      const double fm = evaluate(loss, probe);
      probe[b][i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      max_diff = std::max(max_diff, std::abs(numeric - analytic[i]));
      max_mag = std::max({max_mag, std::abs(numeric), std::abs(analytic[i])});
    }
    BlockCheck bc;
    bc.block = b;
    bc.max_relative_error = max_mag > 0.0 ? max_diff / max_mag : max_diff;
    bc.passed = bc.max_relative_error <= tolerance;
    report.blocks.push_back(bc);
  }
  return report;
}

}  // namespace bayesadapt
