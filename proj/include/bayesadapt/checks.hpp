#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bayesadapt {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

// Gradient checks of every objective, the Dirichlet/TS equivalence and the
// zero-penalty identities, on small fixed networks.
// Finite-difference checks of every training objective on a 20-64-32-10
// network, batch 8, with data and weights drawn from `seed`.
std::vector<CheckResult> gradient_checks(std::uint64_t seed);

std::vector<CheckResult> run_self_checks();

}  // namespace bayesadapt
