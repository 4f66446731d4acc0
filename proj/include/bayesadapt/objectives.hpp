#pragma once

// Training objectives. Every objective is a loss to minimize and averages
// over the batch, so alpha and sigma keep their meaning across batch sizes.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "bayesadapt/graph.hpp"
#include "bayesadapt/model.hpp"

namespace bayesadapt {

// Probabilities are clamped to this floor before any log.
inline constexpr double kProbabilityFloor = 1e-12;

enum class PriorKind { GaussianPerSample, SoftOutputs };

// Source-domain statistics for each paired sample, row i aligned with
// sample i of the parallel dataset.
struct LatentPrior {
  PriorKind kind = PriorKind::GaussianPerSample;
  Tensor means;         // [N x D]; for SoftOutputs equal to soft_outputs
  Tensor variances;     // [N x D], all > 0; GaussianPerSample only
  Tensor soft_outputs;  // [N x K]; SoftOutputs only

  std::size_t size() const { return means.rows(); }
  LatentPrior select(std::span<const std::size_t> rows) const;
  void validate() const;
};

enum class VarianceMode {
  Shared,                 // one sigma_S^2 for every sample and coordinate
  EmpiricalPerCoordinate  // variance of source latents over a reference set, floored
};

struct PriorOptions {
  PriorKind kind = PriorKind::GaussianPerSample;
  VarianceMode variance_mode = VarianceMode::Shared;
  double shared_variance = 1.0;
  double variance_floor = 1e-3;
};

// prior for the samples `paired_source_x`; `variance_reference` (defaults to
// paired_source_x when empty) supplies the empirical variances.
LatentPrior compute_prior(const SourceModel& source, const Tensor& paired_source_x, const PriorOptions& options,
                          const Tensor& variance_reference = Tensor());

struct AdaptHyper {
  double alpha = 1.0;           // penalty weight of the MAP objectives
  double sigma = 1.5;           // shared posterior std of the variational latent
  double ts_soft_weight = 0.9;  // weight of the soft KL term in the TS mixture
  std::size_t mc_samples = 1;
  double vb_kl_weight = 1.0;    // multiplies the 1/(2 sigma^2) residual term; 1 is the plain objective

  void validate() const;
  bool operator==(const AdaptHyper&) const = default;
};

struct LossBreakdown {
  double total = 0.0;
  double likelihood_term = 0.0;
  double penalty_term = 0.0;
};

struct ObjectiveTerms {
  Var total;
  Var likelihood;
  Var penalty;

  LossBreakdown breakdown() const;
};

// Standard normal draws, or exact zeros when pinned.
class NoiseSource {
 public:
  static NoiseSource seeded(std::uint64_t seed) { return NoiseSource(seed, false); }
  static NoiseSource zeros() { return NoiseSource(0, true); }

  Tensor standard_normal(const Shape& shape);
  bool pinned_to_zero() const { return zero_; }

 private:
  NoiseSource(std::uint64_t seed, bool zero) : rng_(seed), zero_(zero) {}
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  bool zero_;
};

double shannon_entropy(std::span<const double> p);

// Mean over rows of -log_probs[r, labels[r]].
Var cross_entropy_hard(Var log_probs, std::span<const std::size_t> labels);

// Mean over rows of sum_j p(j) (log p(j) - student(j)); zero teacher entries contribute 0.
Var soft_kl_loss(Var student_log_probs, const Tensor& teacher_probs);

// likelihood = w * soft_kl + (1 - w) * hard CE; penalty = 0.
ObjectiveTerms ts_combined_loss(Var student_log_probs, const Tensor& teacher_probs,
                                std::span<const std::size_t> labels, double ts_soft_weight);

// alpha * mean_i sum_d (z - mu)^2 / (2 var); `prior` holds the batch rows.
Var ba_map_gaussian_penalty(Var z_target, const LatentPrior& prior, double alpha);

// alpha * mean_i -sum_j p_S(j) log max(p_T(j), floor)
Var ba_map_dirichlet_penalty(Var student_probs, const Tensor& teacher_probs, double alpha);

// Mode (a_j - 1) / (sum a - K) of each row of Dirichlet parameters. Entries
// equal to 1 are allowed (boundary mode, as produced by a = p + 1 with p_j = 0).
Tensor dirichlet_mode(const Tensor& dirichlet_params);

// Likelihood term of any objective: hard CE, or the TS mixture when teacher
// probabilities are supplied.
Var likelihood_loss(Var log_probs, std::span<const std::size_t> labels, const Tensor* teacher_probs,
                    double ts_soft_weight);

// Variational objective on the latent site of `spec`:
//   likelihood = mean over mc draws of likelihood_loss(head(mu_T + sigma * eps))
//   penalty    = vb_kl_weight / (2 sigma^2) * mean_i ||mu_T - mu_S||^2
ObjectiveTerms ba_vb_loss(const ParamVars& target, const MlpSpec& spec, Var x_target,
                          std::span<const std::size_t> labels, const Tensor& source_means, const AdaptHyper& hyper,
                          NoiseSource& noise, const Tensor* teacher_probs = nullptr);

}  // namespace bayesadapt
