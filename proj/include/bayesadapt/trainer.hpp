#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bayesadapt/model.hpp"
#include "bayesadapt/objectives.hpp"
#include "bayesadapt/synthdata.hpp"

namespace bayesadapt {

enum class Method { NoTransfer, OneHot, TS, BaVb, BaMapGauss, BaMapDirichlet };

// Reporting order: baselines first, then the Bayesian methods.
inline constexpr std::array<Method, 6> kAllMethods{Method::NoTransfer, Method::OneHot,     Method::TS,
                                                   Method::BaVb,       Method::BaMapGauss, Method::BaMapDirichlet};

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool is_bayesian(Method m);

struct TrainConfig {
  Method method = Method::OneHot;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double learning_rate = 0.003;
  double momentum = 0.9;
  AdaptHyper hyper;
  PriorOptions prior;
  std::uint64_t seed = 0;
  bool combine_with_ts = false;
  // BaVb only: draw eps = 0 instead of standard normal noise.
  bool pin_noise_to_zero = false;

  // Adaptation defaults for a method (TS mixing on for the Bayesian methods).
  static TrainConfig adaptation_defaults(Method m);
  static TrainConfig source_defaults();
  void validate() const;
};

struct Metrics {
  std::vector<LossBreakdown> epoch_losses;  // per-sample mean over the epoch
  std::vector<double> step_losses;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
};

// v <- m v - lr g; p <- p + v. `velocity` is zero-initialized when empty.
void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double learning_rate, double momentum,
              std::vector<Tensor>& velocity);

// Argmax of the log-probabilities, ties broken toward the lowest class index.
std::vector<std::size_t> predict(const ModelParams& params, const MlpSpec& spec, const Tensor& x);
double evaluate_accuracy(const ModelParams& params, const MlpSpec& spec, const LabeledSplit& split);
double evaluate_accuracy(const SourceModel& model, const LabeledSplit& split);

struct SourceTraining {
  SourceModel model;
  Metrics metrics;  // test_accuracy on the source test split
};

SourceTraining train_source(const MlpSpec& spec, const SourceDataset& data, const TrainConfig& config);

struct Adaptation {
  ModelParams params;
  Metrics metrics;  // test_accuracy on the target device test split
};

// Called after each optimizer step with the 1-based step count.
using StepObserver = std::function<void(std::size_t step, const ModelParams& params)>;

Adaptation adapt_target(const SourceModel& source, const ParallelDataset& target, const TrainConfig& config,
                        const StepObserver& observer = {});

}  // namespace bayesadapt
