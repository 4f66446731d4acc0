#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "bayesadapt/graph.hpp"
#include "bayesadapt/tensor.hpp"

namespace bayesadapt {

// Where the latent variable Z is read from the network.
enum class LatentSite {
  HiddenBeforeLast,  // post-ReLU activation of the last hidden layer
  Logits,            // pre-softmax output
  SoftOutput,        // post-softmax probabilities
};

std::string to_string(LatentSite site);
LatentSite latent_site_from_string(const std::string& s);

// Rectifier MLP: input_dim -> hidden_dims... -> num_classes.
struct MlpSpec {
  std::size_t input_dim = 20;
  std::vector<std::size_t> hidden_dims{64, 32};
  std::size_t num_classes = 10;
  LatentSite latent_site = LatentSite::HiddenBeforeLast;

  void validate() const;
  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  // Number of linear layers that belong to theta.
  std::size_t theta_layers() const;
  std::size_t latent_dim() const;

  bool operator==(const MlpSpec&) const = default;
};

// theta: weights up to and including the layer producing Z.
// omega: weights after Z; empty for the Logits and SoftOutput sites.
// Each layer contributes a weight [in x out] followed by a bias [out].
struct ModelParams {
  std::vector<Tensor> theta;
  std::vector<Tensor> omega;

  std::vector<Tensor> flatten() const;
  static ModelParams unflatten(const MlpSpec& spec, std::vector<Tensor> tensors);
  std::size_t num_tensors() const { return theta.size() + omega.size(); }

  bool operator==(const ModelParams&) const = default;
};

bool bitwise_equal(const ModelParams& a, const ModelParams& b);

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
ModelParams init_params(const MlpSpec& spec, std::uint64_t seed);

// Parameters bound onto a graph, either as differentiable leaves or constants.
struct ParamVars {
  std::vector<Var> theta;
  std::vector<Var> omega;
};

ParamVars bind_parameters(Graph& g, const ModelParams& params);
ParamVars bind_constants(Graph& g, const ModelParams& params);

struct LatentForward {
  Var latent;
  Var log_probs;
};

// x: [batch x input_dim]
Var latent_of(const ParamVars& p, const MlpSpec& spec, Var x);
// Maps a latent [batch x latent_dim] through omega to log-probabilities.
Var head(const ParamVars& p, const MlpSpec& spec, Var z);
LatentForward forward(const ParamVars& p, const MlpSpec& spec, Var x);

struct ForwardResult {
  Tensor latent;
  Tensor log_probs;
};

ForwardResult forward(const ModelParams& params, const MlpSpec& spec, const Tensor& x);
// Runs theta to validate x, then replaces the latent by z_inj and continues
// through omega.
Tensor forward_with_injected_latent(const ModelParams& params, const MlpSpec& spec, const Tensor& x,
                                    const Tensor& z_inj);

// Read-only model whose forward passes never touch a caller's graph. Copies
// share the underlying parameters.
class SourceModel {
 public:
  SourceModel(MlpSpec spec, ModelParams params);

  const MlpSpec& spec() const { return spec_; }
  const ModelParams& params() const { return *params_; }
  ForwardResult forward(const Tensor& x) const;

 private:
  MlpSpec spec_;
  std::shared_ptr<const ModelParams> params_;
};

SourceModel freeze(const ModelParams& params, const MlpSpec& spec);

struct Checkpoint {
  MlpSpec spec;
  ModelParams params;
};

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ModelParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace bayesadapt
