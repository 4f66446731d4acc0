#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "bayesadapt/errors.hpp"
#include "bayesadapt/model.hpp"
#include "test_util.hpp"

using namespace bayesadapt;
namespace fs = std::filesystem;

namespace {

MlpSpec tiny_spec() {
  MlpSpec s;
  s.input_dim = 2;
  s.hidden_dims = {3};
  s.num_classes = 2;
  return s;
}

ModelParams tiny_params() {
  ModelParams p;
  p.theta = {Tensor::matrix({{0.2, -0.4, 0.7}, {0.3, 0.1, -0.5}}), Tensor::vector({0.1, 0.0, -0.2})};
  p.omega = {Tensor::matrix({{0.6, -0.3}, {-0.8, 0.5}, {0.4, 0.9}}), Tensor::vector({0.05, -0.05})};
  return p;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("bayesadapt-model-" + std::to_string(::getpid()) + "-" + name);
}

}  // namespace

TEST(Mlp, HandComputedForward) {
  // h = relu(x W1 + b1) = [0, 0, 0.65]; logits = h W2 + b2 = [0.31, 0.535].
  const auto r = forward(tiny_params(), tiny_spec(), Tensor::matrix({{0.5, -1.0}}));
  EXPECT_NEAR(r.latent.at(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(r.latent.at(0, 1), 0.0, 1e-15);
  EXPECT_NEAR(r.latent.at(0, 2), 0.65, 1e-15);
  EXPECT_NEAR(r.log_probs.at(0, 0), -0.81196200204970371436, 1e-12);
  EXPECT_NEAR(r.log_probs.at(0, 1), -0.58696200204970371436, 1e-12);
}

TEST(Mlp, LatentWidthPerSite) {
  MlpSpec s;
  EXPECT_EQ(s.latent_dim(), 32u);
  s.latent_site = LatentSite::Logits;
  EXPECT_EQ(s.latent_dim(), 10u);
  const auto r = forward(init_params(s, 1), s, Tensor({4, 20}, 0.3));
  EXPECT_EQ(r.latent.shape(), (Shape{4, 10}));
  s.latent_site = LatentSite::SoftOutput;
  const auto soft = forward(init_params(s, 1), s, Tensor({4, 20}, 0.3));
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < 10; ++k) total += soft.latent.at(i, k);
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Mlp, LogProbsNormalizedPerRow) {
  std::mt19937_64 rng(3);
  MlpSpec s;
  const auto r = forward(init_params(s, 9), s, bayesadapt::testing::random_tensor({16, 20}, rng, 3.0));
  for (std::size_t i = 0; i < 16; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < 10; ++k) total += std::exp(r.log_probs.at(i, k));
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(Mlp, ThetaOmegaPartitionCoversEveryTensorOnce) {
  for (LatentSite site : {LatentSite::HiddenBeforeLast, LatentSite::Logits, LatentSite::SoftOutput}) {
    MlpSpec s;
    s.latent_site = site;
    const ModelParams p = init_params(s, 4);
    EXPECT_EQ(p.num_tensors(), 2 * s.num_layers());
    std::size_t count = 0;
    for (const auto& t : p.flatten()) count += t.size();
    EXPECT_EQ(count, 20u * 64 + 64 + 64 * 32 + 32 + 32 * 10 + 10);
    EXPECT_EQ(ModelParams::unflatten(s, p.flatten()), p);
  }
  MlpSpec s;
  const ModelParams p = init_params(s, 4);
  EXPECT_EQ(p.theta.size(), 4u);
  EXPECT_EQ(p.omega.size(), 2u);
  EXPECT_EQ(p.omega[0].shape(), (Shape{32, 10}));
}

TEST(Mlp, InitIsDeterministicAndSeedSensitive) {
  MlpSpec s;
  EXPECT_TRUE(bitwise_equal(init_params(s, 42), init_params(s, 42)));
  EXPECT_FALSE(bitwise_equal(init_params(s, 42), init_params(s, 43)));
  const ModelParams p = init_params(s, 42);
  const double bound = 1.0 / std::sqrt(20.0);
  for (double v : p.theta[0].values()) EXPECT_LE(std::abs(v), bound);
  for (double v : p.theta[1].values()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, ForwardIsBitwiseDeterministic) {
  MlpSpec s;
  const ModelParams p = init_params(s, 5);
  const Tensor x({8, 20}, 0.7);
  EXPECT_TRUE(bitwise_equal(forward(p, s, x).log_probs, forward(p, s, x).log_probs));
}

TEST(Mlp, InjectedNaturalLatentReproducesForward) {
  MlpSpec s;
  const ModelParams p = init_params(s, 6);
  std::mt19937_64 rng(6);
  const Tensor x = bayesadapt::testing::random_tensor({5, 20}, rng);
  const auto r = forward(p, s, x);
  EXPECT_LE(max_abs_diff(forward_with_injected_latent(p, s, x, r.latent), r.log_probs), 1e-14);
  EXPECT_THROW(forward_with_injected_latent(p, s, x, Tensor({5, 31})), DimensionError);
}

TEST(Mlp, ConfigAndShapeErrors) {
  MlpSpec s;
  s.hidden_dims.clear();
  EXPECT_THROW(s.validate(), ConfigError);
  s.latent_site = LatentSite::Logits;
  EXPECT_NO_THROW(s.validate());
  EXPECT_THROW(latent_site_from_string("penultimate"), ConfigError);
  EXPECT_EQ(latent_site_from_string(to_string(LatentSite::SoftOutput)), LatentSite::SoftOutput);

  MlpSpec d;
  EXPECT_THROW(forward(init_params(d, 1), d, Tensor({2, 19})), DimensionError);
  ModelParams broken = init_params(d, 1);
  broken.omega[0] = Tensor({31, 10});
  EXPECT_THROW(forward(broken, d, Tensor({2, 20})), DimensionError);
}

TEST(Mlp, GraphForwardMatchesValueForward) {
  MlpSpec s;
  const ModelParams p = init_params(s, 7);
  const Tensor x({3, 20}, -0.4);
  Graph g;
  const auto vars = bind_parameters(g, p);
  const auto f = forward(vars, s, g.constant(x));
  EXPECT_TRUE(bitwise_equal(f.log_probs.value(), forward(p, s, x).log_probs));
  EXPECT_EQ(g.num_parameters(), p.num_tensors());
}

TEST(SourceModel, FrozenModelSharesReadOnlyWeights) {
  MlpSpec s;
  const ModelParams p = init_params(s, 8);
  const SourceModel m = freeze(p, s);
  const SourceModel copy = m;
  EXPECT_EQ(&m.params(), &copy.params());
  const Tensor x({4, 20}, 0.2);
  EXPECT_TRUE(bitwise_equal(m.forward(x).log_probs, forward(p, s, x).log_probs));
  EXPECT_TRUE(bitwise_equal(m.params(), p));
  // Binding the frozen weights as constants never yields a trainable leaf.
  Graph g;
  bind_constants(g, m.params());
  EXPECT_EQ(g.num_parameters(), 0u);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  MlpSpec s;
  s.latent_site = LatentSite::Logits;
  std::mt19937_64 rng(9);
  ModelParams p = init_params(s, 9);
  for (auto& v : p.theta.back().mutable_values()) v = std::normal_distribution<double>(0, 1e-7)(rng);
  const fs::path path = temp_path("rt.ckpt");
  save_checkpoint(path, s, p);
  const Checkpoint c = load_checkpoint(path);
  EXPECT_EQ(c.spec, s);
  EXPECT_TRUE(bitwise_equal(c.params, p));
  const Tensor x({2, 20}, 1.1);
  EXPECT_TRUE(bitwise_equal(forward(c.params, c.spec, x).log_probs, forward(p, s, x).log_probs));
  fs::remove(path);
}

TEST(Checkpoint, InvalidFilesAreIoErrors) {
  EXPECT_THROW(load_checkpoint(temp_path("missing.ckpt")), IoError);
  const fs::path bad = temp_path("bad.ckpt");
  std::ofstream(bad) << "{\"format\": \"something-else\"}";
  EXPECT_THROW(load_checkpoint(bad), IoError);
  std::ofstream(bad) << "{ not json";
  EXPECT_THROW(load_checkpoint(bad), IoError);
  fs::remove(bad);
}
