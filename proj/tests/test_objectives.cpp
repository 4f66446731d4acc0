#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "bayesadapt/checks.hpp"
#include "bayesadapt/errors.hpp"
#include "bayesadapt/gradcheck.hpp"
#include "bayesadapt/objectives.hpp"
#include "test_util.hpp"

using namespace bayesadapt;
using bayesadapt::testing::random_probs;
using bayesadapt::testing::random_tensor;

namespace {

LatentPrior gaussian_prior(Tensor means, double variance) {
  LatentPrior p;
  p.means = std::move(means);
  p.variances = Tensor(p.means.shape(), variance);
  return p;
}

Tensor log_of(const Tensor& p) {
  Tensor out = p;
  for (auto& v : out.mutable_values()) v = std::log(v);
  return out;
}

struct VbFixture {
  MlpSpec spec;
  ModelParams params;
  Tensor x;
  Tensor source_means;
  std::vector<std::size_t> labels;

  VbFixture() {
    std::mt19937_64 rng(21);
    params = init_params(spec, 21);
    x = random_tensor({6, 20}, rng);
    source_means = random_tensor({6, 32}, rng, 0.5);
    labels = {0, 1, 2, 3, 4, 5};
  }

  LossBreakdown loss(const AdaptHyper& h, NoiseSource noise, const Tensor* teacher = nullptr) const {
    Graph g;
    const auto vars = bind_parameters(g, params);
    return ba_vb_loss(vars, spec, g.constant(x), labels, source_means, h, noise, teacher).breakdown();
  }
};

}  // namespace

TEST(CrossEntropy, KnownValue) {
  Graph g;
  const std::vector<std::size_t> label{2};
  const Var lp = log_softmax(g.constant(Tensor::matrix({{1, 2, 3}})));
  EXPECT_NEAR(cross_entropy_hard(lp, label).value().item(), 0.40760596444438030448, 1e-12);
}

TEST(SoftKl, KnownValueAndZeroAtTeacher) {
  Graph g;
  const Var half = g.constant(log_of(Tensor::matrix({{0.5, 0.5}})));
  EXPECT_NEAR(soft_kl_loss(half, Tensor::matrix({{0.25, 0.75}})).value().item(), 0.130812035941136959129, 1e-12);
  std::mt19937_64 rng(1);
  const Tensor t = random_probs(5, 7, rng);
  EXPECT_NEAR(soft_kl_loss(g.constant(log_of(t)), t).value().item(), 0.0, 1e-12);
}

TEST(SoftKl, TeacherMustBeNormalized) {
  Graph g;
  const Var lp = g.constant(log_of(Tensor::matrix({{0.5, 0.5}})));
  EXPECT_THROW(soft_kl_loss(lp, Tensor::matrix({{0.5, 0.6}})), ContractError);
  EXPECT_THROW(soft_kl_loss(lp, Tensor::matrix({{1.2, -0.2}})), ContractError);
  EXPECT_THROW(soft_kl_loss(lp, Tensor::matrix({{0.5, 0.5}, {0.5, 0.5}})), DimensionError);
}

TEST(TsCombined, MixesSoftAndHard) {
  Graph g;
  const std::vector<std::size_t> label{0};
  const Var lp = log_softmax(g.constant(Tensor::matrix({{1, 2, 3}})));
  const auto terms = ts_combined_loss(lp, Tensor::matrix({{0.1, 0.2, 0.7}}), label, 0.9);
  const auto b = terms.breakdown();
  EXPECT_NEAR(b.total, 0.245969267155376726778, 1e-12);
  EXPECT_EQ(b.penalty_term, 0.0);
  EXPECT_EQ(b.likelihood_term, b.total);
  // Weight 0 is plain cross-entropy.
  EXPECT_NEAR(ts_combined_loss(lp, Tensor::matrix({{0.1, 0.2, 0.7}}), label, 0.0).breakdown().total,
              2.40760596444438030448, 1e-12);
  EXPECT_THROW(ts_combined_loss(lp, Tensor::matrix({{0.1, 0.2, 0.7}}), label, 1.5), ContractError);
}

TEST(MapGaussian, KnownValueAndZeroAtMean) {
  Graph g;
  const LatentPrior prior = gaussian_prior(Tensor::matrix({{0, 0}, {1, 1}}), 1.0);
  // (1 + 4)/2 for row 0, 0 for row 1, mean over 2 rows, alpha 2.
  EXPECT_NEAR(ba_map_gaussian_penalty(g.constant(Tensor::matrix({{1, 2}, {1, 1}})), prior, 2.0).value().item(), 2.5,
              1e-15);
  EXPECT_EQ(ba_map_gaussian_penalty(g.constant(prior.means), prior, 3.0).value().item(), 0.0);
}

TEST(MapGaussian, AlphaLinearityAndZero) {
  std::mt19937_64 rng(2);
  const Tensor z = random_tensor({4, 3}, rng);
  const LatentPrior prior = gaussian_prior(random_tensor({4, 3}, rng), 0.7);
  Graph g;
  const double one = ba_map_gaussian_penalty(g.constant(z), prior, 1.0).value().item();
  for (double a : {0.0, 0.25, 2.0, 10.0}) {
    EXPECT_NEAR(ba_map_gaussian_penalty(g.constant(z), prior, a).value().item(), a * one, 1e-12 * (1 + a * one));
  }
}

TEST(MapGaussian, Errors) {
  Graph g;
  LatentPrior prior = gaussian_prior(Tensor::matrix({{0, 0}}), 1.0);
  EXPECT_THROW(ba_map_gaussian_penalty(g.constant(Tensor::matrix({{1, 2, 3}})), prior, 1.0), DimensionError);
  EXPECT_THROW(ba_map_gaussian_penalty(g.constant(Tensor::matrix({{1, 2}})), prior, -1.0), ContractError);
  prior.variances = Tensor::matrix({{1.0, 0.0}});
  EXPECT_THROW(ba_map_gaussian_penalty(g.constant(Tensor::matrix({{1, 2}})), prior, 1.0), ContractError);
}

TEST(MapDirichlet, KnownValue) {
  Graph g;
  const Var ps = g.constant(Tensor::matrix({{0.6, 0.4}}));
  EXPECT_NEAR(ba_map_dirichlet_penalty(ps, Tensor::matrix({{0.2, 0.8}}), 0.5).value().item(),
              0.417598855126261094394, 1e-12);
}

TEST(MapDirichlet, ZeroStudentProbabilityUsesFloor) {
  Graph g;
  const double v = ba_map_dirichlet_penalty(g.constant(Tensor::matrix({{0.0, 1.0}})), Tensor::matrix({{0.5, 0.5}}), 1.0)
                       .value()
                       .item();
  EXPECT_NEAR(v, -0.5 * std::log(kProbabilityFloor), 1e-9);
}

// With the teacher as the Dirichlet mode and alpha = 1 the penalty differs
// from the soft-target KL only by the teacher entropy, which has no
// gradient: the two objectives share every gradient.
TEST(MapDirichlet, EquivalentToSoftTargetTerm) {
  std::mt19937_64 rng(3);
  for (int pair = 0; pair < 200; ++pair) {
    const std::size_t k = 2 + pair % 9;
    const Tensor teacher = random_probs(3, k, rng);
    const Tensor logits = random_tensor({3, k}, rng, 2.0);
    Tensor alpha = teacher;
    for (auto& v : alpha.mutable_values()) v += 1.0;
    EXPECT_LE(max_abs_diff(dirichlet_mode(alpha), teacher), 1e-12);

    Graph g1;
    Var w1 = g1.parameter(logits);
    const Var kl = soft_kl_loss(log_softmax(w1), teacher);
    const double kl_value = kl.value().item();
    const Tensor kl_grad = g1.backward(kl).of(w1);

    Graph g2;
    Var w2 = g2.parameter(logits);
    const Var pen = ba_map_dirichlet_penalty(exp(log_softmax(w2)), dirichlet_mode(alpha), 1.0);
    const double pen_value = pen.value().item();
    const Tensor pen_grad = g2.backward(pen).of(w2);

    double entropy = 0.0;
    for (std::size_t r = 0; r < 3; ++r) entropy += shannon_entropy(teacher.row(r).values());
    EXPECT_NEAR(pen_value, kl_value + entropy / 3.0, 1e-10);
    EXPECT_LE(max_abs_diff(kl_grad, pen_grad), 1e-10);
  }
}

TEST(DirichletMode, KnownValuesAndDomain) {
  EXPECT_EQ(dirichlet_mode(Tensor::matrix({{2, 1, 1}})), Tensor::matrix({{1, 0, 0}}));
  EXPECT_LE(max_abs_diff(dirichlet_mode(Tensor::matrix({{3, 2, 2}})), Tensor::matrix({{0.5, 0.25, 0.25}})), 1e-15);
  EXPECT_THROW(dirichlet_mode(Tensor::matrix({{0.5, 2, 2}})), DomainError);
  EXPECT_THROW(dirichlet_mode(Tensor::matrix({{1, 1, 1}})), DomainError);
}

TEST(Entropy, KnownValues) {
  const std::vector<double> uniform{0.5, 0.5}, certain{1.0, 0.0};
  EXPECT_NEAR(shannon_entropy(uniform), std::log(2.0), 1e-15);
  EXPECT_EQ(shannon_entropy(certain), 0.0);
}

TEST(BaVb, PenaltyIndependentOfMonteCarloCount) {
  const VbFixture f;
  AdaptHyper h;
  const double p1 = f.loss(h, NoiseSource::seeded(5)).penalty_term;
  for (std::size_t mc : {2u, 4u, 9u}) {
    h.mc_samples = mc;
    EXPECT_EQ(f.loss(h, NoiseSource::seeded(5)).penalty_term, p1);
  }
}

TEST(BaVb, MonteCarloAverageMatchesSingleDraws) {
  const VbFixture f;
  AdaptHyper h;
  h.mc_samples = 3;
  const double averaged = f.loss(h, NoiseSource::seeded(77)).likelihood_term;

  // Replay the same noise stream one draw at a time.
  NoiseSource replay = NoiseSource::seeded(77);
  const ForwardResult natural = forward(f.params, f.spec, f.x);
  double total = 0.0;
  for (int s = 0; s < 3; ++s) {
    Tensor z = natural.latent;
    const Tensor eps = replay.standard_normal(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += h.sigma * eps[i];
    const Tensor lp = forward_with_injected_latent(f.params, f.spec, f.x, z);
    for (std::size_t r = 0; r < f.labels.size(); ++r) total -= lp.at(r, f.labels[r]);
  }
  EXPECT_NEAR(averaged, total / (3.0 * f.labels.size()), 1e-12);
}

TEST(BaVb, ZeroNoiseIsCrossEntropyPlusResidual) {
  const VbFixture f;
  AdaptHyper h;
  h.sigma = 2.0;
  const auto b = f.loss(h, NoiseSource::zeros());
  const ForwardResult r = forward(f.params, f.spec, f.x);
  double ce = 0.0, sq = 0.0;
  for (std::size_t i = 0; i < f.labels.size(); ++i) ce -= r.log_probs.at(i, f.labels[i]);
  for (std::size_t i = 0; i < r.latent.size(); ++i) sq += std::pow(r.latent[i] - f.source_means[i], 2);
  EXPECT_NEAR(b.likelihood_term, ce / 6.0, 1e-12);
  EXPECT_NEAR(b.penalty_term, sq / (2 * 4.0) / 6.0, 1e-12);
  EXPECT_NEAR(b.total, b.likelihood_term + b.penalty_term, 1e-12);

  h.vb_kl_weight = 0.0;
  EXPECT_EQ(f.loss(h, NoiseSource::zeros()).penalty_term, 0.0);
}

TEST(BaVb, ReparameterizedNoiseReachesTheHeadOnly) {
  const VbFixture f;
  AdaptHyper h;
  const auto a = f.loss(h, NoiseSource::seeded(1));
  const auto b = f.loss(h, NoiseSource::seeded(2));
  EXPECT_EQ(a.penalty_term, b.penalty_term);
  EXPECT_NE(a.likelihood_term, b.likelihood_term);
  EXPECT_EQ(a.total, f.loss(h, NoiseSource::seeded(1)).total);
}

TEST(BaVb, Errors) {
  const VbFixture f;
  AdaptHyper h;
  h.sigma = 0.0;
  EXPECT_THROW(f.loss(h, NoiseSource::zeros()), ContractError);
  h.sigma = 1.0;
  h.mc_samples = 0;
  EXPECT_THROW(f.loss(h, NoiseSource::zeros()), ContractError);
  h.mc_samples = 1;
  VbFixture wrong;
  wrong.source_means = Tensor({6, 10});
  EXPECT_THROW(wrong.loss(h, NoiseSource::zeros()), DimensionError);
}

TEST(AdaptHyper, ValidationRejectsBadValues) {
  EXPECT_NO_THROW(AdaptHyper{}.validate());
  AdaptHyper h;
  h.sigma = -1;
  EXPECT_THROW(h.validate(), ConfigError);
  h = {};
  h.alpha = -0.1;
  EXPECT_THROW(h.validate(), ConfigError);
  h = {};
  h.ts_soft_weight = 1.1;
  EXPECT_THROW(h.validate(), ConfigError);
}

TEST(Prior, SharedVarianceAndSourceLatentMeans) {
  MlpSpec s;
  const SourceModel src = freeze(init_params(s, 3), s);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({7, 20}, rng);
  PriorOptions o;
  o.shared_variance = 0.4;
  const LatentPrior p = compute_prior(src, x, o);
  EXPECT_TRUE(bitwise_equal(p.means, src.forward(x).latent));
  EXPECT_EQ(p.variances, Tensor({7, 32}, 0.4));
  const std::vector<std::size_t> rows{6, 0};
  const LatentPrior sel = p.select(rows);
  EXPECT_EQ(sel.means.row(0), p.means.row(6));

  o.variance_mode = VarianceMode::EmpiricalPerCoordinate;
  const LatentPrior emp = compute_prior(src, x, o);
  for (double v : emp.variances.values()) EXPECT_GE(v, o.variance_floor);

  o.kind = PriorKind::SoftOutputs;
  const LatentPrior soft = compute_prior(src, x, o);
  Tensor expected = src.forward(x).log_probs;
  for (auto& v : expected.mutable_values()) v = std::exp(v);
  EXPECT_LE(max_abs_diff(soft.soft_outputs, expected), 1e-15);
}

TEST(Objectives, GradientsMatchFiniteDifferences) {
  for (const auto& c : run_self_checks()) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Objectives, GaussianPenaltyGradientThroughNetwork) {
  MlpSpec s;
  s.hidden_dims = {6, 5};
  s.input_dim = 4;
  s.num_classes = 3;
  std::mt19937_64 rng(8);
  const Tensor x = random_tensor({5, 4}, rng);
  const LatentPrior prior = gaussian_prior(random_tensor({5, 5}, rng, 0.3), 0.8);
  const std::vector<std::size_t> labels{0, 1, 2, 1, 0};
  const LossBuilder loss = [&](Graph& g, std::span<const Var> p) {
    const ModelParams shapes = init_params(s, 0);
    ParamVars v;
    v.theta.assign(p.begin(), p.begin() + static_cast<long>(shapes.theta.size()));
    v.omega.assign(p.begin() + static_cast<long>(shapes.theta.size()), p.end());
    const auto f = forward(v, s, g.constant(x));
    return add(cross_entropy_hard(f.log_probs, labels), ba_map_gaussian_penalty(f.latent, prior, 0.7));
  };
  const auto report = finite_diff_check(loss, init_params(s, 8).flatten(), 1e-5, 1e-4);
  EXPECT_TRUE(report.passed()) << report.summary();
}
