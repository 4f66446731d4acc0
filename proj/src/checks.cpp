#include "bayesadapt/checks.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>

#include "bayesadapt/gradcheck.hpp"
#include "bayesadapt/model.hpp"
#include "bayesadapt/objectives.hpp"

namespace bayesadapt {

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kEpsilon = 1e-5;

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t({r, c});
  for (auto& v : t.mutable_values()) v = n(rng);
  return t;
}

Tensor random_distribution(std::size_t r, std::size_t k, std::mt19937_64& rng) {
  Tensor t = random_matrix(r, k, rng, 1.5);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (t.at(i, j) = std::exp(t.at(i, j)));
    for (std::size_t j = 0; j < k; ++j) t.at(i, j) /= s;
  }
  return t;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::vector<CheckResult> gradient_checks(std::uint64_t seed) {
  std::vector<CheckResult> results;
  std::mt19937_64 rng(seed);

  MlpSpec spec;  // 20 -> 64 -> 32 -> 10
  const std::size_t batch = 8;
  const ModelParams params = init_params(spec, seed + 1);
  const Tensor x = random_matrix(batch, spec.input_dim, rng);
  std::vector<std::size_t> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) labels[i] = i % spec.num_classes;
  const Tensor teacher = random_distribution(batch, spec.num_classes, rng);
  LatentPrior prior;
  prior.means = random_matrix(batch, spec.latent_dim(), rng, 0.5);
  prior.variances = Tensor({batch, spec.latent_dim()}, 0.7);
  AdaptHyper hyper;
  hyper.mc_samples = 2;

  auto model_loss = [&](auto&& objective) -> LossBuilder {
    return [&spec, &x, objective](Graph& g, std::span<const Var> vars) {
      ParamVars p;
      const std::size_t nt = 2 * spec.theta_layers();
      p.theta.assign(vars.begin(), vars.begin() + static_cast<std::ptrdiff_t>(nt));
      p.omega.assign(vars.begin() + static_cast<std::ptrdiff_t>(nt), vars.end());
      return objective(g, p, g.constant(x));
    };
  };

  const std::vector<std::pair<std::string, LossBuilder>> objectives{
      {"gradient: hard cross-entropy",
       model_loss([&](Graph&, const ParamVars& p, Var xv) {
         return cross_entropy_hard(forward(p, spec, xv).log_probs, labels);
       })},
      {"gradient: TS combined",
       model_loss([&](Graph&, const ParamVars& p, Var xv) {
         return ts_combined_loss(forward(p, spec, xv).log_probs, teacher, labels, 0.9).total;
       })},
      {"gradient: BA-MAP Gaussian",
       model_loss([&](Graph&, const ParamVars& p, Var xv) {
         const auto f = forward(p, spec, xv);
         return add(cross_entropy_hard(f.log_probs, labels), ba_map_gaussian_penalty(f.latent, prior, 1.0));
       })},
      {"gradient: BA-MAP Dirichlet",
       model_loss([&](Graph&, const ParamVars& p, Var xv) {
         const auto f = forward(p, spec, xv);
         return add(cross_entropy_hard(f.log_probs, labels), ba_map_dirichlet_penalty(exp(f.log_probs), teacher, 1.0));
       })},
      {"gradient: BA-VB (pinned noise)",
       model_loss([&](Graph&, const ParamVars& p, Var xv) {
         NoiseSource noise = NoiseSource::seeded(99);
         return ba_vb_loss(p, spec, xv, labels, prior.means, hyper, noise, &teacher).total;
       })},
  };
  for (const auto& [name, loss] : objectives) {
    const auto report = finite_diff_check(loss, params.flatten(), kEpsilon, kGradTolerance);
    results.push_back({name, report.passed(), "worst relative error " + fmt(report.worst())});
  }
  return results;
}

std::vector<CheckResult> run_self_checks() {
  std::vector<CheckResult> results = gradient_checks(7);
  std::mt19937_64 rng(8);

  // Dirichlet penalty == alpha * (soft KL + teacher entropy).
  {
    double worst = 0.0;
    for (std::size_t t = 0; t < 200; ++t) {
      const std::size_t k = t % 2 ? 10 : 3;
      const Tensor ps = random_distribution(1, k, rng);
      const Tensor logits = random_matrix(1, k, rng);
      Graph g;
      const Var lp = log_softmax(g.constant(logits));
      const double lhs = ba_map_dirichlet_penalty(exp(lp), ps, 1.5).value().item();
      const double rhs = 1.5 * (soft_kl_loss(lp, ps).value().item() + shannon_entropy(ps.values()));
      worst = std::max(worst, std::abs(lhs - rhs));
    }
    results.push_back({"Dirichlet penalty equals TS loss plus teacher entropy", worst <= 1e-10,
                       "max deviation " + fmt(worst)});
  }

  // Zero-penalty identities.
  {
    MlpSpec spec;
    const ModelParams params = init_params(spec, 3);
    const Tensor x = random_matrix(8, spec.input_dim, rng);
    std::vector<std::size_t> labels(8);
    for (std::size_t i = 0; i < 8; ++i) labels[i] = i % spec.num_classes;
    AdaptHyper hyper;
    hyper.mc_samples = 2;
    Graph g;
    const ParamVars p = bind_constants(g, params);
    const auto f = forward(p, spec, g.constant(x));
    LatentPrior self;
    self.means = f.latent.value();
    self.variances = Tensor(self.means.shape(), 1.0);
    const double gauss = ba_map_gaussian_penalty(f.latent, self, 1.0).value().item();
    NoiseSource zero = NoiseSource::zeros();
    const auto vb = ba_vb_loss(p, spec, g.constant(x), labels, self.means, hyper, zero).breakdown();
    const double ce = cross_entropy_hard(f.log_probs, labels).value().item();
    const bool ok = std::abs(gauss) <= 1e-12 && std::abs(vb.penalty_term) <= 1e-12 &&
                    std::abs(vb.likelihood_term - ce) <= 1e-12;
    results.push_back({"zero-penalty identities", ok,
                       "gauss " + fmt(gauss) + ", vb penalty " + fmt(vb.penalty_term) + ", vb-ce " +
                           fmt(vb.likelihood_term - ce)});
  }
  return results;
}

}  // namespace bayesadapt
