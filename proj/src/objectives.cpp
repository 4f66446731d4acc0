#include "bayesadapt/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bayesadapt/errors.hpp"

namespace bayesadapt {

namespace {

constexpr double kNormTolerance = 1e-6;

void require_distribution_rows(const char* what, const Tensor& p) {
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double v = p.at(r, c);
      if (!(v >= 0.0)) throw ContractError(std::string(what) + " has a negative or NaN entry");
      s += v;
    }
    if (std::abs(s - 1.0) > kNormTolerance) {
      throw ContractError(std::string(what) + " row " + std::to_string(r) + " sums to " + std::to_string(s) +
                          ", not 1");
    }
  }
}

void require_same_batch(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Tensor as_matrix(const Tensor& t) { return t.rank() == 2 ? t : t.reshaped({1, t.size()}); }

}  // namespace

// ---------------------------------------------------------------------------

LatentPrior LatentPrior::select(std::span<const std::size_t> rows) const {
  LatentPrior out;
  out.kind = kind;
  out.means = means.select_rows(rows);
  if (!variances.empty()) out.variances = variances.select_rows(rows);
  if (!soft_outputs.empty()) out.soft_outputs = soft_outputs.select_rows(rows);
  return out;
}

void LatentPrior::validate() const {
  if (kind == PriorKind::GaussianPerSample) {
    if (variances.shape() != means.shape()) {
      throw DimensionError("prior variances " + shape_str(variances.shape()) + " do not match means " +
                           shape_str(means.shape()));
    }
    for (double v : variances.values())
      if (!(v > 0.0)) throw ContractError("prior variances must be positive");
  } else {
    require_distribution_rows("prior soft outputs", soft_outputs);
  }
}

LatentPrior compute_prior(const SourceModel& source, const Tensor& paired_source_x, const PriorOptions& options,
                          const Tensor& variance_reference) {
  const ForwardResult f = source.forward(paired_source_x);
  LatentPrior prior;
  prior.kind = options.kind;
  if (options.kind == PriorKind::SoftOutputs) {
    Tensor p = f.log_probs;
    for (auto& v : p.mutable_values()) v = std::exp(v);
    prior.soft_outputs = p;
    prior.means = std::move(p);
    return prior;
  }
  prior.means = f.latent;
  const std::size_t n = prior.means.rows(), d = prior.means.cols();
  if (options.variance_mode == VarianceMode::Shared) {
    if (!(options.shared_variance > 0.0)) throw ContractError("shared prior variance must be positive");
    prior.variances = Tensor({n, d}, options.shared_variance);
  } else {
    const Tensor ref = variance_reference.empty() ? prior.means : source.forward(variance_reference).latent;
    const std::size_t m = ref.rows();
    std::vector<double> var(d, 0.0);
    for (std::size_t c = 0; c < d; ++c) {
      double mu = 0.0;
      for (std::size_t r = 0; r < m; ++r) mu += ref.at(r, c);
      mu /= static_cast<double>(m);
      double s = 0.0;
      for (std::size_t r = 0; r < m; ++r) s += (ref.at(r, c) - mu) * (ref.at(r, c) - mu);
      var[c] = std::max(s / static_cast<double>(m), options.variance_floor);
    }
    prior.variances = Tensor({n, d});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < d; ++c) prior.variances.at(r, c) = var[c];
  }
  prior.validate();
  return prior;
}

void AdaptHyper::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha must be nonnegative");
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  if (!(ts_soft_weight >= 0.0 && ts_soft_weight <= 1.0)) throw ConfigError("ts_soft_weight must lie in [0, 1]");
  if (mc_samples < 1) throw ConfigError("mc_samples must be at least 1");
  if (!(vb_kl_weight >= 0.0)) throw ConfigError("vb_kl_weight must be nonnegative");
}

LossBreakdown ObjectiveTerms::breakdown() const {
  return {total.value().item(), likelihood.value().item(), penalty.value().item()};
}

Tensor NoiseSource::standard_normal(const Shape& shape) {
  Tensor t(shape, 0.0);
  if (!zero_)
    for (auto& v : t.mutable_values()) v = normal_(rng_);
  return t;
}

double shannon_entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// ---------------------------------------------------------------------------

Var cross_entropy_hard(Var log_probs, std::span<const std::size_t> labels) {
  return scale(sum(pick(log_probs, labels)), -1.0 / static_cast<double>(log_probs.value().rows()));
}

Var soft_kl_loss(Var student_log_probs, const Tensor& teacher_probs) {
  Graph& g = *student_log_probs.graph;
  const Tensor& s = student_log_probs.value();
  const Tensor teacher = as_matrix(teacher_probs);
  require_same_batch("soft_kl_loss", s, teacher);
  require_distribution_rows("teacher probabilities", teacher);
  double neg_entropy = 0.0;
  for (double v : teacher.values())
    if (v > 0.0) neg_entropy += v * std::log(v);
  const Var cross = sum(mul(student_log_probs, g.constant(teacher.reshaped(s.shape()))));
  const Var kl = sub(g.constant(Tensor::scalar(neg_entropy)), cross);
  return scale(kl, 1.0 / static_cast<double>(s.rows()));
}

ObjectiveTerms ts_combined_loss(Var student_log_probs, const Tensor& teacher_probs,
                                std::span<const std::size_t> labels, double ts_soft_weight) {
  if (!(ts_soft_weight >= 0.0 && ts_soft_weight <= 1.0)) {
    throw ContractError("ts_soft_weight must lie in [0, 1]");
  }
  Graph& g = *student_log_probs.graph;
  const Var soft = soft_kl_loss(student_log_probs, teacher_probs);
  const Var hard = cross_entropy_hard(student_log_probs, labels);
  const Var lik = add(scale(soft, ts_soft_weight), scale(hard, 1.0 - ts_soft_weight));
  const Var pen = g.constant(Tensor::scalar(0.0));
  return {add(lik, pen), lik, pen};
}

Var ba_map_gaussian_penalty(Var z_target, const LatentPrior& prior, double alpha) {
  if (prior.kind != PriorKind::GaussianPerSample) throw ContractError("Gaussian penalty needs a Gaussian prior");
  if (!(alpha >= 0.0)) throw ContractError("alpha must be nonnegative");
  Graph& g = *z_target.graph;
  const Tensor& z = z_target.value();
  require_same_batch("ba_map_gaussian_penalty", z, prior.means);
  prior.validate();
  Tensor weights = prior.variances.reshaped(z.shape());
  for (auto& v : weights.mutable_values()) v = 1.0 / (2.0 * v);
  const Var residual = sub(z_target, g.constant(prior.means.reshaped(z.shape())));
  const Var weighted = sum(mul(square(residual), g.constant(std::move(weights))));
  return scale(weighted, alpha / static_cast<double>(z.rows()));
}

Var ba_map_dirichlet_penalty(Var student_probs, const Tensor& teacher_probs, double alpha) {
  if (!(alpha >= 0.0)) throw ContractError("alpha must be nonnegative");
  Graph& g = *student_probs.graph;
  const Tensor& pt = student_probs.value();
  const Tensor teacher = as_matrix(teacher_probs);
  require_same_batch("ba_map_dirichlet_penalty", pt, teacher);
  require_distribution_rows("teacher probabilities", teacher);
  require_distribution_rows("student probabilities", as_matrix(pt));
  const Var logp = clamped_log(student_probs, kProbabilityFloor);
  const Var cross = sum(mul(logp, g.constant(teacher.reshaped(pt.shape()))));
  return scale(cross, -alpha / static_cast<double>(pt.rows()));
}

Tensor dirichlet_mode(const Tensor& dirichlet_params) {
  Tensor out = dirichlet_params;
  const std::size_t m = dirichlet_params.rows(), k = dirichlet_params.cols();
  for (std::size_t r = 0; r < m; ++r) {
    double excess = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double a = dirichlet_params[r * k + j];
      if (!(a >= 1.0)) {
        throw DomainError("Dirichlet parameter " + std::to_string(a) + " < 1 has no interior or boundary mode");
      }
      excess += a - 1.0;
    }
    if (!(excess > 0.0)) throw DomainError("Dirichlet parameters sum to K; the mode is undefined");
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = (dirichlet_params[r * k + j] - 1.0) / excess;
  }
  return out;
}

Var likelihood_loss(Var log_probs, std::span<const std::size_t> labels, const Tensor* teacher_probs,
                    double ts_soft_weight) {
  if (teacher_probs == nullptr) return cross_entropy_hard(log_probs, labels);
  return ts_combined_loss(log_probs, *teacher_probs, labels, ts_soft_weight).likelihood;
}

ObjectiveTerms ba_vb_loss(const ParamVars& target, const MlpSpec& spec, Var x_target,
                          std::span<const std::size_t> labels, const Tensor& source_means, const AdaptHyper& hyper,
                          NoiseSource& noise, const Tensor* teacher_probs) {
  if (!(hyper.sigma > 0.0)) throw ContractError("ba_vb_loss: sigma must be positive");
  if (hyper.mc_samples < 1) throw ContractError("ba_vb_loss: mc_samples must be at least 1");
  Graph& g = *x_target.graph;
  const Var mu = latent_of(target, spec, x_target);
  require_same_batch("ba_vb_loss", mu.value(), source_means);

  Var lik{};
  for (std::size_t s = 0; s < hyper.mc_samples; ++s) {
    Tensor eps = noise.standard_normal(mu.shape());
    for (auto& v : eps.mutable_values()) v *= hyper.sigma;
    const Var z = add(mu, g.constant(std::move(eps)));
    const Var term = likelihood_loss(head(target, spec, z), labels, teacher_probs, hyper.ts_soft_weight);
    lik = s == 0 ? term : add(lik, term);
  }
  if (hyper.mc_samples > 1) lik = scale(lik, 1.0 / static_cast<double>(hyper.mc_samples));

  const Var residual = sub(mu, g.constant(source_means.reshaped(mu.shape())));
  const double coef = hyper.vb_kl_weight / (2.0 * hyper.sigma * hyper.sigma);
  const Var pen = scale(sum(square(residual)), coef / static_cast<double>(mu.value().rows()));
  return {add(lik, pen), lik, pen};
}

}  // namespace bayesadapt
