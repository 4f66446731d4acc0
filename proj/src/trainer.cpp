#include "bayesadapt/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "bayesadapt/errors.hpp"

namespace bayesadapt {

std::string to_string(Method m) {
  switch (m) {
    case Method::NoTransfer: return "no-transfer";
    case Method::OneHot: return "one-hot";
    case Method::TS: return "ts";
    case Method::BaVb: return "ba-vb";
    case Method::BaMapGauss: return "ba-map-g";
    case Method::BaMapDirichlet: return "ba-map-d";
  }
  return "unknown";
}

Method method_from_string(const std::string& s) {
  for (Method m : kAllMethods)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown method '" + s + "'");
}

bool is_bayesian(Method m) {
  return m == Method::BaVb || m == Method::BaMapGauss || m == Method::BaMapDirichlet;
}

TrainConfig TrainConfig::adaptation_defaults(Method m) {
  TrainConfig c;
  c.method = m;
  c.combine_with_ts = is_bayesian(m);
  return c;
}

TrainConfig TrainConfig::source_defaults() {
  TrainConfig c;
  c.method = Method::NoTransfer;
  c.epochs = 40;
  c.learning_rate = 0.05;
  return c;
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  hyper.validate();
  if (combine_with_ts && (method == Method::NoTransfer || method == Method::OneHot)) {
    throw ConfigError("combine_with_ts needs a teacher; method " + to_string(method) + " has none");
  }
}

void sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads, double learning_rate, double momentum,
              std::vector<Tensor>& velocity) {
  if (grads.size() != params.size()) throw DimensionError("sgd_step: parameter and gradient counts differ");
  if (velocity.empty())
    for (const auto& p : params) velocity.emplace_back(p.shape(), 0.0);
  if (velocity.size() != params.size()) throw DimensionError("sgd_step: velocity count differs");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || velocity[i].shape() != params[i].shape()) {
      throw DimensionError("sgd_step: gradient " + shape_str(grads[i].shape()) + " does not match parameter " +
                           shape_str(params[i].shape()));
    }
    auto p = params[i].mutable_values();
    auto v = velocity[i].mutable_values();
    const auto g = grads[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum * v[j] - learning_rate * g[j];
      p[j] += v[j];
    }
  }
}

std::vector<std::size_t> predict(const ModelParams& params, const MlpSpec& spec, const Tensor& x) {
  const Tensor lp = forward(params, spec, x).log_probs;
  std::vector<std::size_t> out(lp.rows());
  for (std::size_t r = 0; r < lp.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < lp.cols(); ++c)
      if (lp.at(r, c) > lp.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

double evaluate_accuracy(const ModelParams& params, const MlpSpec& spec, const LabeledSplit& split) {
  if (split.size() == 0) throw ContractError("evaluate_accuracy: empty split");
  const auto pred = predict(params, spec, split.x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == split.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double evaluate_accuracy(const SourceModel& model, const LabeledSplit& split) {
  return evaluate_accuracy(model.params(), model.spec(), split);
}

namespace {

enum : std::uint64_t { kShuffleStream = 11, kNoiseStream = 12 };

void shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

// Builds the loss for one batch of rows on `g`.
using BatchLoss = std::function<ObjectiveTerms(Graph& g, const ParamVars& p, std::span<const std::size_t> rows)>;

Metrics optimize(const MlpSpec& spec, ModelParams& params, std::size_t num_samples, const TrainConfig& config,
                 const BatchLoss& loss, const StepObserver& observer) {
  Metrics metrics;
  std::mt19937_64 rng(derive_seed(config.seed, kShuffleStream));
  std::vector<std::size_t> order(num_samples);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<Tensor> velocity;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order, rng);
    LossBreakdown acc;
    for (std::size_t start = 0; start < num_samples; start += config.batch_size) {
      const std::size_t end = std::min(num_samples, start + config.batch_size);
      const std::span<const std::size_t> rows(order.data() + start, end - start);
      Graph g;
      const ParamVars p = bind_parameters(g, params);
      const ObjectiveTerms terms = loss(g, p, rows);
      const Gradients grads = g.backward(terms.total);
      std::vector<Tensor> flat_grads;
      for (Var v : p.theta) flat_grads.push_back(grads.of(v));
      for (Var v : p.omega) flat_grads.push_back(grads.of(v));
      std::vector<Tensor> flat = params.flatten();
      sgd_step(flat, flat_grads, config.learning_rate, config.momentum, velocity);
      params = ModelParams::unflatten(spec, std::move(flat));

      const LossBreakdown b = terms.breakdown();
      metrics.step_losses.push_back(b.total);
      const double w = static_cast<double>(rows.size());
      acc.total += w * b.total;
      acc.likelihood_term += w * b.likelihood_term;
      acc.penalty_term += w * b.penalty_term;
      ++step;
      if (observer) observer(step, params);
    }
    const double n = static_cast<double>(num_samples);
    metrics.epoch_losses.push_back({acc.total / n, acc.likelihood_term / n, acc.penalty_term / n});
  }
  return metrics;
}

std::vector<std::size_t> pick_labels(const std::vector<std::size_t>& labels, std::span<const std::size_t> rows) {
  std::vector<std::size_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

SourceTraining train_source(const MlpSpec& spec, const SourceDataset& data, const TrainConfig& config) {
  const auto t0 = std::chrono::steady_clock::now();
  spec.validate();
  config.validate();
  if (data.train.size() == 0) throw ContractError("train_source: empty source training split");
  ModelParams params = init_params(spec, config.seed);
  const auto& train = data.train;
  Metrics m = optimize(spec, params, train.size(), config,
                       [&](Graph& g, const ParamVars& p, std::span<const std::size_t> rows) {
                         const Var x = g.constant(train.x.select_rows(rows));
                         const auto labels = pick_labels(train.labels, rows);
                         const Var lik = cross_entropy_hard(forward(p, spec, x).log_probs, labels);
                         const Var pen = g.constant(Tensor::scalar(0.0));
                         return ObjectiveTerms{add(lik, pen), lik, pen};
                       },
                       {});
  SourceModel model = freeze(params, spec);
  m.test_accuracy = data.test.size() ? evaluate_accuracy(model, data.test) : 0.0;
  m.wall_seconds = seconds_since(t0);
  return {std::move(model), std::move(m)};
}

Adaptation adapt_target(const SourceModel& source, const ParallelDataset& target, const TrainConfig& config,
                        const StepObserver& observer) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();
  const MlpSpec& spec = source.spec();
  const ParallelSplit& train = target.train;
  if (train.size() == 0) throw ContractError("adapt_target: empty target training split");
  const Method method = config.method;

  const bool needs_parallel = method == Method::TS || is_bayesian(method);
  if (needs_parallel && train.source_x.rows() != train.size()) {
    throw ConfigError("method " + to_string(method) + " needs a paired source sample for every target sample");
  }
  if ((method == Method::BaMapGauss || method == Method::BaVb) && spec.latent_site == LatentSite::SoftOutput) {
    throw ConfigError("Gaussian latent priors need a hidden or logit latent site, not soft outputs");
  }

  // Teacher soft outputs and latent means come from the frozen source model
  // on the paired source-device renderings.
  Tensor teacher;
  if (method == Method::TS || method == Method::BaMapDirichlet || config.combine_with_ts) {
    PriorOptions soft = config.prior;
    soft.kind = PriorKind::SoftOutputs;
    teacher = compute_prior(source, train.source_x, soft).soft_outputs;
  }
  LatentPrior gauss;
  if (method == Method::BaMapGauss || method == Method::BaVb) {
    PriorOptions opts = config.prior;
    opts.kind = PriorKind::GaussianPerSample;
    gauss = compute_prior(source, train.source_x, opts);
  }

  ModelParams params = method == Method::NoTransfer ? init_params(spec, config.seed) : source.params();
  NoiseSource noise = config.pin_noise_to_zero ? NoiseSource::zeros()
                                               : NoiseSource::seeded(derive_seed(config.seed, kNoiseStream));
  const AdaptHyper& h = config.hyper;

  auto loss = [&](Graph& g, const ParamVars& p, std::span<const std::size_t> rows) -> ObjectiveTerms {
    const Var x = g.constant(train.target_x.select_rows(rows));
    const auto labels = pick_labels(train.labels, rows);
    Tensor teacher_rows;
    const Tensor* tp = nullptr;
    if (!teacher.empty()) {
      teacher_rows = teacher.select_rows(rows);
      if (method == Method::TS || config.combine_with_ts) tp = &teacher_rows;
    }
    if (method == Method::BaVb) {
      const Tensor means = gauss.means.select_rows(rows);
      return ba_vb_loss(p, spec, x, labels, means, h, noise, tp);
    }
    const LatentForward f = forward(p, spec, x);
    const Var lik = likelihood_loss(f.log_probs, labels, tp, h.ts_soft_weight);
    Var pen{};
    switch (method) {
      case Method::BaMapGauss: pen = ba_map_gaussian_penalty(f.latent, gauss.select(rows), h.alpha); break;
      case Method::BaMapDirichlet:
        pen = ba_map_dirichlet_penalty(exp(f.log_probs), teacher_rows, h.alpha);
        break;
      default: pen = g.constant(Tensor::scalar(0.0)); break;
    }
    return {add(lik, pen), lik, pen};
  };

  Metrics m = optimize(spec, params, train.size(), config, loss, observer);
  m.test_accuracy = evaluate_accuracy(params, spec, target.test.target());
  m.wall_seconds = seconds_since(t0);
  return {std::move(params), std::move(m)};
}

}  // namespace bayesadapt
