#include "bayesadapt/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "bayesadapt/errors.hpp"
#include "bayesadapt/json_io.hpp"

namespace bayesadapt {

std::string to_string(LatentSite site) {
  switch (site) {
    case LatentSite::HiddenBeforeLast: return "hidden-before-last";
    case LatentSite::Logits: return "logits";
    case LatentSite::SoftOutput: return "soft-output";
  }
  return "unknown";
}

LatentSite latent_site_from_string(const std::string& s) {
  if (s == "hidden-before-last") return LatentSite::HiddenBeforeLast;
  if (s == "logits") return LatentSite::Logits;
  if (s == "soft-output") return LatentSite::SoftOutput;
  throw ConfigError("unknown latent site '" + s + "'");
}

void MlpSpec::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be at least 2");
  for (auto h : hidden_dims)
    if (h == 0) throw ConfigError("hidden layer widths must be positive");
  if (latent_site == LatentSite::HiddenBeforeLast && hidden_dims.empty()) {
    throw ConfigError("latent site hidden-before-last requires at least one hidden layer");
  }
}

std::size_t MlpSpec::theta_layers() const {
  return latent_site == LatentSite::HiddenBeforeLast ? hidden_dims.size() : num_layers();
}

std::size_t MlpSpec::latent_dim() const {
  return latent_site == LatentSite::HiddenBeforeLast ? hidden_dims.back() : num_classes;
}

std::vector<Tensor> ModelParams::flatten() const {
  std::vector<Tensor> out = theta;
  out.insert(out.end(), omega.begin(), omega.end());
  return out;
}

ModelParams ModelParams::unflatten(const MlpSpec& spec, std::vector<Tensor> tensors) {
  if (tensors.size() != 2 * spec.num_layers()) {
    throw DimensionError("expected " + std::to_string(2 * spec.num_layers()) + " tensors, got " +
                         std::to_string(tensors.size()));
  }
  const std::size_t split = 2 * spec.theta_layers();
  ModelParams p;
  p.theta.assign(std::make_move_iterator(tensors.begin()), std::make_move_iterator(tensors.begin() + split));
  p.omega.assign(std::make_move_iterator(tensors.begin() + split), std::make_move_iterator(tensors.end()));
  return p;
}

bool bitwise_equal(const ModelParams& a, const ModelParams& b) {
  const auto fa = a.flatten();
  const auto fb = b.flatten();
  if (fa.size() != fb.size() || a.theta.size() != b.theta.size()) return false;
  for (std::size_t i = 0; i < fa.size(); ++i)
    if (!bitwise_equal(fa[i], fb[i])) return false;
  return true;
}

namespace {

std::vector<std::size_t> layer_widths(const MlpSpec& spec) {
  std::vector<std::size_t> w{spec.input_dim};
  w.insert(w.end(), spec.hidden_dims.begin(), spec.hidden_dims.end());
  w.push_back(spec.num_classes);
  return w;
}

void check_shapes(const MlpSpec& spec, const ModelParams& params) {
  const auto flat = params.flatten();
  const auto w = layer_widths(spec);
  if (flat.size() != 2 * spec.num_layers() || params.theta.size() != 2 * spec.theta_layers()) {
    throw DimensionError("parameter count does not match the network spec");
  }
  for (std::size_t l = 0; l < spec.num_layers(); ++l) {
    if (flat[2 * l].shape() != Shape{w[l], w[l + 1]} || flat[2 * l + 1].shape() != Shape{w[l + 1]}) {
      throw DimensionError("layer " + std::to_string(l) + " shapes " + shape_str(flat[2 * l].shape()) + ", " +
                           shape_str(flat[2 * l + 1].shape()) + " do not chain");
    }
  }
}

Var linear(Var x, Var w, Var b) { return add_bias(matmul(x, w), b); }

// Layer l of the flattened layer list, wherever it lives.
std::pair<Var, Var> layer(const ParamVars& p, std::size_t l) {
  const std::size_t nt = p.theta.size() / 2;
  if (l < nt) return {p.theta[2 * l], p.theta[2 * l + 1]};
  l -= nt;
  return {p.omega[2 * l], p.omega[2 * l + 1]};
}

constexpr double kProbFloor = 1e-12;

}  // namespace

ModelParams init_params(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const auto w = layer_widths(spec);
  std::vector<Tensor> tensors;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor weight({w[l], w[l + 1]});
    for (auto& v : weight.mutable_values()) v = dist(rng);
    tensors.push_back(std::move(weight));
    tensors.emplace_back(Shape{w[l + 1]}, 0.0);
  }
  return ModelParams::unflatten(spec, std::move(tensors));
}

ParamVars bind_parameters(Graph& g, const ModelParams& params) {
  ParamVars out;
  for (const auto& t : params.theta) out.theta.push_back(g.parameter(t));
  for (const auto& t : params.omega) out.omega.push_back(g.parameter(t));
  return out;
}

ParamVars bind_constants(Graph& g, const ModelParams& params) {
  ParamVars out;
  for (const auto& t : params.theta) out.theta.push_back(g.constant(t));
  for (const auto& t : params.omega) out.omega.push_back(g.constant(t));
  return out;
}

Var latent_of(const ParamVars& p, const MlpSpec& spec, Var x) {
  if (x.value().rank() != 2 || x.value().cols() != spec.input_dim) {
    throw DimensionError("input " + shape_str(x.shape()) + " does not have width " + std::to_string(spec.input_dim));
  }
  Var h = x;
  for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
    auto [w, b] = layer(p, l);
    h = relu(linear(h, w, b));
  }
  if (spec.latent_site == LatentSite::HiddenBeforeLast) return h;
  auto [w, b] = layer(p, spec.hidden_dims.size());
  Var logits = linear(h, w, b);
  if (spec.latent_site == LatentSite::Logits) return logits;
  return exp(log_softmax(logits));
}

Var head(const ParamVars& p, const MlpSpec& spec, Var z) {
  if (z.value().rank() != 2 || z.value().cols() != spec.latent_dim()) {
    throw DimensionError("latent " + shape_str(z.shape()) + " does not have width " + std::to_string(spec.latent_dim()));
  }
  switch (spec.latent_site) {
    case LatentSite::HiddenBeforeLast: {
      auto [w, b] = layer(p, spec.hidden_dims.size());
      return log_softmax(linear(z, w, b));
    }
    case LatentSite::Logits: return log_softmax(z);
    case LatentSite::SoftOutput: return clamped_log(z, kProbFloor);
  }
  throw ConfigError("unknown latent site");
}

LatentForward forward(const ParamVars& p, const MlpSpec& spec, Var x) {
  if (spec.latent_site == LatentSite::SoftOutput) {
    // log-probabilities straight from the logits rather than log(exp(.)).
    Var h = x;
    if (x.value().rank() != 2 || x.value().cols() != spec.input_dim) {
      throw DimensionError("input " + shape_str(x.shape()) + " does not have width " + std::to_string(spec.input_dim));
    }
    for (std::size_t l = 0; l < spec.hidden_dims.size(); ++l) {
      auto [w, b] = layer(p, l);
      h = relu(linear(h, w, b));
    }
    auto [w, b] = layer(p, spec.hidden_dims.size());
    Var lp = log_softmax(linear(h, w, b));
    return {exp(lp), lp};
  }
  Var z = latent_of(p, spec, x);
  return {z, head(p, spec, z)};
}

ForwardResult forward(const ModelParams& params, const MlpSpec& spec, const Tensor& x) {
  check_shapes(spec, params);
  Graph g;
  const ParamVars p = bind_constants(g, params);
  const LatentForward f = forward(p, spec, g.constant(x));
  return {f.latent.value(), f.log_probs.value()};
}

Tensor forward_with_injected_latent(const ModelParams& params, const MlpSpec& spec, const Tensor& x,
                                    const Tensor& z_inj) {
  check_shapes(spec, params);
  Graph g;
  const ParamVars p = bind_constants(g, params);
  const Var natural = latent_of(p, spec, g.constant(x));
  if (natural.shape() != z_inj.shape()) {
    throw DimensionError("injected latent " + shape_str(z_inj.shape()) + " does not match latent site shape " +
                         shape_str(natural.shape()));
  }
  return head(p, spec, g.constant(z_inj)).value();
}

SourceModel::SourceModel(MlpSpec spec, ModelParams params)
    : spec_(std::move(spec)), params_(std::make_shared<const ModelParams>(std::move(params))) {
  spec_.validate();
  check_shapes(spec_, *params_);
}

ForwardResult SourceModel::forward(const Tensor& x) const { return bayesadapt::forward(*params_, spec_, x); }

SourceModel freeze(const ModelParams& params, const MlpSpec& spec) { return SourceModel(spec, params); }

// ---------------------------------------------------------------------------
// Serialization

void to_json(json& j, const Tensor& t) {
  j = json{{"shape", t.shape()}, {"values", t.data()}};
}

void from_json(const json& j, Tensor& t) {
  t = Tensor(j.at("shape").get<Shape>(), j.at("values").get<std::vector<double>>());
}

void to_json(json& j, const MlpSpec& s) {
  j = json{{"input_dim", s.input_dim},
           {"hidden_dims", s.hidden_dims},
           {"num_classes", s.num_classes},
           {"latent_site", to_string(s.latent_site)}};
}

void from_json(const json& j, MlpSpec& s) {
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden_dims = j.at("hidden_dims").get<std::vector<std::size_t>>();
  s.num_classes = j.at("num_classes").get<std::size_t>();
  s.latent_site = latent_site_from_string(j.value("latent_site", std::string("hidden-before-last")));
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

namespace {
constexpr const char* kCheckpointFormat = "bayesadapt-checkpoint";
constexpr int kCheckpointVersion = 1;
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const MlpSpec& spec, const ModelParams& params) {
  check_shapes(spec, params);
  json tensors = json::array();
  const auto flat = params.flatten();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const std::size_t l = i / 2;
    const bool in_theta = l < spec.theta_layers();
    json t = flat[i];
    t["name"] = std::string(in_theta ? "theta" : "omega") + ".layer" + std::to_string(l) +
                (i % 2 == 0 ? ".weight" : ".bias");
    tensors.push_back(std::move(t));
  }
  json j{{"format", kCheckpointFormat}, {"version", kCheckpointVersion}, {"spec", spec}, {"tensors", tensors}};
  write_file_atomic(path, j.dump());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (j.value("format", std::string()) != kCheckpointFormat) throw IoError(path.string() + " is not a checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) throw IoError("unsupported checkpoint version in " + path.string());
  Checkpoint c;
  c.spec = j.at("spec").get<MlpSpec>();
  c.spec.validate();
  std::vector<Tensor> tensors;
  for (const auto& t : j.at("tensors")) tensors.push_back(t.get<Tensor>());
  c.params = ModelParams::unflatten(c.spec, std::move(tensors));
  check_shapes(c.spec, c.params);
  return c;
}

}  // namespace bayesadapt
