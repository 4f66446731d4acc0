#include "bayesadapt/synthdata.hpp"

#include <cmath>
#include <random>

#include "bayesadapt/errors.hpp"
#include "bayesadapt/json_io.hpp"

namespace bayesadapt {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {
enum : std::uint64_t {
  kSceneStream = 1,
  kSourceContentStream = 2,
  kDeviceStream = 100,
  kTargetContentStream = 200,
  kTargetNoiseStream = 300,
};
}  // namespace

void SceneSpec::validate() const {
  if (num_classes < 2) throw ConfigError("scene needs at least 2 classes");
  if (feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (class_means.size() != num_classes) throw ConfigError("need one mean per class");
  if (!(class_scale >= 0.0)) throw ConfigError("class_scale must be nonnegative");
  for (const auto& m : class_means)
    if (m.shape() != Shape{feature_dim}) throw DimensionError("class mean has shape " + shape_str(m.shape()));
  for (std::size_t a = 0; a < num_classes; ++a)
    for (std::size_t b = a + 1; b < num_classes; ++b)
      if (class_means[a] == class_means[b]) throw ConfigError("class means must be pairwise distinct");
}

DeviceTransform DeviceTransform::identity(std::string id, std::size_t dim) {
  return {std::move(id), Tensor({dim}, 1.0), Tensor({dim}, 0.0), 0.0};
}

void DeviceTransform::validate(std::size_t dim) const {
  if (gain.shape() != Shape{dim} || offset.shape() != Shape{dim}) {
    throw DimensionError("device " + device_id + " transform does not have dimension " + std::to_string(dim));
  }
  for (double g : gain.values())
    if (!(g > 0.0)) throw ConfigError("device gains must be positive");
  if (!(noise_std >= 0.0)) throw ConfigError("device noise_std must be nonnegative");
}

const ParallelDataset& Benchmark::target(const std::string& device_id) const {
  for (const auto& t : targets)
    if (t.device_id == device_id) return t;
  throw ConfigError("unknown device '" + device_id + "'");
}

SceneSpec make_scene(const BenchmarkSpec& spec) {
  SceneSpec s;
  s.num_classes = spec.num_classes;
  s.feature_dim = spec.feature_dim;
  s.class_scale = spec.class_scale;
  s.samples_per_class = spec.source_train_per_class;
  s.target_samples_per_class = spec.target_train_per_class;
  s.test_samples_per_class = spec.test_per_class;
  s.seed = spec.seed;
  std::mt19937_64 rng(derive_seed(spec.seed, kSceneStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    Tensor m({spec.feature_dim});
    double norm = 0.0;
    for (auto& v : m.mutable_values()) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : m.mutable_values()) v *= spec.mean_radius / norm;
    s.class_means.push_back(std::move(m));
  }
  s.validate();
  return s;
}

std::vector<DeviceTransform> make_device_transforms(const BenchmarkSpec& spec) {
  if (spec.num_devices == 0) throw ConfigError("benchmark needs at least one target device");
  if (!(spec.gain_min > 0.0 && spec.gain_max >= spec.gain_min)) throw ConfigError("invalid gain range");
  std::vector<DeviceTransform> out;
  for (std::size_t k = 0; k < spec.num_devices; ++k) {
    std::string id = k == 0 ? "B" : k == 1 ? "C" : "s" + std::to_string(k - 1);
    std::mt19937_64 rng(derive_seed(spec.seed, kDeviceStream + k));
    std::uniform_real_distribution<double> log_gain(std::log(spec.gain_min), std::log(spec.gain_max));
    std::uniform_real_distribution<double> offset(-spec.offset_range, spec.offset_range);
    DeviceTransform t{std::move(id), Tensor({spec.feature_dim}), Tensor({spec.feature_dim}), spec.noise_std};
    for (auto& g : t.gain.mutable_values()) g = std::exp(log_gain(rng));
    for (auto& o : t.offset.mutable_values()) o = offset(rng);
    out.push_back(std::move(t));
  }
  return out;
}

Content generate_content(const SceneSpec& spec, std::size_t samples_per_class, std::uint64_t seed) {
  spec.validate();
  const std::size_t d = spec.feature_dim;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Content c;
  c.x = Tensor({spec.num_classes * samples_per_class, d});
  std::size_t r = 0;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    for (std::size_t i = 0; i < samples_per_class; ++i, ++r) {
      for (std::size_t j = 0; j < d; ++j) c.x.at(r, j) = spec.class_means[k][j] + spec.class_scale * normal(rng);
      c.labels.push_back(k);
    }
  }
  return c;
}

Tensor apply_device(const Tensor& content, const DeviceTransform& transform, std::uint64_t seed) {
  const std::size_t d = content.cols();
  transform.validate(d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out = content;
  for (std::size_t r = 0; r < content.rows(); ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      double v = transform.gain[j] * content.at(r, j) + transform.offset[j];
      if (transform.noise_std > 0.0) v += transform.noise_std * normal(rng);
      out.at(r, j) = v;
    }
  }
  return out;
}

std::pair<Content, Content> split_stratified(const Content& content, std::size_t num_classes,
                                             std::size_t train_per_class) {
  std::vector<std::size_t> train_idx, test_idx;
  std::vector<std::size_t> seen(num_classes, 0);
  for (std::size_t i = 0; i < content.labels.size(); ++i) {
    const std::size_t k = content.labels[i];
    if (k >= num_classes) throw IndexError("label out of range in split");
    (seen[k]++ < train_per_class ? train_idx : test_idx).push_back(i);
  }
  auto take = [&](const std::vector<std::size_t>& idx) {
    Content c;
    if (idx.empty()) return c;
    c.x = content.x.select_rows(idx);
    for (auto i : idx) c.labels.push_back(content.labels[i]);
    return c;
  };
  return {take(train_idx), take(test_idx)};
}

Benchmark make_benchmark(const SceneSpec& scene, const std::vector<DeviceTransform>& device_transforms,
                         std::uint64_t seed) {
  scene.validate();
  if (device_transforms.empty()) throw ConfigError("benchmark needs at least one target device");
  Benchmark b;
  b.scene = scene;
  b.source_device = DeviceTransform::identity("A", scene.feature_dim);

  const std::size_t src_train = scene.samples_per_class;
  const auto source_content = generate_content(
      scene, src_train + scene.test_samples_per_class, derive_seed(seed, kSourceContentStream));
  auto [src_tr, src_te] = split_stratified(source_content, scene.num_classes, src_train);
  b.source.train = {apply_device(src_tr.x, b.source_device, 0), src_tr.labels};
  b.source.test = {apply_device(src_te.x, b.source_device, 0), src_te.labels};

  for (std::size_t k = 0; k < device_transforms.size(); ++k) {
    const DeviceTransform& t = device_transforms[k];
    const std::size_t n_train = scene.target_samples_per_class;
    const auto content = generate_content(scene, n_train + scene.test_samples_per_class,
                                          derive_seed(seed, kTargetContentStream + k));
    auto [tr, te] = split_stratified(content, scene.num_classes, n_train);
    const std::uint64_t noise_seed = derive_seed(seed, kTargetNoiseStream + k);
    ParallelDataset ds;
    ds.device_id = t.device_id;
    ds.transform = t;
    ds.train = {apply_device(tr.x, b.source_device, 0), apply_device(tr.x, t, noise_seed), tr.labels};
    ds.test = {apply_device(te.x, b.source_device, 0), apply_device(te.x, t, noise_seed + 1), te.labels};
    b.targets.push_back(std::move(ds));
  }
  return b;
}

Benchmark make_benchmark(const BenchmarkSpec& spec) {
  return make_benchmark(make_scene(spec), make_device_transforms(spec), spec.seed);
}

// ---------------------------------------------------------------------------

namespace {

constexpr const char* kDatasetFormat = "bayesadapt-dataset";
constexpr int kDatasetVersion = 1;

json transform_json(const DeviceTransform& t) {
  return {{"device_id", t.device_id}, {"gain", t.gain}, {"offset", t.offset}, {"noise_std", t.noise_std}};
}

DeviceTransform transform_from(const json& j) {
  return {j.at("device_id").get<std::string>(), j.at("gain").get<Tensor>(), j.at("offset").get<Tensor>(),
          j.at("noise_std").get<double>()};
}

json split_json(const LabeledSplit& s) { return {{"x", s.x}, {"labels", s.labels}}; }
LabeledSplit labeled_from(const json& j) {
  return {j.at("x").get<Tensor>(), j.at("labels").get<std::vector<std::size_t>>()};
}

json split_json(const ParallelSplit& s) {
  return {{"source_x", s.source_x}, {"target_x", s.target_x}, {"labels", s.labels}};
}
ParallelSplit parallel_from(const json& j) {
  return {j.at("source_x").get<Tensor>(), j.at("target_x").get<Tensor>(),
          j.at("labels").get<std::vector<std::size_t>>()};
}

bool same(const LabeledSplit& a, const LabeledSplit& b) { return bitwise_equal(a.x, b.x) && a.labels == b.labels; }
bool same(const ParallelSplit& a, const ParallelSplit& b) {
  return bitwise_equal(a.source_x, b.source_x) && bitwise_equal(a.target_x, b.target_x) && a.labels == b.labels;
}
bool same(const DeviceTransform& a, const DeviceTransform& b) {
  return a.device_id == b.device_id && bitwise_equal(a.gain, b.gain) && bitwise_equal(a.offset, b.offset) &&
         a.noise_std == b.noise_std;
}

}  // namespace

void save_benchmark(const std::filesystem::path& path, const Benchmark& b) {
  json means = json::array();
  for (const auto& m : b.scene.class_means) means.push_back(m);
  json scene{{"num_classes", b.scene.num_classes},
             {"feature_dim", b.scene.feature_dim},
             {"class_means", means},
             {"class_scale", b.scene.class_scale},
             {"samples_per_class", b.scene.samples_per_class},
             {"target_samples_per_class", b.scene.target_samples_per_class},
             {"test_samples_per_class", b.scene.test_samples_per_class},
             {"seed", b.scene.seed}};
  json targets = json::array();
  for (const auto& t : b.targets) {
    targets.push_back({{"device_id", t.device_id},
                       {"transform", transform_json(t.transform)},
                       {"train", split_json(t.train)},
                       {"test", split_json(t.test)}});
  }
  json j{{"format", kDatasetFormat},
         {"version", kDatasetVersion},
         {"scene", scene},
         {"source_device", transform_json(b.source_device)},
         {"source", {{"train", split_json(b.source.train)}, {"test", split_json(b.source.test)}}},
         {"targets", targets}};
  write_file_atomic(path, j.dump());
}

Benchmark load_benchmark(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  if (j.value("format", std::string()) != kDatasetFormat) throw IoError(path.string() + " is not a dataset file");
  if (j.value("version", 0) != kDatasetVersion) throw IoError("unsupported dataset version in " + path.string());
  Benchmark b;
  const json& s = j.at("scene");
  b.scene.num_classes = s.at("num_classes").get<std::size_t>();
  b.scene.feature_dim = s.at("feature_dim").get<std::size_t>();
  for (const auto& m : s.at("class_means")) b.scene.class_means.push_back(m.get<Tensor>());
  b.scene.class_scale = s.at("class_scale").get<double>();
  b.scene.samples_per_class = s.at("samples_per_class").get<std::size_t>();
  b.scene.target_samples_per_class = s.at("target_samples_per_class").get<std::size_t>();
  b.scene.test_samples_per_class = s.at("test_samples_per_class").get<std::size_t>();
  b.scene.seed = s.at("seed").get<std::uint64_t>();
  b.scene.validate();
  b.source_device = transform_from(j.at("source_device"));
  b.source.train = labeled_from(j.at("source").at("train"));
  b.source.test = labeled_from(j.at("source").at("test"));
  for (const auto& t : j.at("targets")) {
    ParallelDataset ds;
    ds.device_id = t.at("device_id").get<std::string>();
    ds.transform = transform_from(t.at("transform"));
    ds.train = parallel_from(t.at("train"));
    ds.test = parallel_from(t.at("test"));
    b.targets.push_back(std::move(ds));
  }
  return b;
}

bool bitwise_equal(const Benchmark& a, const Benchmark& b) {
  if (a.scene.class_means.size() != b.scene.class_means.size() || a.targets.size() != b.targets.size()) return false;
  for (std::size_t i = 0; i < a.scene.class_means.size(); ++i)
    if (!bitwise_equal(a.scene.class_means[i], b.scene.class_means[i])) return false;
  if (a.scene.class_scale != b.scene.class_scale || a.scene.seed != b.scene.seed) return false;
  if (!same(a.source_device, b.source_device) || !same(a.source.train, b.source.train) ||
      !same(a.source.test, b.source.test))
    return false;
  for (std::size_t i = 0; i < a.targets.size(); ++i) {
    const auto& x = a.targets[i];
    const auto& y = b.targets[i];
    if (x.device_id != y.device_id || !same(x.transform, y.transform) || !same(x.train, y.train) ||
        !same(x.test, y.test))
      return false;
  }
  return true;
}

}  // namespace bayesadapt
