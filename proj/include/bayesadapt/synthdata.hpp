#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "bayesadapt/tensor.hpp"

namespace bayesadapt {

// Mixes a base seed with a stream id (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Gaussian class clusters standing in for the underlying scene content.
struct SceneSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 20;
  std::vector<Tensor> class_means;
  double class_scale = 1.0;
  std::size_t samples_per_class = 200;
  std::size_t target_samples_per_class = 20;
  std::size_t test_samples_per_class = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

// Knobs of the default benchmark; make_scene/make_device_transforms expand
// them into concrete class means and device transforms.
struct BenchmarkSpec {
  std::size_t num_classes = 10;
  std::size_t feature_dim = 20;
  double mean_radius = 4.0;
  double class_scale = 1.0;
  std::size_t source_train_per_class = 200;
  std::size_t target_train_per_class = 20;
  std::size_t test_per_class = 200;
  std::size_t num_devices = 8;
  double gain_min = 0.5;
  double gain_max = 2.0;
  double offset_range = 2.0;
  double noise_std = 0.3;
  std::uint64_t seed = 2024;

  bool operator==(const BenchmarkSpec&) const = default;
};

// x = gain * content + offset + noise_std * N(0, 1)
struct DeviceTransform {
  std::string device_id;
  Tensor gain;
  Tensor offset;
  double noise_std = 0.0;

  static DeviceTransform identity(std::string id, std::size_t dim);
  void validate(std::size_t dim) const;
};

struct Content {
  Tensor x;  // [N x d]
  std::vector<std::size_t> labels;
};

struct LabeledSplit {
  Tensor x;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
};

// source_x[i] and target_x[i] render the same content draw.
struct ParallelSplit {
  Tensor source_x;
  Tensor target_x;
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
  LabeledSplit source() const { return {source_x, labels}; }
  LabeledSplit target() const { return {target_x, labels}; }
};

struct ParallelDataset {
  std::string device_id;
  DeviceTransform transform;
  ParallelSplit train;
  ParallelSplit test;
};

struct SourceDataset {
  LabeledSplit train;
  LabeledSplit test;
};

struct Benchmark {
  SceneSpec scene;
  DeviceTransform source_device;
  SourceDataset source;
  std::vector<ParallelDataset> targets;

  const ParallelDataset& target(const std::string& device_id) const;
};

// Class means on a sphere of the given radius.
SceneSpec make_scene(const BenchmarkSpec& spec);
// Device ids B, C, s1, s2, ... with log-uniform gains and uniform offsets.
std::vector<DeviceTransform> make_device_transforms(const BenchmarkSpec& spec);

// samples_per_class draws per class, class-major order.
Content generate_content(const SceneSpec& spec, std::size_t samples_per_class, std::uint64_t seed);
inline Content generate_content(const SceneSpec& spec) {
  return generate_content(spec, spec.samples_per_class, spec.seed);
}

Tensor apply_device(const Tensor& content, const DeviceTransform& transform, std::uint64_t seed);

// Splits class-major content into the first `train_per_class` of each class
// and the rest.
std::pair<Content, Content> split_stratified(const Content& content, std::size_t num_classes,
                                             std::size_t train_per_class);

// Source device A is the identity. Each target device gets its own content
// draws, rendered through both device A and the target transform.
Benchmark make_benchmark(const SceneSpec& scene, const std::vector<DeviceTransform>& device_transforms,
                         std::uint64_t seed);
Benchmark make_benchmark(const BenchmarkSpec& spec);

void save_benchmark(const std::filesystem::path& path, const Benchmark& b);
Benchmark load_benchmark(const std::filesystem::path& path);
bool bitwise_equal(const Benchmark& a, const Benchmark& b);

}  // namespace bayesadapt
