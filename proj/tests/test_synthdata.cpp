#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include <unistd.h>

#include "bayesadapt/errors.hpp"
#include "bayesadapt/synthdata.hpp"

using namespace bayesadapt;
namespace fs = std::filesystem;

namespace {

BenchmarkSpec small_spec() {
  BenchmarkSpec s;
  s.num_classes = 4;
  s.feature_dim = 5;
  s.source_train_per_class = 30;
  s.target_train_per_class = 6;
  s.test_per_class = 10;
  s.num_devices = 3;
  return s;
}

}  // namespace

TEST(Scene, MeansLieOnTheSphereAndAreDistinct) {
  const SceneSpec s = make_scene(BenchmarkSpec{});
  ASSERT_EQ(s.class_means.size(), 10u);
  for (const auto& m : s.class_means) {
    double n = 0.0;
    for (double v : m.values()) n += v * v;
    EXPECT_NEAR(std::sqrt(n), 4.0, 1e-12);
  }
  SceneSpec dup = s;
  dup.class_means[1] = dup.class_means[0];
  EXPECT_THROW(dup.validate(), ConfigError);
}

TEST(Content, ZeroClassScaleCollapsesToMeans) {
  SceneSpec s = make_scene(small_spec());
  s.class_scale = 0.0;
  const Content c = generate_content(s, 7, 3);
  ASSERT_EQ(c.labels.size(), 28u);
  for (std::size_t r = 0; r < 28; ++r) EXPECT_EQ(c.x.row(r), s.class_means[c.labels[r]]);
}

TEST(Content, SampleMomentsConvergeAtLargeN) {
  const SceneSpec s = make_scene(small_spec());
  const std::size_t n = 1000;
  const Content c = generate_content(s, n, 11);
  for (std::size_t k = 0; k < s.num_classes; ++k) {
    for (std::size_t j = 0; j < s.feature_dim; ++j) {
      double mean = 0.0, sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += c.x.at(k * n + i, j);
      mean /= n;
      for (std::size_t i = 0; i < n; ++i) sq += std::pow(c.x.at(k * n + i, j) - mean, 2);
      // Five standard errors for the mean, a loose band for the variance.
      EXPECT_NEAR(mean, s.class_means[k][j], 5.0 / std::sqrt(double(n)));
      EXPECT_NEAR(sq / (n - 1), 1.0, 0.15);
    }
  }
}

TEST(Content, SameSeedSameDraws) {
  const SceneSpec s = make_scene(small_spec());
  EXPECT_TRUE(bitwise_equal(generate_content(s, 5, 9).x, generate_content(s, 5, 9).x));
  EXPECT_FALSE(bitwise_equal(generate_content(s, 5, 9).x, generate_content(s, 5, 10).x));
}

TEST(Device, IdentityIsExact) {
  const SceneSpec s = make_scene(small_spec());
  const Content c = generate_content(s, 4, 2);
  EXPECT_TRUE(bitwise_equal(apply_device(c.x, DeviceTransform::identity("A", 5), 7), c.x));
}

TEST(Device, NoiselessGainDoubles) {
  const Tensor x = Tensor::matrix({{1.0, -2.5, 0.0}, {3.0, 0.25, -1.0}});
  DeviceTransform t = DeviceTransform::identity("g2", 3);
  t.gain = Tensor({3}, 2.0);
  const Tensor y = apply_device(x, t, 0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], 2.0 * x[i]);
  t.offset = Tensor::vector({1, 0, -1});
  EXPECT_EQ(apply_device(x, t, 0).at(1, 2), -3.0);
}

TEST(Device, InvalidTransforms) {
  DeviceTransform t = DeviceTransform::identity("x", 3);
  EXPECT_THROW(apply_device(Tensor({2, 4}), t, 0), DimensionError);
  t.gain = Tensor::vector({1, 0, 1});
  EXPECT_THROW(apply_device(Tensor({2, 3}), t, 0), ConfigError);
  t = DeviceTransform::identity("x", 3);
  t.noise_std = -1.0;
  EXPECT_THROW(apply_device(Tensor({2, 3}), t, 0), ConfigError);
}

TEST(Device, EightDistinctDevices) {
  const auto ts = make_device_transforms(BenchmarkSpec{});
  ASSERT_EQ(ts.size(), 8u);
  const std::vector<std::string> ids{"B", "C", "s1", "s2", "s3", "s4", "s5", "s6"};
  std::set<std::vector<double>> gains;
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_EQ(ts[k].device_id, ids[k]);
    for (double g : ts[k].gain.values()) {
      EXPECT_GE(g, 0.5);
      EXPECT_LE(g, 2.0);
    }
    for (double o : ts[k].offset.values()) EXPECT_LE(std::abs(o), 2.0);
    gains.insert(ts[k].gain.data());
  }
  EXPECT_EQ(gains.size(), 8u);
  BenchmarkSpec none;
  none.num_devices = 0;
  EXPECT_THROW(make_device_transforms(none), ConfigError);
}

TEST(Split, StratifiedCounts) {
  const SceneSpec s = make_scene(small_spec());
  const Content c = generate_content(s, 9, 1);
  const auto [train, test] = split_stratified(c, 4, 3);
  std::vector<std::size_t> tr(4), te(4);
  for (auto k : train.labels) ++tr[k];
  for (auto k : test.labels) ++te[k];
  EXPECT_EQ(tr, (std::vector<std::size_t>{3, 3, 3, 3}));
  EXPECT_EQ(te, (std::vector<std::size_t>{6, 6, 6, 6}));
  EXPECT_EQ(train.x.row(0), c.x.row(0));
}

TEST(Benchmark, ShapesAndPairing) {
  const BenchmarkSpec spec = small_spec();
  const Benchmark b = make_benchmark(spec);
  EXPECT_EQ(b.source.train.size(), 120u);
  EXPECT_EQ(b.source.test.size(), 40u);
  ASSERT_EQ(b.targets.size(), 3u);
  for (const auto& t : b.targets) {
    EXPECT_EQ(t.train.size(), 24u);
    EXPECT_EQ(t.test.size(), 40u);
    EXPECT_EQ(t.train.source_x.shape(), t.train.target_x.shape());
    // Each target row is the transformed twin of its source row: the residual
    // is pure device noise.
    double sq = 0.0;
    for (std::size_t r = 0; r < t.train.size(); ++r) {
      for (std::size_t j = 0; j < spec.feature_dim; ++j) {
        const double pred = t.transform.gain[j] * t.train.source_x.at(r, j) + t.transform.offset[j];
        sq += std::pow(t.train.target_x.at(r, j) - pred, 2);
      }
    }
    const double rms = std::sqrt(sq / double(t.train.size() * spec.feature_dim));
    EXPECT_NEAR(rms, spec.noise_std, 0.1);
  }
  EXPECT_THROW(b.target("Z"), ConfigError);
  EXPECT_EQ(b.target("C").device_id, "C");
}

TEST(Benchmark, NoiselessPairingIsExact) {
  BenchmarkSpec spec = small_spec();
  spec.noise_std = 0.0;
  const Benchmark b = make_benchmark(spec);
  const auto& t = b.targets[0];
  EXPECT_TRUE(bitwise_equal(apply_device(t.train.source_x, t.transform, 0), t.train.target_x));
}

TEST(Benchmark, DeterministicAndRoundTrips) {
  const Benchmark a = make_benchmark(small_spec());
  EXPECT_TRUE(bitwise_equal(a, make_benchmark(small_spec())));
  BenchmarkSpec other = small_spec();
  other.seed = 7;
  EXPECT_FALSE(bitwise_equal(a, make_benchmark(other)));

  const fs::path p = fs::temp_directory_path() / ("bayesadapt-ds-" + std::to_string(::getpid()) + ".json");
  save_benchmark(p, a);
  EXPECT_TRUE(bitwise_equal(load_benchmark(p), a));
  fs::remove(p);
  EXPECT_THROW(load_benchmark(p), IoError);
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_EQ(derive_seed(1, 2), derive_seed(1, 2));
  EXPECT_NE(derive_seed(1, 2), derive_seed(1, 3));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 2));
}
