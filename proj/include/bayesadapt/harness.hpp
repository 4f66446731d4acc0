#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "bayesadapt/json_io.hpp"
#include "bayesadapt/synthdata.hpp"
#include "bayesadapt/trainer.hpp"

namespace bayesadapt {

struct ExperimentConfig {
  BenchmarkSpec benchmark;
  MlpSpec model;  // input_dim and num_classes follow the benchmark
  TrainConfig source_training = TrainConfig::source_defaults();
  TrainConfig adaptation = TrainConfig::adaptation_defaults(Method::OneHot);
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::vector<std::string> devices{"B", "C", "s1", "s2", "s3", "s4", "s5", "s6"};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  // Per-method overrides of adaptation fields, keyed by method name.
  std::map<std::string, json> overrides;
  std::filesystem::path output_dir = "results";
  std::size_t workers = 0;  // 0 = hardware concurrency

  void validate() const;
  MlpSpec model_spec() const;
  // Adaptation config of one cell after defaults and overrides.
  TrainConfig cell_config(Method method, std::uint64_t seed) const;
  TrainConfig source_config(std::uint64_t seed) const;
};

json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_from_json(const json& j);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Adaptation fields written to and read from configs and hashes.
json train_config_json(const TrainConfig& c);
void apply_train_overrides(TrainConfig& c, const json& j);

struct ResultRecord {
  Method method = Method::OneHot;
  std::string device_id;
  std::uint64_t seed = 0;
  double test_accuracy = 0.0;
  double source_accuracy = 0.0;  // frozen source model on the same target test split
  std::vector<LossBreakdown> loss_trace;
  double wall_seconds = 0.0;
  std::string config_hash;
};

json to_json(const ResultRecord& r);
ResultRecord record_from_json(const json& j);
// Everything except wall time, which is the only nondeterministic field.
bool same_outcome(const ResultRecord& a, const ResultRecord& b);

std::string fnv1a_hex(const std::string& text);
std::string cell_hash(const ExperimentConfig& c, Method method, const std::string& device, std::uint64_t seed);
std::string source_hash(const ExperimentConfig& c, std::uint64_t seed);
std::filesystem::path record_path(const std::filesystem::path& out, Method method, const std::string& device,
                                  std::uint64_t seed);

// Trains (or reloads from the output directory) the source model for a seed.
SourceModel obtain_source_model(const ExperimentConfig& c, const Benchmark& bench, std::uint64_t seed);

ResultRecord run_cell(const ExperimentConfig& c, const Benchmark& bench, const SourceModel& source, Method method,
                      const std::string& device, std::uint64_t seed);

struct MatrixRun {
  std::vector<ResultRecord> records;  // in (method, device, seed) config order
  std::size_t trained = 0;
  std::size_t skipped = 0;
};

// Runs every (method, device, seed) cell. Cells whose record already exists
// with a matching config hash are skipped. Records are written atomically
// and indexed in results.csv.
MatrixRun run_matrix(const ExperimentConfig& config, std::ostream* progress = nullptr);

std::vector<ResultRecord> load_records(const std::filesystem::path& out);

struct SummaryRow {
  Method method;
  std::size_t count = 0;
  double mean_accuracy = 0.0;  // fraction
  double std_accuracy = 0.0;   // sample standard deviation, fraction
  double mean_percent() const { return 100.0 * mean_accuracy; }
  double std_percent() const { return 100.0 * std_accuracy; }
};

// Per-method mean and sample standard deviation over devices x seeds, in the
// fixed reporting order of kAllMethods.
std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records);
std::string render_summary_table(const std::vector<SummaryRow>& rows);
std::string render_summary_csv(const std::vector<SummaryRow>& rows);

}  // namespace bayesadapt
