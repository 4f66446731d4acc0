#include "bayesadapt/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>

#include "bayesadapt/checks.hpp"
#include "bayesadapt/errors.hpp"
#include "bayesadapt/harness.hpp"

namespace bayesadapt {

namespace fs = std::filesystem;

namespace {

struct CommonOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string method;
  std::string device;
  std::size_t workers = 0;
};

ExperimentConfig resolve_config(const CommonOptions& o) {
  ExperimentConfig c;
  if (!o.config.empty()) {
    c = load_experiment(o.config);
  } else if (fs::exists("default.config")) {
    c = load_experiment("default.config");
  } else if (fs::exists(BAYESADAPT_DEFAULT_CONFIG)) {
    c = load_experiment(BAYESADAPT_DEFAULT_CONFIG);
  }
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.workers) c.workers = o.workers;
  return c;
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "Experiment config file (default: ./default.config)");
  cmd->add_option("--out", o.out, "Output directory (overrides the config)");
}

}  // namespace

int cli_main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian latent-variable adaptation benchmark"};
  app.require_subcommand(1);
  CommonOptions o;

  auto* generate = app.add_subcommand("generate", "Build the benchmark datasets and write them to disk");
  add_common(generate, o);

  auto* train = app.add_subcommand("train-source", "Train the device-A source model for one seed");
  add_common(train, o);
  train->add_option("--seed", o.seed, "Training seed");

  auto* adapt = app.add_subcommand("adapt", "Run a single (method, device, seed) cell");
  add_common(adapt, o);
  adapt->add_option("--method", o.method, "Adaptation method")->required();
  adapt->add_option("--device", o.device, "Target device id (default: first configured device)");
  adapt->add_option("--seed", o.seed, "Seed (default: first configured seed)");

  auto* run = app.add_subcommand("run", "Run the full experiment matrix");
  add_common(run, o);
  run->add_option("--method", o.method, "Restrict the matrix to one method");
  run->add_option("--seed", o.seed, "Restrict the matrix to one seed");
  run->add_option("--workers", o.workers, "Worker threads (default: hardware threads)");

  auto* report = app.add_subcommand("report", "Summarize persisted records");
  add_common(report, o);

  auto* check = app.add_subcommand("check", "Run gradient and equivalence self-checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (check->parsed()) {
      bool ok = true;
      for (const auto& r : run_self_checks()) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << " (" << r.detail << ")\n";
        ok = ok && r.passed;
      }
      return ok ? 0 : 1;
    }

    ExperimentConfig config = resolve_config(o);
    if (!o.method.empty() && run->parsed()) config.methods = {method_from_string(o.method)};
    if (o.seed && run->parsed()) config.seeds = {*o.seed};
    config.validate();

    if (generate->parsed()) {
      const Benchmark b = make_benchmark(config.benchmark);
      fs::create_directories(config.output_dir);
      const fs::path path = config.output_dir / "benchmark.json";
      save_benchmark(path, b);
      out << "wrote " << path.string() << " (" << b.source.train.size() << " source training samples, "
          << b.targets.size() << " target devices)\n";
      return 0;
    }
    if (train->parsed()) {
      const std::uint64_t seed = o.seed.value_or(config.seeds.front());
      const Benchmark b = make_benchmark(config.benchmark);
      fs::create_directories(config.output_dir);
      const SourceModel m = obtain_source_model(config, b, seed);
      out << std::fixed << std::setprecision(2);
      out << "device A: " << 100.0 * evaluate_accuracy(m, b.source.test) << "%\n";
      for (const auto& t : b.targets) {
        out << "device " << t.device_id << ": " << 100.0 * evaluate_accuracy(m, t.test.target()) << "%\n";
      }
      return 0;
    }
    if (adapt->parsed()) {
      const Method method = method_from_string(o.method);
      const std::string device = o.device.empty() ? config.devices.front() : o.device;
      const std::uint64_t seed = o.seed.value_or(config.seeds.front());
      const Benchmark b = make_benchmark(config.benchmark);
      fs::create_directories(config.output_dir / "records");
      const SourceModel m = obtain_source_model(config, b, seed);
      const ResultRecord r = run_cell(config, b, m, method, device, seed);
      const fs::path p = record_path(config.output_dir, method, device, seed);
      write_file_atomic(p, to_json(r).dump(1));
      out << std::fixed << std::setprecision(2) << to_string(method) << " on " << device << " seed " << seed << ": "
          << 100.0 * r.test_accuracy << "% (source model " << 100.0 * r.source_accuracy << "%) -> " << p.string()
          << "\n";
      return 0;
    }
    if (run->parsed()) {
      const MatrixRun mr = run_matrix(config, &out);
      out << "trained " << mr.trained << " cells, skipped " << mr.skipped << "\n";
      const auto rows = summarize(mr.records);
      out << render_summary_table(rows);
      write_file_atomic(config.output_dir / "summary.csv", render_summary_csv(rows));
      return 0;
    }
    if (report->parsed()) {
      const auto records = load_records(config.output_dir);
      if (records.empty()) {
        err << "error: no records under " << (config.output_dir / "records").string() << "\n";
        return 1;
      }
      const auto rows = summarize(records);
      out << render_summary_table(rows);
      write_file_atomic(config.output_dir / "summary.csv", render_summary_csv(rows));
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace bayesadapt
