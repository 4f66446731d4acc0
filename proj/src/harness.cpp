#include "bayesadapt/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "bayesadapt/errors.hpp"

namespace bayesadapt {

namespace fs = std::filesystem;

namespace {

constexpr int kRecordVersion = 1;

json benchmark_json(const BenchmarkSpec& b) {
  return {{"num_classes", b.num_classes},
          {"feature_dim", b.feature_dim},
          {"mean_radius", b.mean_radius},
          {"class_scale", b.class_scale},
          {"source_train_per_class", b.source_train_per_class},
          {"target_train_per_class", b.target_train_per_class},
          {"test_per_class", b.test_per_class},
          {"num_devices", b.num_devices},
          {"gain_min", b.gain_min},
          {"gain_max", b.gain_max},
          {"offset_range", b.offset_range},
          {"noise_std", b.noise_std},
          {"seed", b.seed}};
}

template <typename T>
void maybe(const json& j, const char* key, T& dst) {
  if (auto it = j.find(key); it != j.end()) dst = it->get<T>();
}

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

BenchmarkSpec benchmark_from(const json& j) {
  reject_unknown(j,
                 {"num_classes", "feature_dim", "mean_radius", "class_scale", "source_train_per_class",
                  "target_train_per_class", "test_per_class", "num_devices", "gain_min", "gain_max", "offset_range",
                  "noise_std", "seed"},
                 "benchmark");
  BenchmarkSpec b;
  maybe(j, "num_classes", b.num_classes);
  maybe(j, "feature_dim", b.feature_dim);
  maybe(j, "mean_radius", b.mean_radius);
  maybe(j, "class_scale", b.class_scale);
  maybe(j, "source_train_per_class", b.source_train_per_class);
  maybe(j, "target_train_per_class", b.target_train_per_class);
  maybe(j, "test_per_class", b.test_per_class);
  maybe(j, "num_devices", b.num_devices);
  maybe(j, "gain_min", b.gain_min);
  maybe(j, "gain_max", b.gain_max);
  maybe(j, "offset_range", b.offset_range);
  maybe(j, "noise_std", b.noise_std);
  maybe(j, "seed", b.seed);
  return b;
}

std::string variance_mode_name(VarianceMode m) {
  return m == VarianceMode::Shared ? "shared" : "empirical-per-coordinate";
}

VarianceMode variance_mode_from(const std::string& s) {
  if (s == "shared") return VarianceMode::Shared;
  if (s == "empirical-per-coordinate") return VarianceMode::EmpiricalPerCoordinate;
  throw ConfigError("unknown variance_mode '" + s + "'");
}

std::size_t method_rank(Method m) {
  return static_cast<std::size_t>(std::find(kAllMethods.begin(), kAllMethods.end(), m) - kAllMethods.begin());
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string csv_line(const ResultRecord& r) {
  return to_string(r.method) + "," + r.device_id + "," + std::to_string(r.seed) + "," + fmt_double(r.test_accuracy) +
         "," + fmt_double(r.wall_seconds) + "," + r.config_hash + "\n";
}

constexpr const char* kCsvHeader = "method,device,seed,accuracy,walltime,config_hash\n";

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

json train_config_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"alpha", c.hyper.alpha},
          {"sigma", c.hyper.sigma},
          {"ts_soft_weight", c.hyper.ts_soft_weight},
          {"mc_samples", c.hyper.mc_samples},
          {"vb_kl_weight", c.hyper.vb_kl_weight},
          {"variance_mode", variance_mode_name(c.prior.variance_mode)},
          {"prior_variance", c.prior.shared_variance},
          {"variance_floor", c.prior.variance_floor},
          {"combine_with_ts", c.combine_with_ts},
          {"pin_noise_to_zero", c.pin_noise_to_zero}};
}

void apply_train_overrides(TrainConfig& c, const json& j) {
  reject_unknown(j,
                 {"epochs", "batch_size", "learning_rate", "momentum", "alpha", "sigma", "ts_soft_weight",
                  "mc_samples", "vb_kl_weight", "variance_mode", "prior_variance", "variance_floor",
                  "combine_with_ts", "pin_noise_to_zero"},
                 "training config");
  maybe(j, "epochs", c.epochs);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "learning_rate", c.learning_rate);
  maybe(j, "momentum", c.momentum);
  maybe(j, "alpha", c.hyper.alpha);
  maybe(j, "sigma", c.hyper.sigma);
  maybe(j, "ts_soft_weight", c.hyper.ts_soft_weight);
  maybe(j, "mc_samples", c.hyper.mc_samples);
  maybe(j, "vb_kl_weight", c.hyper.vb_kl_weight);
  if (j.contains("variance_mode")) c.prior.variance_mode = variance_mode_from(j["variance_mode"].get<std::string>());
  maybe(j, "prior_variance", c.prior.shared_variance);
  maybe(j, "variance_floor", c.prior.variance_floor);
  maybe(j, "combine_with_ts", c.combine_with_ts);
  maybe(j, "pin_noise_to_zero", c.pin_noise_to_zero);
}

MlpSpec ExperimentConfig::model_spec() const {
  MlpSpec s = model;
  s.input_dim = benchmark.feature_dim;
  s.num_classes = benchmark.num_classes;
  return s;
}

TrainConfig ExperimentConfig::source_config(std::uint64_t seed) const {
  TrainConfig c = source_training;
  c.method = Method::NoTransfer;
  c.combine_with_ts = false;
  c.seed = seed;
  return c;
}

TrainConfig ExperimentConfig::cell_config(Method method, std::uint64_t seed) const {
  TrainConfig c = adaptation;
  c.method = method;
  c.seed = seed;
  c.combine_with_ts = is_bayesian(method);
  if (auto it = overrides.find(to_string(method)); it != overrides.end()) apply_train_overrides(c, it->second);
  return c;
}

void ExperimentConfig::validate() const {
  if (methods.empty() || devices.empty() || seeds.empty()) {
    throw ConfigError("experiment needs at least one method, device and seed");
  }
  std::set<Method> m(methods.begin(), methods.end());
  std::set<std::string> d(devices.begin(), devices.end());
  std::set<std::uint64_t> s(seeds.begin(), seeds.end());
  if (m.size() != methods.size() || d.size() != devices.size() || s.size() != seeds.size()) {
    throw ConfigError("experiment cells must be unique; remove duplicate methods, devices or seeds");
  }
  for (const auto& [name, _] : overrides) method_from_string(name);
  model_spec().validate();
  source_config(0).validate();
  for (Method mm : methods) cell_config(mm, 0).validate();
  const auto transforms = make_device_transforms(benchmark);
  for (const auto& dev : devices) {
    if (std::none_of(transforms.begin(), transforms.end(), [&](const DeviceTransform& t) { return t.device_id == dev; }))
      throw ConfigError("device '" + dev + "' is not part of the benchmark");
  }
}

json to_json(const ExperimentConfig& c) {
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json src = train_config_json(c.source_training);
  json adapt = train_config_json(c.adaptation);
  for (auto* j : {&src, &adapt}) {
    j->erase("combine_with_ts");
    j->erase("pin_noise_to_zero");
  }
  json overrides = json::object();
  for (const auto& [k, v] : c.overrides) overrides[k] = v;
  return {{"benchmark", benchmark_json(c.benchmark)},
          {"model", {{"hidden_dims", c.model.hidden_dims}, {"latent_site", to_string(c.model.latent_site)}}},
          {"source_training",
           {{"epochs", c.source_training.epochs},
            {"batch_size", c.source_training.batch_size},
            {"learning_rate", c.source_training.learning_rate},
            {"momentum", c.source_training.momentum}}},
          {"adaptation", adapt},
          {"methods", methods},
          {"devices", c.devices},
          {"seeds", c.seeds},
          {"overrides", overrides},
          {"workers", c.workers},
          {"output_dir", c.output_dir.string()}};
}

ExperimentConfig experiment_from_json(const json& j) {
  reject_unknown(j,
                 {"benchmark", "model", "source_training", "adaptation", "methods", "devices", "seeds", "overrides",
                  "workers", "output_dir"},
                 "experiment config");
  ExperimentConfig c;
  if (j.contains("benchmark")) c.benchmark = benchmark_from(j["benchmark"]);
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, {"hidden_dims", "latent_site"}, "model");
    maybe(m, "hidden_dims", c.model.hidden_dims);
    if (m.contains("latent_site")) c.model.latent_site = latent_site_from_string(m["latent_site"].get<std::string>());
  }
  if (j.contains("source_training")) {
    const json& s = j["source_training"];
    reject_unknown(s, {"epochs", "batch_size", "learning_rate", "momentum"}, "source_training");
    apply_train_overrides(c.source_training, s);
  }
  if (j.contains("adaptation")) {
    const json& a = j["adaptation"];
    if (a.contains("combine_with_ts")) throw ConfigError("combine_with_ts is set per method under overrides");
    apply_train_overrides(c.adaptation, a);
  }
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
  }
  maybe(j, "devices", c.devices);
  maybe(j, "seeds", c.seeds);
  if (j.contains("overrides")) {
    for (auto it = j["overrides"].begin(); it != j["overrides"].end(); ++it) {
      method_from_string(it.key());
      c.overrides[it.key()] = it.value();
    }
  }
  maybe(j, "workers", c.workers);
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  try {
    return experiment_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("invalid config " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Records

json to_json(const ResultRecord& r) {
  json trace = json::array();
  for (const auto& b : r.loss_trace) trace.push_back({b.total, b.likelihood_term, b.penalty_term});
  return {{"version", kRecordVersion},
          {"method", to_string(r.method)},
          {"device", r.device_id},
          {"seed", r.seed},
          {"test_accuracy", r.test_accuracy},
          {"source_accuracy", r.source_accuracy},
          {"loss_trace", trace},
          {"wall_seconds", r.wall_seconds},
          {"config_hash", r.config_hash}};
}

ResultRecord record_from_json(const json& j) {
  if (j.value("version", 0) != kRecordVersion) throw IoError("unsupported record version");
  ResultRecord r;
  r.method = method_from_string(j.at("method").get<std::string>());
  r.device_id = j.at("device").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.test_accuracy = j.at("test_accuracy").get<double>();
  r.source_accuracy = j.at("source_accuracy").get<double>();
  for (const auto& t : j.at("loss_trace")) r.loss_trace.push_back({t.at(0), t.at(1), t.at(2)});
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.config_hash = j.at("config_hash").get<std::string>();
  return r;
}

bool same_outcome(const ResultRecord& a, const ResultRecord& b) {
  json ja = to_json(a), jb = to_json(b);
  ja.erase("wall_seconds");
  jb.erase("wall_seconds");
  return ja.dump() == jb.dump();
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string source_hash(const ExperimentConfig& c, std::uint64_t seed) {
  const json j{{"benchmark", benchmark_json(c.benchmark)},
               {"model", c.model_spec()},
               {"source_training", train_config_json(c.source_config(seed))},
               {"seed", seed}};
  return fnv1a_hex(j.dump());
}

std::string cell_hash(const ExperimentConfig& c, Method method, const std::string& device, std::uint64_t seed) {
  const json j{{"record_version", kRecordVersion},
               {"source", source_hash(c, seed)},
               {"adaptation", train_config_json(c.cell_config(method, seed))},
               {"method", to_string(method)},
               {"device", device},
               {"seed", seed}};
  return fnv1a_hex(j.dump());
}

fs::path record_path(const fs::path& out, Method method, const std::string& device, std::uint64_t seed) {
  return out / "records" / (to_string(method) + "__" + device + "__seed" + std::to_string(seed) + ".json");
}

SourceModel obtain_source_model(const ExperimentConfig& c, const Benchmark& bench, std::uint64_t seed) {
  const fs::path dir = c.output_dir / "sources";
  const fs::path ckpt = dir / ("source-seed" + std::to_string(seed) + "-" + source_hash(c, seed) + ".ckpt");
  std::error_code ec;
  if (fs::exists(ckpt, ec)) {
    Checkpoint cp = load_checkpoint(ckpt);
    return SourceModel(cp.spec, cp.params);
  }
  SourceTraining st = train_source(c.model_spec(), bench.source, c.source_config(seed));
  fs::create_directories(dir, ec);
  save_checkpoint(ckpt, st.model.spec(), st.model.params());
  return st.model;
}

ResultRecord run_cell(const ExperimentConfig& c, const Benchmark& bench, const SourceModel& source, Method method,
                      const std::string& device, std::uint64_t seed) {
  const ParallelDataset& target = bench.target(device);
  const Adaptation a = adapt_target(source, target, c.cell_config(method, seed));
  ResultRecord r;
  r.method = method;
  r.device_id = device;
  r.seed = seed;
  r.test_accuracy = a.metrics.test_accuracy;
  r.source_accuracy = evaluate_accuracy(source, target.test.target());
  r.loss_trace = a.metrics.epoch_losses;
  r.wall_seconds = a.metrics.wall_seconds;
  r.config_hash = cell_hash(c, method, device, seed);
  return r;
}

std::vector<ResultRecord> load_records(const fs::path& out) {
  std::vector<ResultRecord> records;
  const fs::path dir = out / "records";
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) return records;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() != ".json") continue;
    records.push_back(record_from_json(read_json_file(entry.path())));
  }
  std::sort(records.begin(), records.end(), [](const ResultRecord& a, const ResultRecord& b) {
    return std::tuple(method_rank(a.method), a.device_id, a.seed) <
           std::tuple(method_rank(b.method), b.device_id, b.seed);
  });
  return records;
}

MatrixRun run_matrix(const ExperimentConfig& config, std::ostream* progress) {
  config.validate();
  const fs::path out = config.output_dir;
  {
    std::error_code ec;
    fs::create_directories(out / "records", ec);
    const fs::path probe = out / ".write-probe";
    std::ofstream f(probe);
    if (ec || !f) throw IoError("output directory " + out.string() + " is not writable");
    f.close();
    fs::remove(probe, ec);
  }

  const Benchmark bench = make_benchmark(config.benchmark);

  struct Cell {
    Method method;
    std::string device;
    std::uint64_t seed;
    std::string hash;
  };
  std::vector<Cell> cells;
  for (Method m : config.methods)
    for (const auto& d : config.devices)
      for (auto s : config.seeds) cells.push_back({m, d, s, cell_hash(config, m, d, s)});

  MatrixRun run;
  run.records.resize(cells.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const fs::path p = record_path(out, cells[i].method, cells[i].device, cells[i].seed);
    std::error_code ec;
    if (fs::exists(p, ec)) {
      try {
        ResultRecord r = record_from_json(read_json_file(p));
        if (r.config_hash == cells[i].hash) {
          run.records[i] = std::move(r);
          ++run.skipped;
          continue;
        }
      } catch (const std::exception&) {
        // Unreadable leftovers are recomputed.
      }
    }
    pending.push_back(i);
  }

  const std::size_t workers =
      config.workers ? config.workers : std::max<std::size_t>(1, std::thread::hardware_concurrency());
  auto parallel_for = [workers](std::size_t n, const std::function<void(std::size_t)>& body) {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < std::min(workers, n); ++t) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  };

  std::vector<std::uint64_t> seeds;
  for (auto i : pending)
    if (std::find(seeds.begin(), seeds.end(), cells[i].seed) == seeds.end()) seeds.push_back(cells[i].seed);
  std::vector<std::optional<SourceModel>> sources(seeds.size());
  std::mutex io_mu;
  parallel_for(seeds.size(), [&](std::size_t k) {
    sources[k] = obtain_source_model(config, bench, seeds[k]);
    if (progress) {
      std::lock_guard lock(io_mu);
      *progress << "source model seed " << seeds[k] << " ready\n" << std::flush;
    }
  });

  const fs::path csv = out / "results.csv";
  parallel_for(pending.size(), [&](std::size_t k) {
    const Cell& cell = cells[pending[k]];
    const auto sit = std::find(seeds.begin(), seeds.end(), cell.seed);
    const SourceModel& source = *sources[static_cast<std::size_t>(sit - seeds.begin())];
    ResultRecord r = run_cell(config, bench, source, cell.method, cell.device, cell.seed);
    write_file_atomic(record_path(out, cell.method, cell.device, cell.seed), to_json(r).dump(1));
    std::lock_guard lock(io_mu);
    const bool fresh = !fs::exists(csv);
    std::ofstream f(csv, std::ios::app);
    if (fresh) f << kCsvHeader;
    f << csv_line(r);
    if (progress) {
      *progress << to_string(r.method) << " " << r.device_id << " seed " << r.seed << ": "
                << std::fixed << std::setprecision(2) << 100.0 * r.test_accuracy << "%\n"
                << std::defaultfloat << std::flush;
    }
    run.records[pending[k]] = std::move(r);
  });
  run.trained = pending.size();

  // Rewrite the index in canonical order so reruns converge on the same file.
  std::string index = kCsvHeader;
  for (const auto& r : load_records(out)) index += csv_line(r);
  write_file_atomic(csv, index);
  return run;
}

// ---------------------------------------------------------------------------
// Summary

std::vector<SummaryRow> summarize(const std::vector<ResultRecord>& records) {
  if (records.empty()) throw ContractError("summarize: no records");
  std::vector<SummaryRow> rows;
  for (Method m : kAllMethods) {
    std::vector<double> acc;
    for (const auto& r : records)
      if (r.method == m) acc.push_back(r.test_accuracy);
    if (acc.empty()) continue;
    // Sum in a canonical order so the result is independent of arrival order.
    std::sort(acc.begin(), acc.end());
    SummaryRow row{m};
    row.count = acc.size();
    double s = 0.0;
    for (double a : acc) s += a;
    row.mean_accuracy = s / static_cast<double>(acc.size());
    if (acc.size() > 1) {
      double ss = 0.0;
      for (double a : acc) ss += (a - row.mean_accuracy) * (a - row.mean_accuracy);
      row.std_accuracy = std::sqrt(ss / static_cast<double>(acc.size() - 1));
    }
    rows.push_back(row);
  }
  return rows;
}

std::string render_summary_table(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Method" << std::right << std::setw(14) << "Avg ACC (%)" << std::setw(10)
     << "Std" << std::setw(6) << "N" << '\n';
  os << std::string(44, '-') << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(14) << to_string(r.method) << std::right << std::fixed << std::setprecision(2)
       << std::setw(14) << r.mean_percent() << std::setw(10) << r.std_percent() << std::setw(6) << r.count << '\n';
  }
  return os.str();
}

std::string render_summary_csv(const std::vector<SummaryRow>& rows) {
  std::ostringstream os;
  os << "method,mean_accuracy_pct,std_pct,n\n";
  for (const auto& r : rows) {
    os << to_string(r.method) << ',' << std::fixed << std::setprecision(2) << r.mean_percent() << ','
       << r.std_percent() << ',' << r.count << '\n';
  }
  return os.str();
}

}  // namespace bayesadapt
