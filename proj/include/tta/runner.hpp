#pragma once
/*
 * Experiment execution: per-seed pipeline (suite -> checkpoint -> stream ->
 * method -> report files), cross-seed summary, manifest, and plot-ready CSV
 * extraction.
 *
 * Everything except the manifest timestamp is a deterministic function of
 * (config, seed); rerunning a config overwrites the report files with
 * byte-identical content.
 */

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tta/config.hpp"
#include "tta/dataset.hpp"
#include "tta/metrics.hpp"
#include "tta/model.hpp"
#include "tta/model_io.hpp"
#include "tta/report.hpp"
#include "tta/stream.hpp"

namespace tta {

// Everything a single seed derives from the user-facing config. Sub-seeds
// are decorrelated per component so that, e.g., two shift entries with equal
// config seeds still act independently of the stream order.
struct EffectiveSetup {
  DatasetSpec dataset;
  std::vector<DomainShift> shifts;
  StreamSetting stream;
  std::uint64_t pretrain_seed = 0;
  std::uint64_t adapt_seed = 0;
  std::uint64_t protocol_seed = 0;
};

inline EffectiveSetup effective_setup(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  EffectiveSetup e;
  e.dataset = cfg.dataset;
  e.dataset.seed = RngStream::derive_seed(cfg.dataset.seed, run_seed);
  e.shifts = cfg.shifts;
  for (std::size_t i = 0; i < e.shifts.size(); ++i)
    e.shifts[i].seed =
        RngStream::derive_seed(RngStream::derive_seed(cfg.shifts[i].seed, 0x5F1ULL + i),
                               run_seed);
  e.stream = cfg.stream;
  e.stream.seed = RngStream::derive_seed(cfg.stream.seed ^ 0x57AEABULL, run_seed);
  e.pretrain_seed = RngStream::derive_seed(cfg.dataset.seed ^ 0x12E7A1ULL, run_seed);
  e.adapt_seed = RngStream::derive_seed(cfg.stream.seed ^ 0xADA7ULL, run_seed);
  e.protocol_seed = RngStream::derive_seed(cfg.stream.seed ^ 0x9207ULL, run_seed);
  return e;
}

// Checkpoints are keyed by everything that determines theta_0, so configs
// that differ only in method or stream share the same pretrained model.
inline std::string checkpoint_key(const ExperimentConfig& cfg, std::uint64_t run_seed) {
  const EffectiveSetup e = effective_setup(cfg, run_seed);
  std::string id;
  id += std::to_string(e.dataset.num_classes) + " " + std::to_string(e.dataset.feature_dim) +
        " " + std::to_string(e.dataset.samples_per_class) + " " +
        format_double(e.dataset.class_mean_scale) + " " +
        format_double(e.dataset.within_class_std) + " " + std::to_string(e.dataset.seed);
  id += " | " + std::to_string(cfg.pretrain.epochs) + " " + format_double(cfg.pretrain.lr) +
        " " + std::to_string(cfg.pretrain.batch_size) + " " +
        std::to_string(cfg.pretrain.hidden) + " " +
        format_double(cfg.pretrain.error_ceiling);
  id += " | " + std::string(norm_mode_name(cfg.pretrain_mode()));
  id += " | " + std::to_string(e.pretrain_seed);
  return hex16(fnv1a64(id));
}

inline Pretrained pretrain_cached(const ExperimentConfig& cfg, std::uint64_t run_seed,
                                  const DomainSuite& suite,
                                  const std::filesystem::path& cache_dir) {
  const auto path = cache_dir / (checkpoint_key(cfg, run_seed) + ".tta-params");
  if (std::filesystem::exists(path)) return load_checkpoint(path);
  PretrainConfig pc = cfg.pretrain;
  pc.mode = cfg.pretrain_mode();
  const EffectiveSetup e = effective_setup(cfg, run_seed);
  Pretrained model = pretrain(suite.source, pc, e.pretrain_seed);
  save_checkpoint(model, path);
  return model;
}

inline RunReport execute_run(const ExperimentConfig& cfg, std::uint64_t run_seed,
                             const DomainSuite& suite, const Pretrained& model) {
  const EffectiveSetup e = effective_setup(cfg, run_seed);
  StreamPlan plan = build_stream(e.stream, suite, cfg.batch_size);
  AdaptState state = make_adapt_state(cfg.method, model, cfg.adapt, e.adapt_seed);

  RunReport report;
  report.method = method_name(cfg.method);
  report.config_hash = config_hash(cfg);
  report.seed = run_seed;
  report.num_classes = cfg.dataset.num_classes;
  report.tvd_window = cfg.tvd_window;
  report.source_train_error = model.train_error;
  report.source_test_error = model.test_error;

  std::size_t position = 0;
  for (std::size_t b = 0; b < plan.num_batches(); ++b) {
    Batch batch = make_batch(plan, suite, b);
    auto out = adapt_step(state, batch);
    BatchRecord rec;
    rec.index = b;
    rec.size = batch.size();
    rec.loss = out.loss;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      SampleRecord s;
      s.position = position++;
      s.domain_id = batch.domain_ids[i];
      s.label = batch.labels[i];
      s.prediction = out.predictions[i];
      rec.errors += s.prediction != s.label;
      report.samples.push_back(s);
    }
    report.batches.push_back(rec);
  }
  report.skipped_steps = state.skipped_steps;
  return report;
}

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;     // empty when ok
  std::string dir;       // seed output directory, relative to the run dir
  double error_rate = 0.0;
};

struct RunManifest {
  std::string config_hash;
  std::string timestamp;  // the one output field not determined by (config, seed)
  std::vector<SeedOutcome> seeds;

  bool all_ok() const {
    for (const auto& s : seeds)
      if (!s.ok) return false;
    return !seeds.empty();
  }
};

namespace detail {

inline std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline void mean_std(const std::vector<double>& v, double& mean, double& sd) {
  mean = 0.0;
  sd = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  for (double x : v) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(v.size() - 1));
}

}  // namespace detail

inline RunManifest run_experiment(const ExperimentConfig& cfg,
                                  const std::filesystem::path& out_dir,
                                  const std::filesystem::path& cache_dir) {
  cfg.validate();
  RunManifest manifest;
  manifest.config_hash = config_hash(cfg);
  manifest.timestamp = detail::utc_timestamp();

  write_file_atomic(out_dir / "config.txt", serialize_config(cfg));

  for (const auto seed : cfg.seeds) {
    SeedOutcome outcome;
    outcome.seed = seed;
    outcome.dir = "seed_" + std::to_string(seed);
    try {
      const EffectiveSetup e = effective_setup(cfg, seed);
      DomainSuite suite = make_suite(e.dataset, e.shifts);
      Pretrained model = pretrain_cached(cfg, seed, suite, cache_dir);
      RunReport report = execute_run(cfg, seed, suite, model);

      const auto dir = out_dir / outcome.dir;
      write_file_atomic(dir / "report.csv", render_report_csv(report));
      write_file_atomic(dir / "predictions.csv", render_predictions_csv(report));
      write_file_atomic(dir / "summary.json", render_summary_json(report));
      outcome.error_rate = report.error_rate();
      outcome.ok = true;
    } catch (const std::exception& ex) {
      outcome.error = ex.what();
    }
    manifest.seeds.push_back(outcome);
  }

  // cross-seed summary over the seeds that completed
  std::vector<double> rates;
  for (const auto& s : manifest.seeds)
    if (s.ok) rates.push_back(s.error_rate);
  double mean = 0.0, sd = 0.0;
  detail::mean_std(rates, mean, sd);

  nlohmann::json js;
  js["artifact_version"] = kArtifactVersion;
  js["config_hash"] = manifest.config_hash;
  js["method"] = method_name(cfg.method);
  js["stream"] = stream_kind_name(cfg.stream.kind);
  js["seeds_ok"] = rates.size();
  js["seeds_total"] = cfg.seeds.size();
  js["error_rate_mean"] = mean;
  js["error_rate_std"] = sd;
  js["per_seed"] = nlohmann::json::array();
  for (const auto& s : manifest.seeds) {
    nlohmann::json row;
    row["seed"] = s.seed;
    row["ok"] = s.ok;
    if (s.ok) row["error_rate"] = s.error_rate;
    else row["error"] = s.error;
    js["per_seed"].push_back(row);
  }
  write_file_atomic(out_dir / "summary.json", js.dump(2) + "\n");

  nlohmann::json jm;
  jm["artifact_version"] = kArtifactVersion;
  jm["config_hash"] = manifest.config_hash;
  jm["timestamp"] = manifest.timestamp;
  jm["reports"] = nlohmann::json::array();
  for (const auto& s : manifest.seeds) {
    nlohmann::json row;
    row["seed"] = s.seed;
    row["ok"] = s.ok;
    row["dir"] = s.dir;
    if (!s.ok) row["error"] = s.error;
    jm["reports"].push_back(row);
  }
  write_file_atomic(out_dir / "manifest.json", jm.dump(2) + "\n");
  return manifest;
}

inline const std::vector<double>& delta_sweep_values() {
  static const std::vector<double> v{0.01, 0.1, 1.0, 10.0, 100.0};
  return v;
}

// Tidy (x, series, value) CSV per plot kind. error_curve and tvd_trace read
// the stored reports; the protocol kinds recompute from the config because
// their data is not part of a normal run.
inline std::filesystem::path emit_plot_data(const ExperimentConfig& cfg,
                                            const std::string& kind,
                                            const std::filesystem::path& out_dir,
                                            const std::filesystem::path& cache_dir) {
  cfg.validate();
  std::string csv = "x,series,value\n";
  auto row = [&](const std::string& x, const std::string& series, double value) {
    csv += x + "," + series + "," + format_double(value) + "\n";
  };

  if (kind == "error_curve") {
    for (const auto seed : cfg.seeds) {
      const auto path = out_dir / ("seed_" + std::to_string(seed)) / "report.csv";
      if (!std::filesystem::exists(path))
        throw std::runtime_error("missing report " + path.string() +
                                 "; run the experiment first");
      auto batches = parse_report_csv(read_file(path));
      std::size_t cum_err = 0, cum_n = 0;
      for (const auto& b : batches) {
        cum_err += b.errors;
        cum_n += b.size;
        row(std::to_string(b.index), "seed_" + std::to_string(seed),
            static_cast<double>(cum_err) / static_cast<double>(cum_n));
      }
    }
  } else if (kind == "tvd_trace") {
    for (const auto seed : cfg.seeds) {
      const auto path = out_dir / ("seed_" + std::to_string(seed)) / "summary.json";
      if (!std::filesystem::exists(path))
        throw std::runtime_error("missing report " + path.string() +
                                 "; run the experiment first");
      const auto j = nlohmann::json::parse(read_file(path));
      const auto& values = j.at("tvd").at("values");
      for (std::size_t i = 0; i < values.size(); ++i)
        row(std::to_string(i), "seed_" + std::to_string(seed), values[i].get<double>());
    }
  } else if (kind == "forgetting") {
    for (const auto seed : cfg.seeds) {
      const EffectiveSetup e = effective_setup(cfg, seed);
      DomainSuite suite = make_suite(e.dataset, e.shifts);
      Pretrained model = pretrain_cached(cfg, seed, suite, cache_dir);
      auto res = forgetting_protocol(cfg.method, model, cfg.adapt, suite, cfg.batch_size,
                                     e.protocol_seed);
      const std::string tag = "_seed_" + std::to_string(seed);
      row("0", "reference" + tag, res.reference_error);
      for (std::size_t p = 0; p < res.source_errors.size(); ++p) {
        row(std::to_string(p + 1), "source" + tag, res.source_errors[p]);
        row(std::to_string(p + 1), "shifted" + tag, res.shifted_errors[p]);
      }
    }
  } else if (kind == "generalization_matrix") {
    const double lr_mod = cfg.plot.lr_moderate.value_or(cfg.adapt.lr);
    const double lr_str = cfg.plot.lr_strong.value_or(10.0 * cfg.adapt.lr);
    Matrix acc;
    std::size_t count = 0;
    for (const auto seed : cfg.seeds) {
      const EffectiveSetup e = effective_setup(cfg, seed);
      DomainSuite suite = make_suite(e.dataset, e.shifts);
      Pretrained model = pretrain_cached(cfg, seed, suite, cache_dir);
      Matrix m = generalization_matrix(cfg.method, model, cfg.adapt, suite, lr_mod, lr_str,
                                       cfg.plot.holdout_fraction, cfg.batch_size,
                                       e.protocol_seed);
      if (count == 0) acc = m;
      else
        for (std::size_t i = 0; i < m.data.size(); ++i) acc.data[i] += m.data[i];
      ++count;
    }
    for (auto& v : acc.data) v /= static_cast<double>(count);
    for (std::size_t k = 0; k < acc.rows; ++k)
      for (std::size_t j = 0; j < acc.cols; ++j)
        row(std::to_string(j), "adapt_" + std::to_string(k + 1), acc.at(k, j));
  } else if (kind == "delta_sweep") {
    for (const double delta : delta_sweep_values()) {
      std::vector<double> rates;
      for (const auto seed : cfg.seeds) {
        ExperimentConfig swept = cfg;
        swept.stream.kind = StreamKind::correlated;
        swept.stream.dirichlet_delta = delta;
        const EffectiveSetup e = effective_setup(swept, seed);
        DomainSuite suite = make_suite(e.dataset, e.shifts);
        Pretrained model = pretrain_cached(swept, seed, suite, cache_dir);
        rates.push_back(execute_run(swept, seed, suite, model).error_rate());
      }
      double mean = 0.0, sd = 0.0;
      detail::mean_std(rates, mean, sd);
      row(format_double(delta), method_name(cfg.method), mean);
    }
  } else {
    throw std::invalid_argument(
        "unknown plot kind '" + kind +
        "' (expected error_curve, tvd_trace, forgetting, generalization_matrix, "
        "or delta_sweep)");
  }

  const auto path = out_dir / "plots" / (kind + ".csv");
  write_file_atomic(path, csv);
  return path;
}

}  // namespace tta
