// Command-line entry point. Subcommands:
//
//   validate   parse a config, print its hash
//   pretrain   build (or reuse) the cached source checkpoints for a config
//   run        execute the experiment and write reports
//   plot-data  extract tidy (x, series, value) CSVs from a run
//
// Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tta/config.hpp"
#include "tta/runner.hpp"

namespace fs = std::filesystem;

namespace {

struct CliArgs {
  std::string config_path;
  std::string out_override;
  std::string kind;
  std::vector<std::uint64_t> seed_override;
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

tta::ExperimentConfig load_config(const CliArgs& args) {
  auto cfg = tta::parse_config(tta::read_file(args.config_path));
  if (!args.seed_override.empty()) {
    cfg.seeds = args.seed_override;
    cfg.validate();
  }
  return cfg;
}

fs::path resolve_out_dir(const tta::ExperimentConfig& cfg, const CliArgs& args) {
  if (!args.out_override.empty()) return args.out_override;
  if (!cfg.out_dir.empty()) return cfg.out_dir;
  return fs::path(env_or("TTA_OUT_DIR", "runs")) / tta::config_hash(cfg);
}

fs::path resolve_cache_dir() { return env_or("TTA_CACHE_DIR", "checkpoints"); }

int cmd_validate(const CliArgs& args) {
  auto cfg = load_config(args);
  std::printf("ok %s\n", tta::config_hash(cfg).c_str());
  std::printf("method=%s stream=%s domains=%zu seeds=%zu\n", tta::method_name(cfg.method),
              tta::stream_kind_name(cfg.stream.kind), cfg.shifts.size(), cfg.seeds.size());
  return 0;
}

int cmd_pretrain(const CliArgs& args) {
  auto cfg = load_config(args);
  const fs::path cache = resolve_cache_dir();
  for (const auto seed : cfg.seeds) {
    const auto e = tta::effective_setup(cfg, seed);
    auto suite = tta::make_suite(e.dataset, e.shifts);
    auto model = tta::pretrain_cached(cfg, seed, suite, cache);
    std::printf("seed %llu: checkpoint %s (train %.4f, test %.4f)\n",
                static_cast<unsigned long long>(seed),
                (cache / (tta::checkpoint_key(cfg, seed) + ".tta-params")).c_str(),
                model.train_error, model.test_error);
  }
  return 0;
}

int cmd_run(const CliArgs& args) {
  auto cfg = load_config(args);
  const fs::path out = resolve_out_dir(cfg, args);
  auto manifest = tta::run_experiment(cfg, out, resolve_cache_dir());

  double mean = 0.0;
  std::size_t ok = 0;
  for (const auto& s : manifest.seeds) {
    if (s.ok) {
      std::printf("seed %llu: error %.4f\n", static_cast<unsigned long long>(s.seed),
                  s.error_rate);
      mean += s.error_rate;
      ++ok;
    } else {
      std::fprintf(stderr, "seed %llu: FAILED: %s\n",
                   static_cast<unsigned long long>(s.seed), s.error.c_str());
    }
  }
  if (ok) std::printf("mean error %.4f over %zu seed(s)\n", mean / ok, ok);
  std::printf("reports: %s\n", out.c_str());
  return manifest.all_ok() ? 0 : 2;
}

int cmd_plot_data(const CliArgs& args) {
  auto cfg = load_config(args);
  const fs::path out = resolve_out_dir(cfg, args);
  const auto path = tta::emit_plot_data(cfg, args.kind, out, resolve_cache_dir());
  std::printf("%s\n", path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"test-time adaptation benchmark harness"};
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "experiment config file")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", args.seed_override,
                    "override the config seed list (repeatable)");
    sub->add_option("--out", args.out_override, "output directory");
  };

  add_common(app.add_subcommand("validate", "parse and validate a config"));
  add_common(app.add_subcommand("pretrain", "build cached source checkpoints"));
  add_common(app.add_subcommand("run", "execute the experiment"));
  auto* plot = app.add_subcommand("plot-data", "extract plot-ready CSV data");
  add_common(plot);
  plot->add_option("--kind", args.kind, "plot kind")
      ->required()
      ->check(CLI::IsMember({"error_curve", "tvd_trace", "forgetting",
                             "generalization_matrix", "delta_sweep"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (app.got_subcommand("validate")) return cmd_validate(args);
    if (app.got_subcommand("pretrain")) return cmd_pretrain(args);
    if (app.got_subcommand("run")) return cmd_run(args);
    return cmd_plot_data(args);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
