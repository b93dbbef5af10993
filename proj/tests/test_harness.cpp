#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <string>
#include <vector>

#include "tta/config.hpp"
#include "tta/report.hpp"
#include "tta/runner.hpp"

using namespace tta;
namespace fs = std::filesystem;

namespace {

const char* kSmallConfig = R"(# small experiment used across the harness tests
[dataset]
classes = 4
dim = 10
samples_per_class = 12
seed = 3

[pretrain]
epochs = 15
hidden = 24
batch_size = 32
error_ceiling = 1.0

[shifts]
shift = additive_noise 2 11
shift = rotation 3 12

[stream]
kind = continual
batch_size = 16
seed = 9

[method]
name = roid
lr = 0.005

[run]
seeds = 1 2
tvd_window = 24
)";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    path = fs::temp_directory_path() /
           ("tta_test_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) { return read_file(p); }

}  // namespace

TEST_CASE("minimal config parses with defaults filled") {
  const std::string text =
      "[shifts]\nshift = additive_noise 1 5\n[method]\nname = source\n";
  auto cfg = parse_config(text);
  CHECK(cfg.method == Method::source);
  CHECK(cfg.dataset.num_classes == 10);
  CHECK(cfg.adapt.alpha == 0.99);
  CHECK(cfg.adapt.tau == Catch::Approx(1.0 / 3.0));
  CHECK(cfg.adapt.beta == 0.9);
  CHECK(cfg.adapt.clip_ceiling == 0.99);
  CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
  CHECK_FALSE(cfg.stream.dirichlet_delta.has_value());
}

TEST_CASE("config serialization round-trips") {
  auto cfg = parse_config(kSmallConfig);
  auto again = parse_config(serialize_config(cfg));
  CHECK(serialize_config(cfg) == serialize_config(again));
  CHECK(config_hash(cfg) == config_hash(again));
}

TEST_CASE("config hash ignores key order and output directory") {
  const std::string a =
      "[dataset]\nclasses = 5\ndim = 12\n[shifts]\nshift = scaling 2 7\n"
      "[method]\nname = tent\n";
  const std::string b =
      "[method]\nname = tent\n[dataset]\ndim = 12\nclasses = 5\n"
      "[shifts]\nshift = scaling 2 7\n";
  const std::string c =
      "[dataset]\nclasses = 5\ndim = 12\n[shifts]\nshift = scaling 2 7\n"
      "[method]\nname = tent\n[run]\nout = somewhere/else\n";
  CHECK(config_hash(parse_config(a)) == config_hash(parse_config(b)));
  CHECK(config_hash(parse_config(a)) == config_hash(parse_config(c)));
  // but the experiment identity is sensitive to real changes
  const std::string d =
      "[dataset]\nclasses = 5\ndim = 12\n[shifts]\nshift = scaling 3 7\n"
      "[method]\nname = tent\n";
  CHECK(config_hash(parse_config(a)) != config_hash(parse_config(d)));
}

TEST_CASE("config errors carry line numbers") {
  auto expect_error = [](const std::string& text, const std::string& needle) {
    try {
      parse_config(text);
      FAIL("expected parse failure for: " << text);
    } catch (const std::invalid_argument& e) {
      INFO(e.what());
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_error("[dataset]\nwidth = 3\n", "config line 2");
  expect_error("[nope]\n", "config line 1");
  expect_error("classes = 3\n", "outside any section");
  expect_error("[method]\nname = adam\n", "config line 2");
  expect_error("[method]\nalpha = 1.5\n[shifts]\nshift = rotation 1 1\n", "alpha");
  expect_error("[stream]\nkind = shuffled\n", "config line 2");
  expect_error("[dataset]\nclasses = maybe\n", "expected a number");
  expect_error("[method]\nuse_weighting = yes\n", "true or false");
  expect_error("[shifts]\nshift = rotation 9 1\n", "severity");
  expect_error("[run]\nseeds =\n[shifts]\nshift = rotation 1 1\n", "seeds");
}

TEST_CASE("config rejects a trailing one-sample batch under batch statistics") {
  // 1 shift x 3 classes x 17 samples = 51 samples; 51 mod 2 leaves one
  const std::string base =
      "[dataset]\nclasses = 3\ndim = 8\nsamples_per_class = 17\n"
      "[shifts]\nshift = additive_noise 1 5\n[stream]\nbatch_size = 2\n"
      "[method]\nname = ";
  CHECK_THROWS_AS(parse_config(base + "roid\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config(base + "bn1\n"), std::invalid_argument);
  CHECK_NOTHROW(parse_config(base + "source\n"));
  CHECK_NOTHROW(parse_config(base + "roid\nnorm_mode = layer_stat\n"));
}

TEST_CASE("run report aggregates are consistent") {
  RunReport r;
  r.num_classes = 3;
  r.tvd_window = 4;
  // 2 domains, 8 samples, 3 errors total: 2 in domain 1, 1 in domain 2
  const int labels[] = {0, 1, 2, 0, 1, 2, 0, 1};
  const int preds[] = {0, 2, 2, 1, 1, 2, 0, 0};
  const int domains[] = {1, 1, 1, 1, 2, 2, 2, 2};
  for (std::size_t i = 0; i < 8; ++i)
    r.samples.push_back({i, domains[i], labels[i], preds[i]});

  CHECK(r.total_errors() == 3);
  CHECK(r.error_rate() == Catch::Approx(3.0 / 8.0));
  auto agg = r.per_domain();
  REQUIRE(agg.size() == 2);
  std::size_t sum = 0;
  for (const auto& a : agg) sum += a.errors;
  CHECK(sum == r.total_errors());
  CHECK(agg[0].domain_id == 1);
  CHECK(agg[0].samples == 4);
  CHECK(agg[0].errors == 2);
  CHECK(agg[1].errors == 1);
  CHECK(r.tvd().size() == 2);
}

TEST_CASE("report csv round-trips through its parser") {
  RunReport r;
  r.batches.push_back({0, 16, 3, 0.217});
  r.batches.push_back({1, 16, 5, 0.181});
  r.batches.push_back({2, 8, 1, 0.05});
  auto parsed = parse_report_csv(render_report_csv(r));
  REQUIRE(parsed.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(parsed[i].index == r.batches[i].index);
    CHECK(parsed[i].size == r.batches[i].size);
    CHECK(parsed[i].errors == r.batches[i].errors);
    CHECK(parsed[i].loss == r.batches[i].loss);
  }
  CHECK_THROWS_AS(parse_report_csv("nope\n1,2\n"), std::invalid_argument);
}

TEST_CASE("experiment run writes a complete artifact tree") {
  auto cfg = parse_config(kSmallConfig);
  TempDir out("run");
  TempDir cache("cache");

  auto manifest = run_experiment(cfg, out.path, cache.path);
  REQUIRE(manifest.all_ok());
  REQUIRE(manifest.seeds.size() == 2);

  for (const auto seed : cfg.seeds) {
    const auto dir = out.path / ("seed_" + std::to_string(seed));
    CHECK(fs::exists(dir / "report.csv"));
    CHECK(fs::exists(dir / "predictions.csv"));
    CHECK(fs::exists(dir / "summary.json"));
  }
  CHECK(fs::exists(out.path / "summary.json"));
  CHECK(fs::exists(out.path / "manifest.json"));
  CHECK(fs::exists(out.path / "config.txt"));

  // stream covers 2 domains x 4 classes x 12 samples
  const auto j = nlohmann::json::parse(slurp(out.path / "seed_1" / "summary.json"));
  CHECK(j.at("num_samples") == 96);
  CHECK(j.at("num_batches") == 6);
  CHECK(j.at("config_hash") == config_hash(cfg));

  // cross-seed mean equals the arithmetic mean of the per-seed rates
  const auto js = nlohmann::json::parse(slurp(out.path / "summary.json"));
  const double mean = js.at("error_rate_mean").get<double>();
  double expect = 0.0;
  for (const auto& s : manifest.seeds) expect += s.error_rate;
  expect /= static_cast<double>(manifest.seeds.size());
  CHECK(mean == Catch::Approx(expect).margin(1e-15));
  CHECK(js.at("seeds_ok") == 2);
}

TEST_CASE("reruns are byte-identical and methods share cached checkpoints") {
  auto cfg = parse_config(kSmallConfig);
  TempDir out_a("rerun_a");
  TempDir out_b("rerun_b");
  TempDir cache("rerun_cache");

  REQUIRE(run_experiment(cfg, out_a.path, cache.path).all_ok());
  std::size_t checkpoints = 0;
  for (const auto& e : fs::directory_iterator(cache.path)) {
    (void)e;
    ++checkpoints;
  }
  CHECK(checkpoints == cfg.seeds.size());

  REQUIRE(run_experiment(cfg, out_b.path, cache.path).all_ok());
  for (const auto seed : cfg.seeds) {
    const auto sub = "seed_" + std::to_string(seed);
    for (const char* name : {"report.csv", "predictions.csv", "summary.json"})
      CHECK(slurp(out_a.path / sub / name) == slurp(out_b.path / sub / name));
  }
  CHECK(slurp(out_a.path / "summary.json") == slurp(out_b.path / "summary.json"));

  // a different method reuses the same checkpoints and is itself deterministic
  ExperimentConfig tent_cfg = cfg;
  tent_cfg.method = Method::tent;
  TempDir out_c("rerun_c");
  REQUIRE(run_experiment(tent_cfg, out_c.path, cache.path).all_ok());
  std::size_t after = 0;
  for (const auto& e : fs::directory_iterator(cache.path)) {
    (void)e;
    ++after;
  }
  CHECK(after == checkpoints);
  const auto ja = nlohmann::json::parse(slurp(out_a.path / "seed_1" / "summary.json"));
  const auto jc = nlohmann::json::parse(slurp(out_c.path / "seed_1" / "summary.json"));
  CHECK(ja.at("source_test_error") == jc.at("source_test_error"));
}

TEST_CASE("a failing seed is recorded without aborting the others") {
  auto cfg = parse_config(kSmallConfig);
  TempDir out_a("fail_a");
  TempDir out_b("fail_b");
  TempDir cache("fail_cache");

  REQUIRE(run_experiment(cfg, out_a.path, cache.path).all_ok());
  // corrupt exactly one seed's cached checkpoint
  const auto key = checkpoint_key(cfg, cfg.seeds.front());
  write_file_atomic(cache.path / (key + ".tta-params"), "garbage\n");

  auto manifest = run_experiment(cfg, out_b.path, cache.path);
  REQUIRE(manifest.seeds.size() == 2);
  CHECK_FALSE(manifest.seeds[0].ok);
  CHECK_FALSE(manifest.seeds[0].error.empty());
  CHECK(manifest.seeds[1].ok);
  CHECK_FALSE(manifest.all_ok());

  const auto js = nlohmann::json::parse(slurp(out_b.path / "summary.json"));
  CHECK(js.at("seeds_ok") == 1);
  // the surviving seed's artifacts match the clean run
  CHECK(slurp(out_a.path / "seed_2" / "report.csv") ==
        slurp(out_b.path / "seed_2" / "report.csv"));
}

TEST_CASE("plot data extraction") {
  auto cfg = parse_config(kSmallConfig);
  TempDir out("plot");
  TempDir cache("plot_cache");

  SECTION("report-derived kinds require existing reports") {
    CHECK_THROWS_WITH(emit_plot_data(cfg, "error_curve", out.path, cache.path),
                      Catch::Matchers::ContainsSubstring("missing report"));
  }

  SECTION("row counts per kind") {
    REQUIRE(run_experiment(cfg, out.path, cache.path).all_ok());

    auto lines_of = [](const fs::path& p) {
      std::string text = read_file(p);
      std::size_t n = 0;
      for (char c : text) n += c == '\n';
      return n;
    };

    auto curve = emit_plot_data(cfg, "error_curve", out.path, cache.path);
    CHECK(lines_of(curve) == 1 + 6 * cfg.seeds.size());

    auto trace = emit_plot_data(cfg, "tvd_trace", out.path, cache.path);
    CHECK(lines_of(trace) == 1 + 4 * cfg.seeds.size());  // 96 samples / window 24

    auto forg = emit_plot_data(cfg, "forgetting", out.path, cache.path);
    // per seed: 1 reference row + 2 phases x 2 series
    CHECK(lines_of(forg) == 1 + 5 * cfg.seeds.size());

    auto gen = emit_plot_data(cfg, "generalization_matrix", out.path, cache.path);
    CHECK(lines_of(gen) == 1 + 2 * 3);  // K x (K + 1), averaged over seeds

    CHECK_THROWS_AS(emit_plot_data(cfg, "histogram", out.path, cache.path),
                    std::invalid_argument);
  }

  SECTION("delta sweep emits one mean row per concentration") {
    ExperimentConfig small = cfg;
    small.seeds = {1};
    auto sweep = emit_plot_data(small, "delta_sweep", out.path, cache.path);
    std::string text = read_file(sweep);
    std::size_t n = 0;
    for (char c : text) n += c == '\n';
    CHECK(n == 1 + delta_sweep_values().size());
    CHECK(text.find("roid") != std::string::npos);
  }
}
