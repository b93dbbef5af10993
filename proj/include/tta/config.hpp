#pragma once
/*
 * Declarative experiment configs: a line-oriented `key = value` format with
 * [section] headers. parse_config gives line-numbered errors;
 * serialize_config emits a canonical form (fixed section and key order,
 * defaults filled), which also backs the config hash, so hashes do not
 * depend on key order in the input file.
 */

#include <cstdint>
#include <cstdio>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tta/adaptation.hpp"
#include "tta/dataset.hpp"
#include "tta/io_util.hpp"
#include "tta/metrics.hpp"
#include "tta/model.hpp"
#include "tta/stream.hpp"

namespace tta {

struct PlotSettings {
  double holdout_fraction = 0.8;
  std::optional<double> lr_moderate;  // defaults to the method learning rate
  std::optional<double> lr_strong;    // defaults to 10x the method learning rate
};

struct ExperimentConfig {
  DatasetSpec dataset;
  PretrainConfig pretrain;
  std::vector<DomainShift> shifts;
  StreamSetting stream;
  std::size_t batch_size = 64;
  Method method = Method::source;
  AdaptConfig adapt;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::string out_dir;  // optional; CLI flag and environment can override
  std::size_t tvd_window = kTvdWindow;
  PlotSettings plot;

  void validate() const {
    dataset.validate();
    pretrain.validate();
    adapt.validate();
    if (shifts.empty())
      throw std::invalid_argument("config: at least one shift is required");
    for (const auto& s : shifts) s.validate();
    if (stream.dirichlet_delta && !(*stream.dirichlet_delta > 0.0))
      throw std::invalid_argument("config: stream delta must be > 0");
    if (batch_size < 1) throw std::invalid_argument("config: batch_size must be >= 1");
    if (seeds.empty()) throw std::invalid_argument("config: seeds must be nonempty");
    if (tvd_window < 1) throw std::invalid_argument("config: tvd_window must be >= 1");
    if (!(plot.holdout_fraction > 0.0 && plot.holdout_fraction < 1.0))
      throw std::invalid_argument("config: holdout_fraction must be in (0, 1)");
    if (plot.lr_moderate && !(*plot.lr_moderate > 0.0))
      throw std::invalid_argument("config: lr_moderate must be > 0");
    if (plot.lr_strong && !(*plot.lr_strong > 0.0))
      throw std::invalid_argument("config: lr_strong must be > 0");

    // A trailing one-sample batch cannot feed batch-recomputed statistics;
    // catch the geometry here instead of failing mid-stream.
    const std::size_t total = shifts.size() *
                              static_cast<std::size_t>(dataset.num_classes) *
                              static_cast<std::size_t>(dataset.samples_per_class);
    const bool needs_pairs =
        method == Method::bn1 ||
        (adapt.norm_mode == NormMode::batch_stat && method != Method::source);
    if (needs_pairs && total % batch_size == 1)
      throw std::invalid_argument(
          "config: stream length modulo batch_size leaves a one-sample batch, "
          "incompatible with batch statistics");
  }

  // Pretraining mode implied by the method's normalization mode.
  NormMode pretrain_mode() const {
    return adapt.norm_mode == NormMode::layer_stat ? NormMode::layer_stat
                                                   : NormMode::batch_stat;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct ConfigCursor {
  int line = 0;
  [[noreturn]] void fail(const std::string& msg) const {
    throw std::invalid_argument("config line " + std::to_string(line) + ": " + msg);
  }
  double real(const std::string& v) const {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end != v.c_str() + v.size() || v.empty()) fail("expected a number, got '" + v + "'");
    return x;
  }
  long long integer(const std::string& v) const {
    const double x = real(v);
    const long long i = static_cast<long long>(x);
    if (static_cast<double>(i) != x) fail("expected an integer, got '" + v + "'");
    return i;
  }
  std::uint64_t unsigned_integer(const std::string& v) const {
    const long long i = integer(v);
    if (i < 0) fail("expected a nonnegative integer, got '" + v + "'");
    return static_cast<std::uint64_t>(i);
  }
  bool boolean(const std::string& v) const {
    if (v == "true") return true;
    if (v == "false") return false;
    fail("expected true or false, got '" + v + "'");
  }
  std::vector<std::string> words(const std::string& v) const {
    std::vector<std::string> out;
    std::istringstream in(v);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
  }
};

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  detail::ConfigCursor at;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  bool saw_seeds = false;

  while (std::getline(in, raw)) {
    ++at.line;
    std::string line = detail::trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;

    if (line.front() == '[') {
      if (line.back() != ']') at.fail("unterminated section header");
      section = line.substr(1, line.size() - 2);
      if (section != "dataset" && section != "pretrain" && section != "shifts" &&
          section != "stream" && section != "method" && section != "run" &&
          section != "plot")
        at.fail("unknown section [" + section + "]");
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos) at.fail("expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) at.fail("empty key");
    if (section.empty()) at.fail("key '" + key + "' outside any section");

    try {
      if (section == "dataset") {
        if (key == "classes") cfg.dataset.num_classes = static_cast<int>(at.unsigned_integer(value));
        else if (key == "dim") cfg.dataset.feature_dim = static_cast<int>(at.unsigned_integer(value));
        else if (key == "samples_per_class")
          cfg.dataset.samples_per_class = static_cast<int>(at.unsigned_integer(value));
        else if (key == "mean_scale") cfg.dataset.class_mean_scale = at.real(value);
        else if (key == "within_std") cfg.dataset.within_class_std = at.real(value);
        else if (key == "seed") cfg.dataset.seed = at.unsigned_integer(value);
        else at.fail("unknown key '" + key + "' in [dataset]");
      } else if (section == "pretrain") {
        if (key == "epochs") cfg.pretrain.epochs = static_cast<int>(at.unsigned_integer(value));
        else if (key == "lr") cfg.pretrain.lr = at.real(value);
        else if (key == "batch_size")
          cfg.pretrain.batch_size = static_cast<int>(at.unsigned_integer(value));
        else if (key == "hidden")
          cfg.pretrain.hidden = static_cast<int>(at.unsigned_integer(value));
        else if (key == "error_ceiling") cfg.pretrain.error_ceiling = at.real(value);
        else at.fail("unknown key '" + key + "' in [pretrain]");
      } else if (section == "shifts") {
        if (key != "shift") at.fail("unknown key '" + key + "' in [shifts]");
        const auto w = at.words(value);
        if (w.size() != 3) at.fail("shift needs '<kind> <severity> <seed>'");
        DomainShift s;
        s.kind = shift_kind_from_name(w[0]);
        s.severity = static_cast<int>(at.unsigned_integer(w[1]));
        s.seed = at.unsigned_integer(w[2]);
        cfg.shifts.push_back(s);
      } else if (section == "stream") {
        if (key == "kind") cfg.stream.kind = stream_kind_from_name(value);
        else if (key == "batch_size") cfg.batch_size = at.unsigned_integer(value);
        else if (key == "delta") cfg.stream.dirichlet_delta = at.real(value);
        else if (key == "seed") cfg.stream.seed = at.unsigned_integer(value);
        else at.fail("unknown key '" + key + "' in [stream]");
      } else if (section == "method") {
        if (key == "name") cfg.method = method_from_name(value);
        else if (key == "norm_mode") cfg.adapt.norm_mode = norm_mode_from_name(value);
        else if (key == "lr") cfg.adapt.lr = at.real(value);
        else if (key == "alpha") cfg.adapt.alpha = at.real(value);
        else if (key == "tau") cfg.adapt.tau = at.real(value);
        else if (key == "beta") cfg.adapt.beta = at.real(value);
        else if (key == "clip_ceiling") cfg.adapt.clip_ceiling = at.real(value);
        else if (key == "aug_noise_std") cfg.adapt.aug_noise_std = at.real(value);
        else if (key == "use_weighting") cfg.adapt.use_weighting = at.boolean(value);
        else if (key == "use_consistency") cfg.adapt.use_consistency = at.boolean(value);
        else if (key == "use_weight_ensembling")
          cfg.adapt.use_weight_ensembling = at.boolean(value);
        else if (key == "use_prior_correction")
          cfg.adapt.use_prior_correction = at.boolean(value);
        else at.fail("unknown key '" + key + "' in [method]");
      } else if (section == "run") {
        if (key == "seeds") {
          cfg.seeds.clear();
          for (const auto& w : at.words(value)) cfg.seeds.push_back(at.unsigned_integer(w));
          saw_seeds = true;
        } else if (key == "out") {
          cfg.out_dir = value;
        } else if (key == "tvd_window") {
          cfg.tvd_window = at.unsigned_integer(value);
        } else {
          at.fail("unknown key '" + key + "' in [run]");
        }
      } else if (section == "plot") {
        if (key == "holdout_fraction") cfg.plot.holdout_fraction = at.real(value);
        else if (key == "lr_moderate") cfg.plot.lr_moderate = at.real(value);
        else if (key == "lr_strong") cfg.plot.lr_strong = at.real(value);
        else at.fail("unknown key '" + key + "' in [plot]");
      }
    } catch (const std::invalid_argument& e) {
      // enum lookups throw without line context
      const std::string what = e.what();
      if (what.rfind("config line", 0) == 0) throw;
      at.fail(what);
    }
  }
  if (saw_seeds && cfg.seeds.empty())
    throw std::invalid_argument("config: seeds list is empty");
  cfg.validate();
  return cfg;
}

// Canonical text form. `with_out` drops the output path so the hash
// identifies the experiment, not where it lands on disk.
inline std::string serialize_config(const ExperimentConfig& cfg, bool with_out = true) {
  std::string s;
  auto line = [&](const std::string& t) { s += t + "\n"; };
  line("[dataset]");
  line("classes = " + std::to_string(cfg.dataset.num_classes));
  line("dim = " + std::to_string(cfg.dataset.feature_dim));
  line("samples_per_class = " + std::to_string(cfg.dataset.samples_per_class));
  line("mean_scale = " + format_double(cfg.dataset.class_mean_scale));
  line("within_std = " + format_double(cfg.dataset.within_class_std));
  line("seed = " + std::to_string(cfg.dataset.seed));
  line("");
  line("[pretrain]");
  line("epochs = " + std::to_string(cfg.pretrain.epochs));
  line("lr = " + format_double(cfg.pretrain.lr));
  line("batch_size = " + std::to_string(cfg.pretrain.batch_size));
  line("hidden = " + std::to_string(cfg.pretrain.hidden));
  line("error_ceiling = " + format_double(cfg.pretrain.error_ceiling));
  line("");
  line("[shifts]");
  for (const auto& sh : cfg.shifts)
    line("shift = " + std::string(shift_kind_name(sh.kind)) + " " +
         std::to_string(sh.severity) + " " + std::to_string(sh.seed));
  line("");
  line("[stream]");
  line("kind = " + std::string(stream_kind_name(cfg.stream.kind)));
  line("batch_size = " + std::to_string(cfg.batch_size));
  if (cfg.stream.dirichlet_delta)
    line("delta = " + format_double(*cfg.stream.dirichlet_delta));
  line("seed = " + std::to_string(cfg.stream.seed));
  line("");
  line("[method]");
  line("name = " + std::string(method_name(cfg.method)));
  line("norm_mode = " + std::string(norm_mode_name(cfg.adapt.norm_mode)));
  line("lr = " + format_double(cfg.adapt.lr));
  line("alpha = " + format_double(cfg.adapt.alpha));
  line("tau = " + format_double(cfg.adapt.tau));
  line("beta = " + format_double(cfg.adapt.beta));
  line("clip_ceiling = " + format_double(cfg.adapt.clip_ceiling));
  line("aug_noise_std = " + format_double(cfg.adapt.aug_noise_std));
  line(std::string("use_weighting = ") + (cfg.adapt.use_weighting ? "true" : "false"));
  line(std::string("use_consistency = ") + (cfg.adapt.use_consistency ? "true" : "false"));
  line(std::string("use_weight_ensembling = ") +
       (cfg.adapt.use_weight_ensembling ? "true" : "false"));
  line(std::string("use_prior_correction = ") +
       (cfg.adapt.use_prior_correction ? "true" : "false"));
  line("");
  line("[run]");
  {
    std::string seeds;
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i)
      seeds += (i ? " " : "") + std::to_string(cfg.seeds[i]);
    line("seeds = " + seeds);
  }
  if (with_out && !cfg.out_dir.empty()) line("out = " + cfg.out_dir);
  line("tvd_window = " + std::to_string(cfg.tvd_window));
  line("");
  line("[plot]");
  line("holdout_fraction = " + format_double(cfg.plot.holdout_fraction));
  if (cfg.plot.lr_moderate) line("lr_moderate = " + format_double(*cfg.plot.lr_moderate));
  if (cfg.plot.lr_strong) line("lr_strong = " + format_double(*cfg.plot.lr_strong));
  return s;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// FNV-1a over the canonical form without the output path.
inline std::string config_hash(const ExperimentConfig& cfg) {
  return hex16(fnv1a64(serialize_config(cfg, /*with_out=*/false)));
}

}  // namespace tta
