#pragma once
/*
 * Run artifacts. Three files per (config, seed):
 *
 *   report.csv       one row per batch
 *   predictions.csv  one row per sample, enough to recompute every metric
 *   summary.json     aggregates, per-domain breakdown, TVD trace, config echo
 *
 * All three are deterministic functions of (config, seed).
 */

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tta/io_util.hpp"
#include "tta/metrics.hpp"

namespace tta {

inline constexpr const char* kArtifactVersion = "1";

struct BatchRecord {
  std::size_t index = 0;
  std::size_t size = 0;
  std::size_t errors = 0;
  double loss = 0.0;
};

struct SampleRecord {
  std::size_t position = 0;  // stream position, 0-based
  int domain_id = 0;
  int label = 0;
  int prediction = 0;
};

struct DomainAggregate {
  int domain_id = 0;
  std::size_t samples = 0;
  std::size_t errors = 0;
};

struct RunReport {
  std::string method;
  std::string config_hash;
  std::uint64_t seed = 0;
  int num_classes = 0;  // 0 falls back to the largest observed index + 1
  std::size_t tvd_window = kTvdWindow;
  double source_train_error = 0.0;
  double source_test_error = 0.0;
  long skipped_steps = 0;
  std::vector<BatchRecord> batches;
  std::vector<SampleRecord> samples;

  std::size_t total_errors() const {
    std::size_t e = 0;
    for (const auto& s : samples) e += s.prediction != s.label;
    return e;
  }
  double error_rate() const {
    return samples.empty() ? 0.0
                           : static_cast<double>(total_errors()) /
                                 static_cast<double>(samples.size());
  }
  std::vector<DomainAggregate> per_domain() const {
    std::map<int, DomainAggregate> agg;
    for (const auto& s : samples) {
      auto& a = agg[s.domain_id];
      a.domain_id = s.domain_id;
      ++a.samples;
      a.errors += s.prediction != s.label;
    }
    std::vector<DomainAggregate> out;
    for (const auto& [id, a] : agg) out.push_back(a);
    return out;
  }
  std::vector<double> tvd() const {
    std::vector<int> preds, labels;
    preds.reserve(samples.size());
    labels.reserve(samples.size());
    int max_class = 0;
    for (const auto& s : samples) {
      preds.push_back(s.prediction);
      labels.push_back(s.label);
      max_class = std::max({max_class, s.label, s.prediction});
    }
    if (samples.empty()) return {};
    const std::size_t classes =
        std::max(static_cast<std::size_t>(num_classes), static_cast<std::size_t>(max_class) + 1);
    return tvd_trace(preds, labels, classes, tvd_window);
  }
};

inline std::string render_report_csv(const RunReport& r) {
  std::string out = "batch,size,errors,error_rate,cum_error_rate,loss\n";
  std::size_t cum_err = 0, cum_n = 0;
  for (const auto& b : r.batches) {
    cum_err += b.errors;
    cum_n += b.size;
    out += std::to_string(b.index) + "," + std::to_string(b.size) + "," +
           std::to_string(b.errors) + "," +
           format_double(static_cast<double>(b.errors) / static_cast<double>(b.size)) +
           "," +
           format_double(static_cast<double>(cum_err) / static_cast<double>(cum_n)) +
           "," + format_double(b.loss) + "\n";
  }
  return out;
}

inline std::string render_predictions_csv(const RunReport& r) {
  std::string out = "position,domain_id,label,prediction,correct\n";
  for (const auto& s : r.samples)
    out += std::to_string(s.position) + "," + std::to_string(s.domain_id) + "," +
           std::to_string(s.label) + "," + std::to_string(s.prediction) + "," +
           (s.prediction == s.label ? "1" : "0") + "\n";
  return out;
}

inline std::string render_summary_json(const RunReport& r) {
  nlohmann::json j;
  j["artifact_version"] = kArtifactVersion;
  j["config_hash"] = r.config_hash;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["num_samples"] = r.samples.size();
  j["num_batches"] = r.batches.size();
  j["error_rate"] = r.error_rate();
  j["total_errors"] = r.total_errors();
  j["skipped_steps"] = r.skipped_steps;
  j["source_train_error"] = r.source_train_error;
  j["source_test_error"] = r.source_test_error;
  j["per_domain"] = nlohmann::json::array();
  for (const auto& d : r.per_domain()) {
    j["per_domain"].push_back(
        {{"domain_id", d.domain_id},
         {"samples", d.samples},
         {"errors", d.errors},
         {"error_rate",
          static_cast<double>(d.errors) / static_cast<double>(d.samples)}});
  }
  j["tvd"] = {{"window", r.tvd_window}, {"values", r.tvd()}};
  return j.dump(2) + "\n";
}

// Parses our own report.csv back into batch records (header checked).
inline std::vector<BatchRecord> parse_report_csv(const std::string& text) {
  std::vector<BatchRecord> out;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "batch,size,errors,error_rate,cum_error_rate,loss")
        throw std::invalid_argument("report.csv: unexpected header '" + line + "'");
      header = false;
      continue;
    }
    std::vector<std::string> cells;
    std::size_t c = 0;
    while (true) {
      auto comma = line.find(',', c);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(c));
        break;
      }
      cells.push_back(line.substr(c, comma - c));
      c = comma + 1;
    }
    if (cells.size() != 6)
      throw std::invalid_argument("report.csv: expected 6 columns, got line '" + line + "'");
    BatchRecord b;
    b.index = std::stoul(cells[0]);
    b.size = std::stoul(cells[1]);
    b.errors = std::stoul(cells[2]);
    b.loss = std::strtod(cells[5].c_str(), nullptr);
    out.push_back(b);
  }
  return out;
}

}  // namespace tta
