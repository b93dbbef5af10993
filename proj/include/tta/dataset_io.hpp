#pragma once
/*
 * Text serialization for domain suites.
 *
 * Column-oriented, whitespace separated:
 *
 *   tta-suite v1
 *   dim <feature_dim>
 *   classes <num_classes>
 *   spec <samples_per_class> <class_mean_scale> <within_class_std> <seed>   (optional)
 *   domain <id> <kind> <severity> <seed>                                    (optional, per shifted domain)
 *   data
 *   <split> <domain_id> <label> <f_0> ... <f_{dim-1}>
 *   ...
 *
 * split is "train" or "test". domain_id 0 is the source domain; shifted
 * domains are 1..K. The optional header lines let generated suites round-trip
 * exactly; external data needs only dim, classes and data rows.
 */

#include <map>
#include <sstream>
#include <string>

#include "tta/dataset.hpp"
#include "tta/io_util.hpp"

namespace tta {

inline std::string serialize_suite(const DomainSuite& suite) {
  std::ostringstream out;
  out << "tta-suite v1\n";
  out << "dim " << suite.spec.feature_dim << "\n";
  out << "classes " << suite.spec.num_classes << "\n";
  out << "spec " << suite.spec.samples_per_class << " "
      << format_double(suite.spec.class_mean_scale) << " "
      << format_double(suite.spec.within_class_std) << " " << suite.spec.seed << "\n";
  for (std::size_t k = 0; k < suite.shifts.size(); ++k) {
    const auto& s = suite.shifts[k];
    out << "domain " << (k + 1) << " " << shift_kind_name(s.kind) << " " << s.severity
        << " " << s.seed << "\n";
  }
  out << "data\n";
  auto emit = [&](const SampleSet& set, const char* split) {
    for (std::size_t i = 0; i < set.size(); ++i) {
      out << split << " " << set.domain_ids[i] << " " << set.labels[i];
      for (double v : set.features.row(i)) out << " " << format_double(v);
      out << "\n";
    }
  };
  emit(suite.source.train, "train");
  emit(suite.source.test, "test");
  for (const auto& dom : suite.shifted) emit(dom, "test");
  return out.str();
}

inline DomainSuite parse_suite(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "tta-suite v1")
    throw std::runtime_error("suite: bad or missing header magic");

  int dim = -1, classes = -1;
  bool have_spec = false;
  DatasetSpec spec;
  std::map<int, DomainShift> shift_meta;
  bool in_data = false;
  int line_no = 1;

  // rows grouped as (split, domain_id) -> flat sample list
  struct Rows {
    std::vector<double> features;
    std::vector<int> labels;
  };
  std::map<std::pair<int, int>, Rows> groups;  // (is_test, domain_id)

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    auto fail = [&](const std::string& msg) {
      throw std::runtime_error("suite line " + std::to_string(line_no) + ": " + msg);
    };
    if (!in_data) {
      if (tok == "dim") {
        if (!(ls >> dim) || dim < 2) fail("bad dim");
      } else if (tok == "classes") {
        if (!(ls >> classes) || classes < 2) fail("bad classes");
      } else if (tok == "spec") {
        if (!(ls >> spec.samples_per_class >> spec.class_mean_scale >>
              spec.within_class_std >> spec.seed))
          fail("bad spec line");
        have_spec = true;
      } else if (tok == "domain") {
        int id, severity;
        std::string kind;
        std::uint64_t seed;
        if (!(ls >> id >> kind >> severity >> seed) || id < 1) fail("bad domain line");
        shift_meta[id] = DomainShift{shift_kind_from_name(kind), severity, seed};
      } else if (tok == "data") {
        if (dim < 0 || classes < 0) fail("data before dim/classes");
        in_data = true;
      } else {
        fail("unknown header token '" + tok + "'");
      }
      continue;
    }
    const std::string& split = tok;
    if (split != "train" && split != "test") fail("split must be train|test");
    int domain_id, label;
    if (!(ls >> domain_id >> label)) fail("bad domain_id/label");
    if (domain_id < 0) fail("negative domain_id");
    if (label < 0 || label >= classes) fail("label out of range");
    if (split == "train" && domain_id != 0) fail("train rows must be domain 0");
    auto& g = groups[{split == "test" ? 1 : 0, domain_id}];
    for (int j = 0; j < dim; ++j) {
      double v;
      if (!(ls >> v)) fail("expected " + std::to_string(dim) + " features");
      if (!std::isfinite(v)) fail("non-finite feature");
      g.features.push_back(v);
    }
    double extra;
    if (ls >> extra) fail("too many columns");
    g.labels.push_back(label);
  }
  if (!in_data) throw std::runtime_error("suite: missing data section");

  auto to_set = [&](const Rows& r, int domain_id) {
    SampleSet s;
    s.features.rows = r.labels.size();
    s.features.cols = static_cast<std::size_t>(dim);
    s.features.data = r.features;
    s.labels = r.labels;
    s.domain_ids.assign(r.labels.size(), domain_id);
    return s;
  };

  DomainSuite suite;
  suite.spec = spec;
  suite.spec.num_classes = classes;
  suite.spec.feature_dim = dim;
  if (!have_spec) suite.spec.samples_per_class = 0;  // unknown for external data

  auto train_it = groups.find({0, 0});
  auto test_it = groups.find({1, 0});
  if (test_it == groups.end()) throw std::runtime_error("suite: no source test rows");
  suite.source.test = to_set(test_it->second, 0);
  suite.source.train = train_it != groups.end() ? to_set(train_it->second, 0)
                                                : SampleSet{Matrix(0, dim), {}, {}};

  // Shifted domains must be contiguous 1..K.
  int expect = 1;
  for (const auto& [key, rows] : groups) {
    if (key.first != 1 || key.second == 0) continue;
    if (key.second != expect)
      throw std::runtime_error("suite: shifted domain ids must be contiguous from 1");
    suite.shifted.push_back(to_set(rows, key.second));
    ++expect;
  }
  if (!shift_meta.empty()) {
    if (shift_meta.size() != suite.shifted.size())
      throw std::runtime_error("suite: domain metadata does not match data rows");
    for (std::size_t k = 0; k < suite.shifted.size(); ++k) {
      auto it = shift_meta.find(static_cast<int>(k) + 1);
      if (it == shift_meta.end())
        throw std::runtime_error("suite: missing metadata for domain " + std::to_string(k + 1));
      suite.shifts.push_back(it->second);
    }
  }

  // Source-side class means are re-derived empirically for loaded data.
  suite.source.class_means = Matrix(classes, dim);
  const auto& basis = suite.source.train.size() ? suite.source.train : suite.source.test;
  std::vector<int> counts(classes, 0);
  for (std::size_t i = 0; i < basis.size(); ++i) {
    ++counts[basis.labels[i]];
    for (int j = 0; j < dim; ++j)
      suite.source.class_means.at(basis.labels[i], j) += basis.features.at(i, j);
  }
  for (int c = 0; c < classes; ++c) {
    if (counts[c] == 0) continue;
    for (int j = 0; j < dim; ++j) suite.source.class_means.at(c, j) /= counts[c];
  }
  return suite;
}

inline void save_suite(const DomainSuite& suite, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_suite(suite));
}

inline DomainSuite load_suite(const std::filesystem::path& path) {
  return parse_suite(read_file(path));
}

}  // namespace tta
