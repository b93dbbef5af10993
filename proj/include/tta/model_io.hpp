#pragma once
/*
 * Checkpoint text format for pretrained models: parameter groups with
 * shapes plus frozen source statistics. Values use shortest exact decimal
 * formatting, so save/load round-trips bit-identically.
 */

#include <sstream>
#include <string>
#include <tuple>

#include "tta/io_util.hpp"
#include "tta/model.hpp"

namespace tta {

inline std::string serialize_checkpoint(const Pretrained& m) {
  std::ostringstream out;
  out << "tta-params v1\n";
  out << "dims " << m.params.feature_dim() << " " << m.params.hidden_dim() << " "
      << m.params.num_classes() << "\n";
  out << "info train_error " << format_double(m.train_error) << "\n";
  out << "info test_error " << format_double(m.test_error) << "\n";

  auto emit = [&](const char* name, std::size_t rows, std::size_t cols,
                  const std::vector<double>& values) {
    out << "group " << name << " " << rows << " " << cols << "\n";
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        if (j) out << " ";
        out << format_double(values[i * cols + j]);
      }
      out << "\n";
    }
  };
  emit("W1", m.params.W1.rows, m.params.W1.cols, m.params.W1.data);
  emit("b1", 1, m.params.b1.size(), m.params.b1);
  emit("gamma", 1, m.params.gamma.size(), m.params.gamma);
  emit("beta", 1, m.params.beta.size(), m.params.beta);
  emit("W2", m.params.W2.rows, m.params.W2.cols, m.params.W2.data);
  emit("b2", 1, m.params.b2.size(), m.params.b2);
  emit("stats_mean", 1, m.source_stats.mean.size(), m.source_stats.mean);
  emit("stats_std", 1, m.source_stats.std.size(), m.source_stats.std);
  return out.str();
}

inline Pretrained parse_checkpoint(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "tta-params v1")
    throw std::runtime_error("checkpoint: bad or missing header magic");

  std::size_t dim = 0, hidden = 0, classes = 0;
  Pretrained m;
  bool have_dims = false;

  auto read_group = [&](std::istringstream& header) {
    std::string name;
    std::size_t rows, cols;
    if (!(header >> name >> rows >> cols))
      throw std::runtime_error("checkpoint: malformed group header");
    std::vector<double> values;
    values.reserve(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) {
      if (!std::getline(in, line))
        throw std::runtime_error("checkpoint: truncated group " + name);
      std::istringstream ls(line);
      double v;
      std::size_t got = 0;
      while (ls >> v) {
        if (!std::isfinite(v))
          throw std::runtime_error("checkpoint: non-finite value in " + name);
        values.push_back(v);
        ++got;
      }
      if (got != cols)
        throw std::runtime_error("checkpoint: row width mismatch in " + name);
    }
    return std::tuple<std::string, std::size_t, std::size_t, std::vector<double>>(
        name, rows, cols, std::move(values));
  };

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "dims") {
      if (!(ls >> dim >> hidden >> classes) || dim < 1 || hidden < 1 || classes < 2)
        throw std::runtime_error("checkpoint: bad dims line");
      have_dims = true;
    } else if (tok == "info") {
      std::string key;
      double v;
      if (!(ls >> key >> v)) throw std::runtime_error("checkpoint: bad info line");
      if (key == "train_error") m.train_error = v;
      if (key == "test_error") m.test_error = v;
    } else if (tok == "group") {
      if (!have_dims) throw std::runtime_error("checkpoint: group before dims");
      auto [name, rows, cols, values] = read_group(ls);
      auto expect = [&](std::size_t r, std::size_t c) {
        if (rows != r || cols != c)
          throw std::runtime_error("checkpoint: shape mismatch for " + name);
      };
      if (name == "W1") {
        expect(dim, hidden);
        m.params.W1 = Matrix(dim, hidden);
        m.params.W1.data = std::move(values);
      } else if (name == "b1") {
        expect(1, hidden);
        m.params.b1 = std::move(values);
      } else if (name == "gamma") {
        expect(1, hidden);
        m.params.gamma = std::move(values);
      } else if (name == "beta") {
        expect(1, hidden);
        m.params.beta = std::move(values);
      } else if (name == "W2") {
        expect(hidden, classes);
        m.params.W2 = Matrix(hidden, classes);
        m.params.W2.data = std::move(values);
      } else if (name == "b2") {
        expect(1, classes);
        m.params.b2 = std::move(values);
      } else if (name == "stats_mean") {
        expect(1, hidden);
        m.source_stats.mean = std::move(values);
      } else if (name == "stats_std") {
        expect(1, hidden);
        for (double v : values) {
          if (!(v > 0.0)) throw std::runtime_error("checkpoint: stats_std must be > 0");
        }
        m.source_stats.std = std::move(values);
      } else {
        throw std::runtime_error("checkpoint: unknown group " + name);
      }
    } else {
      throw std::runtime_error("checkpoint: unknown token '" + tok + "'");
    }
  }
  if (m.params.W1.data.empty() || m.params.W2.data.empty() || m.params.b1.empty() ||
      m.params.gamma.empty() || m.params.beta.empty() || m.params.b2.empty() ||
      m.source_stats.mean.empty() || m.source_stats.std.empty())
    throw std::runtime_error("checkpoint: missing groups");
  m.source_stats.mode = NormMode::frozen_source;
  m.params.set_pretrain_partition();
  return m;
}

inline void save_checkpoint(const Pretrained& m, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(m));
}

inline Pretrained load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(read_file(path));
}

}  // namespace tta
