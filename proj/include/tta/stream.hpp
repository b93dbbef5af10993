#pragma once
/*
 * Stream construction: turns a domain suite into an ordered sample plan and
 * fixed-size batches.
 *
 * Settings:
 *   continual        domains back to back, shuffled within each domain
 *   mixed_domains    all shifted domains pooled and shuffled together
 *   correlated       per-domain class-correlated order (sorted, or Dirichlet
 *                    slot draws when a concentration delta is given)
 *   mixed_correlated pooled across domains, then class-correlated
 *
 * A plan is a permutation of the shifted domains' test samples; batches are
 * consecutive slices with the final partial batch emitted as-is.
 */

#include <cstdint>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/dirichlet.hpp"
#include "tta/rng.hpp"

namespace tta {

enum class StreamKind { continual, mixed_domains, correlated, mixed_correlated };

inline const char* stream_kind_name(StreamKind k) {
  switch (k) {
    case StreamKind::continual: return "continual";
    case StreamKind::mixed_domains: return "mixed_domains";
    case StreamKind::correlated: return "correlated";
    case StreamKind::mixed_correlated: return "mixed_correlated";
  }
  throw std::logic_error("stream_kind_name: unknown kind");
}

inline StreamKind stream_kind_from_name(const std::string& name) {
  if (name == "continual") return StreamKind::continual;
  if (name == "mixed_domains") return StreamKind::mixed_domains;
  if (name == "correlated") return StreamKind::correlated;
  if (name == "mixed_correlated") return StreamKind::mixed_correlated;
  throw std::invalid_argument("unknown stream setting: " + name);
}

struct StreamSetting {
  StreamKind kind = StreamKind::continual;
  // Correlation strength for the correlated kinds. Absent means fully
  // class-sorted; small values give long single-class runs, large values
  // approach an i.i.d. order.
  std::optional<double> dirichlet_delta;
  std::uint64_t seed = 0;
};

struct StreamEntry {
  int domain_id = 0;    // 1..K
  int sample_index = 0; // row within that domain's sample set
};

struct StreamPlan {
  std::vector<StreamEntry> entries;
  std::size_t batch_size = 64;

  std::size_t size() const { return entries.size(); }
  std::size_t num_batches() const {
    return (entries.size() + batch_size - 1) / batch_size;
  }
};

// Class-correlated permutation of `labels`: one Dirichlet(delta) draw fixes
// per-class weights, then each slot samples a class from the weights
// restricted to classes that still have samples left.
inline std::vector<std::size_t> dirichlet_order(const std::vector<int>& labels,
                                                double delta, RngStream& rng) {
  if (labels.empty()) return {};
  int num_classes = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("dirichlet_order: negative label");
    num_classes = std::max(num_classes, l + 1);
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  for (auto& g : by_class) rng.shuffle(g);

  auto pi = dirichlet_sample(delta, static_cast<std::size_t>(num_classes), rng);
  std::vector<std::size_t> next(num_classes, 0);
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  while (order.size() < labels.size()) {
    double live = 0.0;
    for (int c = 0; c < num_classes; ++c)
      if (next[c] < by_class[c].size()) live += pi[c];
    int chosen = -1;
    if (live > 0.0) {
      const double u = rng.uniform() * live;
      double acc = 0.0;
      for (int c = 0; c < num_classes; ++c) {
        if (next[c] >= by_class[c].size()) continue;
        acc += pi[c];
        chosen = c;
        if (u < acc) break;
      }
    } else {
      // All remaining classes carry zero Dirichlet mass (extreme delta);
      // fall back to the first class with samples left.
      for (int c = 0; c < num_classes; ++c) {
        if (next[c] < by_class[c].size()) {
          chosen = c;
          break;
        }
      }
    }
    order.push_back(by_class[chosen][next[chosen]++]);
  }
  return order;
}

// Fully class-sorted permutation; within-class order is shuffled so repeated
// seeds differ only via rng.
inline std::vector<std::size_t> sorted_order(const std::vector<int>& labels,
                                             RngStream& rng) {
  int num_classes = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("sorted_order: negative label");
    num_classes = std::max(num_classes, l + 1);
  }
  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::size_t> order;
  order.reserve(labels.size());
  for (auto& g : by_class) {
    rng.shuffle(g);
    order.insert(order.end(), g.begin(), g.end());
  }
  return order;
}

inline StreamPlan build_stream(const StreamSetting& setting, const DomainSuite& suite,
                               std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("build_stream: batch_size must be >= 1");
  if (suite.num_shifted_domains() == 0)
    throw std::invalid_argument("build_stream: suite has no shifted domains");
  if (setting.dirichlet_delta && !(*setting.dirichlet_delta > 0.0))
    throw std::invalid_argument("build_stream: dirichlet_delta must be > 0");

  StreamPlan plan;
  plan.batch_size = batch_size;
  const int K = static_cast<int>(suite.num_shifted_domains());

  auto push_domain = [&](int k, const std::vector<std::size_t>& order) {
    for (std::size_t idx : order)
      plan.entries.push_back({k, static_cast<int>(idx)});
  };

  switch (setting.kind) {
    case StreamKind::continual: {
      for (int k = 1; k <= K; ++k) {
        RngStream rng = RngStream::derived(setting.seed, static_cast<std::uint64_t>(k));
        std::vector<std::size_t> order(suite.domain(k).size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        push_domain(k, order);
      }
      break;
    }
    case StreamKind::mixed_domains: {
      for (int k = 1; k <= K; ++k)
        for (std::size_t i = 0; i < suite.domain(k).size(); ++i)
          plan.entries.push_back({k, static_cast<int>(i)});
      RngStream rng = RngStream::derived(setting.seed, 0);
      rng.shuffle(plan.entries);
      break;
    }
    case StreamKind::correlated: {
      for (int k = 1; k <= K; ++k) {
        RngStream rng = RngStream::derived(setting.seed, static_cast<std::uint64_t>(k));
        const auto& labels = suite.domain(k).labels;
        auto order = setting.dirichlet_delta
                         ? dirichlet_order(labels, *setting.dirichlet_delta, rng)
                         : sorted_order(labels, rng);
        push_domain(k, order);
      }
      break;
    }
    case StreamKind::mixed_correlated: {
      std::vector<StreamEntry> pool;
      std::vector<int> pool_labels;
      for (int k = 1; k <= K; ++k) {
        const auto& dom = suite.domain(k);
        for (std::size_t i = 0; i < dom.size(); ++i) {
          pool.push_back({k, static_cast<int>(i)});
          pool_labels.push_back(dom.labels[i]);
        }
      }
      RngStream rng = RngStream::derived(setting.seed, 0);
      auto order = setting.dirichlet_delta
                       ? dirichlet_order(pool_labels, *setting.dirichlet_delta, rng)
                       : sorted_order(pool_labels, rng);
      for (std::size_t idx : order) plan.entries.push_back(pool[idx]);
      break;
    }
  }
  return plan;
}

// Batches reuse the columnar sample layout.
using Batch = SampleSet;

inline Batch make_batch(const StreamPlan& plan, const DomainSuite& suite,
                        std::size_t batch_index) {
  if (batch_index >= plan.num_batches())
    throw std::out_of_range("make_batch: batch_index out of range");
  const std::size_t begin = batch_index * plan.batch_size;
  const std::size_t end = std::min(begin + plan.batch_size, plan.entries.size());
  const std::size_t dim = suite.domain(1).features.cols;
  Batch b;
  b.features = Matrix(end - begin, dim);
  b.labels.resize(end - begin);
  b.domain_ids.resize(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    const auto& e = plan.entries[i];
    const auto& dom = suite.domain(e.domain_id);
    auto src = dom.features.row(e.sample_index);
    auto dst = b.features.row(i - begin);
    std::copy(src.begin(), src.end(), dst.begin());
    b.labels[i - begin] = dom.labels[e.sample_index];
    b.domain_ids[i - begin] = e.domain_id;
  }
  return b;
}

// Audit trace: one line per entry, "position domain_id sample_index label".
inline std::string format_trace(const StreamPlan& plan, const DomainSuite& suite) {
  std::ostringstream out;
  out << "tta-trace v1\n";
  for (std::size_t i = 0; i < plan.entries.size(); ++i) {
    const auto& e = plan.entries[i];
    out << i << " " << e.domain_id << " " << e.sample_index << " "
        << suite.domain(e.domain_id).labels[e.sample_index] << "\n";
  }
  return out.str();
}

}  // namespace tta
