#pragma once
/*
 * Online evaluation metrics and the two diagnostic protocols: the
 * forgetting run (shifted and source phases alternating) and the
 * generalization matrix (adapt on one domain, probe all of them at two
 * learning rates).
 */

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tta/adaptation.hpp"
#include "tta/dataset.hpp"
#include "tta/model.hpp"
#include "tta/prob.hpp"
#include "tta/rng.hpp"

namespace tta {

// Fraction of mismatches, each sample counted exactly once.
inline double online_error(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("online_error: length mismatch");
  if (predictions.empty()) throw std::invalid_argument("online_error: empty streams");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predictions[i] != labels[i];
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

inline constexpr std::size_t kTvdWindow = 500;

// Per non-overlapping window, the total variation distance between the
// empirical predicted-class distribution and the empirical label
// distribution. A trailing partial window still produces a value, so every
// sample contributes to exactly one window. Collapse onto a single class
// shows up as values drifting toward 1 - 1/C.
inline std::vector<double> tvd_trace(std::span<const int> predictions,
                                     std::span<const int> labels, std::size_t num_classes,
                                     std::size_t window = kTvdWindow) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("tvd_trace: length mismatch");
  if (window < 1) throw std::invalid_argument("tvd_trace: window must be >= 1");
  if (num_classes < 1) throw std::invalid_argument("tvd_trace: need >= 1 class");

  std::vector<double> trace;
  for (std::size_t start = 0; start < labels.size(); start += window) {
    const std::size_t stop = std::min(start + window, labels.size());
    std::vector<double> p(num_classes, 0.0), q(num_classes, 0.0);
    const double inv = 1.0 / static_cast<double>(stop - start);
    for (std::size_t i = start; i < stop; ++i) {
      if (predictions[i] < 0 || static_cast<std::size_t>(predictions[i]) >= num_classes ||
          labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes)
        throw std::invalid_argument("tvd_trace: class index out of range");
      p[predictions[i]] += inv;
      q[labels[i]] += inv;
    }
    trace.push_back(tvd(p, q));
  }
  return trace;
}

namespace detail {

// Feed `data[order]` through the method in batches; appends reported
// predictions and returns the error count for the phase.
inline std::size_t adapt_over(AdaptState& s, const SampleSet& data,
                              const std::vector<std::size_t>& order, std::size_t batch_size,
                              std::vector<int>* predictions_out = nullptr) {
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t stop = std::min(start + batch_size, order.size());
    Batch b;
    b.features = Matrix(stop - start, data.features.cols);
    b.labels.resize(stop - start);
    b.domain_ids.resize(stop - start);
    for (std::size_t k = start; k < stop; ++k) {
      const auto idx = order[k];
      std::copy(data.features.row(idx).begin(), data.features.row(idx).end(),
                b.features.row(k - start).begin());
      b.labels[k - start] = data.labels[idx];
      b.domain_ids[k - start] = data.domain_ids[idx];
    }
    auto out = adapt_step(s, b);
    for (std::size_t i = 0; i < b.labels.size(); ++i) {
      wrong += out.predictions[i] != b.labels[i];
      if (predictions_out) predictions_out->push_back(out.predictions[i]);
    }
  }
  return wrong;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed,
                                                 std::uint64_t tag) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  RngStream rng = RngStream::derived(seed, tag);
  rng.shuffle(idx);
  return idx;
}

// Methods that recompute batch statistics cannot normalize a one-sample
// trailing batch.
inline void check_phase_batching(std::size_t n, std::size_t batch_size, Method method,
                                 NormMode mode) {
  if (batch_size == 0) throw std::invalid_argument("phase batching: batch_size must be >= 1");
  const bool needs_pairs =
      method == Method::bn1 || (mode == NormMode::batch_stat && method != Method::source);
  if (needs_pairs && n % batch_size == 1)
    throw std::invalid_argument(
        "phase batching: trailing one-sample batch under batch statistics");
}

}  // namespace detail

struct ForgettingResult {
  double reference_error = 0.0;        // frozen source model on the source test set
  std::vector<double> shifted_errors;  // online error per shifted phase, in order
  std::vector<double> source_errors;   // online error per interleaved source phase
};

// Alternating protocol [D1, Source, D2, Source, ...]: the method adapts
// through the whole sequence and every source phase records how much source
// accuracy survives. The last entry of source_errors against
// reference_error is the forgetting gap.
inline ForgettingResult forgetting_protocol(Method method, const Pretrained& model,
                                            const AdaptConfig& config,
                                            const DomainSuite& suite,
                                            std::size_t batch_size, std::uint64_t seed) {
  const std::size_t K = suite.num_shifted_domains();
  if (K == 0) throw std::invalid_argument("forgetting_protocol: no shifted domains");
  detail::check_phase_batching(suite.source.test.size(), batch_size, method,
                               config.norm_mode);
  for (std::size_t k = 1; k <= K; ++k)
    detail::check_phase_batching(suite.domain(static_cast<int>(k)).size(), batch_size,
                                 method, config.norm_mode);

  ForgettingResult res;
  res.reference_error = eval_error(model.params, model.source_stats, config.norm_mode,
                                   suite.source.test);

  AdaptState s = make_adapt_state(method, model, config,
                                  RngStream::derive_seed(seed, 0xF09ULL));
  for (std::size_t k = 1; k <= K; ++k) {
    const SampleSet& shifted = suite.domain(static_cast<int>(k));
    auto order = detail::shuffled_indices(shifted.size(), seed, 2 * k);
    res.shifted_errors.push_back(
        static_cast<double>(detail::adapt_over(s, shifted, order, batch_size)) /
        static_cast<double>(shifted.size()));

    auto src_order = detail::shuffled_indices(suite.source.test.size(), seed, 2 * k + 1);
    res.source_errors.push_back(
        static_cast<double>(
            detail::adapt_over(s, suite.source.test, src_order, batch_size)) /
        static_cast<double>(suite.source.test.size()));
  }
  return res;
}

// Adapt on one domain's adapt split at a moderate and a stronger learning
// rate, freeze, and probe every domain's held-out split. Entries are
// error(strong) - error(moderate): positive off-diagonal mass is
// generalization lost to the stronger adaptation. Shape K x (K + 1); column
// 0 is the source domain.
inline Matrix generalization_matrix(Method method, const Pretrained& model,
                                    const AdaptConfig& config, const DomainSuite& suite,
                                    double lr_moderate, double lr_strong,
                                    double holdout_fraction, std::size_t batch_size,
                                    std::uint64_t seed) {
  const std::size_t K = suite.num_shifted_domains();
  if (K == 0) throw std::invalid_argument("generalization_matrix: no shifted domains");
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
    throw std::invalid_argument("generalization_matrix: holdout_fraction must be in (0, 1)");
  if (!(lr_moderate > 0.0 && lr_strong > 0.0))
    throw std::invalid_argument("generalization_matrix: learning rates must be > 0");

  // one adapt/eval split per domain, shared by every run
  std::vector<std::vector<std::size_t>> adapt_idx(K + 1), eval_idx(K + 1);
  for (std::size_t d = 0; d <= K; ++d) {
    const SampleSet& ds = suite.domain(static_cast<int>(d));
    auto idx = detail::shuffled_indices(ds.size(), seed, 0x6E0ULL + d);
    const std::size_t cut = static_cast<std::size_t>(
        holdout_fraction * static_cast<double>(ds.size()));
    if (cut < 2 || ds.size() - cut < 2)
      throw std::invalid_argument("generalization_matrix: split leaves fewer than 2 samples");
    adapt_idx[d].assign(idx.begin(), idx.begin() + cut);
    eval_idx[d].assign(idx.begin() + cut, idx.end());
  }

  auto frozen_error = [&](const ParamSet& p, const NormStats& stats,
                          const SampleSet& ds, const std::vector<std::size_t>& idx) {
    Matrix X(idx.size(), ds.features.cols);
    for (std::size_t i = 0; i < idx.size(); ++i)
      std::copy(ds.features.row(idx[i]).begin(), ds.features.row(idx[i]).end(),
                X.row(i).begin());
    auto cache = forward(X, p, config.norm_mode, &stats);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      auto row = cache.probs.row(i);
      int arg = 0;
      for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[arg]) arg = static_cast<int>(j);
      wrong += arg != ds.labels[idx[i]];
    }
    return static_cast<double>(wrong) / static_cast<double>(idx.size());
  };

  Matrix delta(K, K + 1);
  for (std::size_t k = 1; k <= K; ++k) {
    detail::check_phase_batching(adapt_idx[k].size(), batch_size, method, config.norm_mode);
    std::vector<std::vector<double>> errors(2);
    const double lrs[2] = {lr_moderate, lr_strong};
    for (int which = 0; which < 2; ++which) {
      AdaptConfig run_cfg = config;
      run_cfg.lr = lrs[which];
      // same state seed for both rates: equal rates give an exactly zero row
      AdaptState s = make_adapt_state(method, model, run_cfg,
                                      RngStream::derive_seed(seed, 0xAD0ULL + k));
      detail::adapt_over(s, suite.domain(static_cast<int>(k)), adapt_idx[k], batch_size);
      for (std::size_t j = 0; j <= K; ++j)
        errors[which].push_back(frozen_error(s.theta, s.source_stats,
                                             suite.domain(static_cast<int>(j)),
                                             eval_idx[j]));
    }
    for (std::size_t j = 0; j <= K; ++j)
      delta.at(k - 1, j) = errors[1][j] - errors[0][j];
  }
  return delta;
}

}  // namespace tta
