#pragma once
/*
 * Test-time adaptation methods over the normalized classifier.
 *
 *   source  frozen model, no updates
 *   bn1     batch-recomputed normalization stats, no updates
 *   tent    entropy minimization on the normalization affine params
 *   roid    weighted soft-likelihood-ratio self-training with certainty and
 *           diversity weighting, augmentation consistency, weight
 *           ensembling toward the source model, and batch prior correction
 *           of the reported predictions
 *
 * Every step reports predictions from the pre-update forward pass, so each
 * sample is evaluated online exactly once.
 */

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tta/losses.hpp"
#include "tta/model.hpp"
#include "tta/prob.hpp"
#include "tta/rng.hpp"
#include "tta/stream.hpp"

namespace tta {

enum class Method { source, bn1, tent, roid };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::source: return "source";
    case Method::bn1: return "bn1";
    case Method::tent: return "tent";
    case Method::roid: return "roid";
  }
  throw std::logic_error("method_name: unknown method");
}

inline Method method_from_name(const std::string& name) {
  if (name == "source") return Method::source;
  if (name == "bn1") return Method::bn1;
  if (name == "tent") return Method::tent;
  if (name == "roid") return Method::roid;
  throw std::invalid_argument("unknown method: " + name);
}

struct AdaptConfig {
  double lr = 1e-3;
  double alpha = 0.99;        // weight-ensembling momentum toward the source
  double tau = 1.0 / 3.0;     // weight temperature
  double beta = 0.9;          // prediction EMA momentum
  double clip_ceiling = 0.99; // probability ceiling before the SLR loss
  double aug_noise_std = 0.1;
  bool use_weighting = true;
  bool use_consistency = true;
  bool use_weight_ensembling = true;
  bool use_prior_correction = true;
  NormMode norm_mode = NormMode::batch_stat;

  void validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("adapt: lr must be > 0");
    if (!(alpha > 0.0 && alpha <= 1.0))
      throw std::invalid_argument("adapt: alpha must be in (0, 1]");
    if (!(tau > 0.0)) throw std::invalid_argument("adapt: tau must be > 0");
    if (!(beta >= 0.0 && beta < 1.0))
      throw std::invalid_argument("adapt: beta must be in [0, 1)");
    if (!(clip_ceiling > 0.0 && clip_ceiling < 1.0))
      throw std::invalid_argument("adapt: clip_ceiling must be in (0, 1)");
    if (!(aug_noise_std > 0.0))
      throw std::invalid_argument("adapt: aug_noise_std must be > 0");
  }
};

struct WeightInfo {
  std::vector<double> weights;   // final, zeros included
  std::vector<double> raw_div;   // 1 - cos(p_i, y_bar), pre-normalization
  std::vector<double> raw_cert;  // -H(p_i), pre-normalization
};

// Certainty/diversity sample weights:
//   w_i = exp(div_i * cert_i / tau) with both factors min-max rescaled to
//   [0, 1], then zeroed where the raw diversity is strictly below the batch
//   mean (samples too close to the running prediction average).
inline WeightInfo compute_weights(const Matrix& probs, const ProbVector& y_bar,
                                  double tau) {
  if (probs.cols != y_bar.size())
    throw std::invalid_argument("compute_weights: class count mismatch");
  if (!(tau > 0.0)) throw std::invalid_argument("compute_weights: tau must be > 0");
  const std::size_t N = probs.rows;
  if (N == 0) throw std::invalid_argument("compute_weights: empty batch");

  WeightInfo out;
  out.raw_div.resize(N);
  out.raw_cert.resize(N);
  for (std::size_t i = 0; i < N; ++i) {
    out.raw_div[i] = 1.0 - cosine_similarity(probs.row(i), y_bar);
    out.raw_cert[i] = -entropy(probs.row(i));
  }
  const auto nd = minmax_unit_normalize(out.raw_div);
  const auto nc = minmax_unit_normalize(out.raw_cert);

  double mean_div = 0.0;
  for (double d : out.raw_div) mean_div += d;
  mean_div /= static_cast<double>(N);

  out.weights.resize(N);
  for (std::size_t i = 0; i < N; ++i)
    out.weights[i] = out.raw_div[i] < mean_div ? 0.0 : std::exp(nd[i] * nc[i] / tau);
  return out;
}

// y_bar <- beta * y_bar + (1 - beta) * mean_i p_i, renormalized.
inline ProbVector update_prediction_ema(const ProbVector& y_bar, const Matrix& probs,
                                        double beta) {
  if (probs.cols != y_bar.size())
    throw std::invalid_argument("update_prediction_ema: class count mismatch");
  std::vector<double> next(y_bar.size());
  const double scale = (1.0 - beta) / static_cast<double>(probs.rows);
  double sum = 0.0;
  for (std::size_t j = 0; j < next.size(); ++j) {
    double col = 0.0;
    for (std::size_t i = 0; i < probs.rows; ++i) col += probs.at(i, j);
    next[j] = beta * y_bar[j] + scale * col;
    sum += next[j];
  }
  for (auto& v : next) v /= sum;
  return ProbVector(std::move(next));
}

// theta <- alpha * theta + (1 - alpha) * theta0 on the trainable groups.
// Frozen groups are bitwise untouched.
inline void weight_ensemble(ParamSet& theta, const ParamSet& theta0, double alpha) {
  auto cur = param_groups(theta);
  auto ref = param_groups(const_cast<ParamSet&>(theta0));
  for (std::size_t k = 0; k < cur.size(); ++k) {
    if (!cur[k].trainable) continue;
    auto& c = *cur[k].values;
    const auto& r = *ref[k].values;
    if (c.size() != r.size()) throw std::invalid_argument("weight_ensemble: shape mismatch");
    for (std::size_t i = 0; i < c.size(); ++i)
      c[i] = alpha * c[i] + (1.0 - alpha) * r[i];
  }
}

struct PriorCorrection {
  Matrix corrected;          // rows renormalized after multiplying by p_bar
  std::vector<double> p_hat; // batch mean prediction
  std::vector<double> p_bar; // smoothed prior estimate
  double gamma = 0.0;
};

// Batch prior correction of reported predictions:
//   p_hat = mean_i p_i
//   gamma = max(1/N_b, 1/N_c) / max_c p_hat_c
//   p_bar = (p_hat + gamma) / (1 + gamma * N_c)
//   corrected_i proportional to p_i .* p_bar
// Affects only what is reported, never the adaptation loss.
inline PriorCorrection prior_correct(const Matrix& probs) {
  const std::size_t N = probs.rows, C = probs.cols;
  if (N == 0 || C == 0) throw std::invalid_argument("prior_correct: empty input");
  PriorCorrection out;
  out.p_hat.assign(C, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < C; ++j) out.p_hat[j] += probs.at(i, j) / static_cast<double>(N);
  double mx = 0.0;
  for (double v : out.p_hat) mx = std::max(mx, v);
  out.gamma = std::max(1.0 / static_cast<double>(N), 1.0 / static_cast<double>(C)) / mx;
  out.p_bar.resize(C);
  const double denom = 1.0 + out.gamma * static_cast<double>(C);
  for (std::size_t j = 0; j < C; ++j) out.p_bar[j] = (out.p_hat[j] + out.gamma) / denom;

  out.corrected = Matrix(N, C);
  for (std::size_t i = 0; i < N; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < C; ++j) {
      out.corrected.at(i, j) = probs.at(i, j) * out.p_bar[j];
      sum += out.corrected.at(i, j);
    }
    for (std::size_t j = 0; j < C; ++j) out.corrected.at(i, j) /= sum;
  }
  return out;
}

// Augmented view x' = s * (x + eta): per sample, first one gaussian eta per
// feature, then one scale s ~ U(scale_lo, scale_hi). Draw order is part of
// the determinism contract. scale_lo == scale_hi == 1 with zero noise is the
// identity (test hook).
inline Matrix augment(const Matrix& X, RngStream& rng, double noise_std,
                      double scale_lo = 0.95, double scale_hi = 1.05) {
  if (noise_std < 0.0) throw std::invalid_argument("augment: noise_std must be >= 0");
  if (scale_lo > scale_hi) throw std::invalid_argument("augment: bad scale range");
  Matrix out(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    for (std::size_t j = 0; j < X.cols; ++j)
      out.at(i, j) = X.at(i, j) + noise_std * rng.gaussian();
    const double s = rng.uniform(scale_lo, scale_hi);
    for (std::size_t j = 0; j < X.cols; ++j) out.at(i, j) *= s;
  }
  return out;
}

struct AdaptState {
  Method method = Method::roid;
  AdaptConfig config;
  ParamSet theta;         // live parameters (tta partition)
  ParamSet theta0;        // frozen source reference
  NormStats source_stats;
  ProbVector y_bar;       // running mean prediction
  RngStream rng;          // augmentation stream
  long skipped_steps = 0; // non-finite losses encountered and skipped

  AdaptState() : rng(0) {}
};

inline AdaptState make_adapt_state(Method method, const Pretrained& model,
                                   const AdaptConfig& config, std::uint64_t seed) {
  config.validate();
  AdaptState s;
  s.method = method;
  s.config = config;
  s.theta = model.params;
  s.theta.set_tta_partition();
  s.theta0 = s.theta;
  s.source_stats = model.source_stats;
  s.y_bar = ProbVector::uniform(model.params.num_classes());
  s.rng = RngStream::derived(seed, 0xA06ULL);
  return s;
}

struct StepOutput {
  std::vector<int> predictions;  // reported online, pre-update
  Matrix probs;                  // raw pre-update probabilities
  std::vector<double> weights;   // per-sample loss weights (all 1 when unused)
  double loss = 0.0;
  bool updated = false;          // an optimizer step was applied
};

namespace detail {

inline std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows);
  for (std::size_t i = 0; i < m.rows; ++i) {
    auto row = m.row(i);
    int arg = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[arg]) arg = static_cast<int>(j);
    out[i] = arg;
  }
  return out;
}

inline void add_grads(ParamGrads& acc, const ParamGrads& extra, const ParamSet& p) {
  auto a = grad_groups(acc, p);
  auto b = grad_groups(const_cast<ParamGrads&>(extra), p);
  for (std::size_t k = 0; k < a.size(); ++k)
    for (std::size_t i = 0; i < a[k].values->size(); ++i)
      (*a[k].values)[i] += (*b[k].values)[i];
}

// Source never recomputes batch statistics.
inline NormMode source_mode(NormMode configured) {
  return configured == NormMode::batch_stat ? NormMode::frozen_source : configured;
}

}  // namespace detail

inline StepOutput source_step(AdaptState& s, const Batch& batch) {
  auto cache = forward(batch.features, s.theta, detail::source_mode(s.config.norm_mode),
                       &s.source_stats);
  StepOutput out;
  out.predictions = detail::argmax_rows(cache.probs);
  out.probs = std::move(cache.probs);
  out.weights.assign(batch.size(), 1.0);
  return out;
}

inline StepOutput bn1_step(AdaptState& s, const Batch& batch) {
  // Batch-stat recomputation is the method itself; batch size 1 is rejected
  // by the forward pass.
  auto cache = forward(batch.features, s.theta, NormMode::batch_stat, &s.source_stats);
  StepOutput out;
  out.predictions = detail::argmax_rows(cache.probs);
  out.probs = std::move(cache.probs);
  out.weights.assign(batch.size(), 1.0);
  return out;
}

inline StepOutput tent_step(AdaptState& s, const Batch& batch) {
  auto cache = forward(batch.features, s.theta, s.config.norm_mode, &s.source_stats);
  auto ent = entropy_loss(cache.probs);

  StepOutput out;
  out.predictions = detail::argmax_rows(cache.probs);
  out.weights.assign(batch.size(), 1.0);
  out.loss = ent.value;
  if (std::isfinite(ent.value)) {
    auto grads = backward(cache, s.theta, ent.dlogits);
    out.updated = sgd_step(s.theta, grads, s.config.lr);
  }
  if (!out.updated) ++s.skipped_steps;
  out.probs = std::move(cache.probs);
  return out;
}

inline StepOutput roid_step(AdaptState& s, const Batch& batch) {
  const AdaptConfig& cfg = s.config;
  const std::size_t N = batch.size();

  // (1) forward; batch_stat recomputes statistics from this batch
  auto cache = forward(batch.features, s.theta, cfg.norm_mode, &s.source_stats);

  // (2) certainty/diversity weights against the running mean prediction
  StepOutput out;
  if (cfg.use_weighting) {
    auto wi = compute_weights(cache.probs, s.y_bar, cfg.tau);
    out.weights = std::move(wi.weights);
    // (3) fold the raw pre-update probabilities into the running mean
    s.y_bar = update_prediction_ema(s.y_bar, cache.probs, cfg.beta);
  } else {
    out.weights.assign(N, 1.0);
  }

  // (4) probability ceiling; clipped entries pass zero gradient
  auto cp = clip_probs(cache.probs, cfg.clip_ceiling);

  // (5) weighted soft likelihood ratio over the full batch
  auto slr = slr_loss(cp, cache.probs, out.weights);
  double total = slr.value;
  Matrix upstream = slr.dlogits;

  // (6) consistency on the nonzero-weight subset against an augmented view
  std::optional<ForwardCache> aug_cache;
  Matrix aug_dlogits;
  if (cfg.use_consistency) {
    std::vector<std::size_t> subset;
    for (std::size_t i = 0; i < N; ++i)
      if (out.weights[i] > 0.0) subset.push_back(i);
    // batch_stat needs >= 2 samples to recompute statistics on the view
    const bool viable =
        !subset.empty() && !(cfg.norm_mode == NormMode::batch_stat && subset.size() < 2);
    if (viable) {
      Matrix xs(subset.size(), batch.features.cols);
      Matrix ps(subset.size(), cache.probs.cols);
      std::vector<double> ws(subset.size());
      for (std::size_t k = 0; k < subset.size(); ++k) {
        const auto i = subset[k];
        std::copy(batch.features.row(i).begin(), batch.features.row(i).end(),
                  xs.row(k).begin());
        std::copy(cache.probs.row(i).begin(), cache.probs.row(i).end(), ps.row(k).begin());
        ws[k] = out.weights[i];
      }
      Matrix xa = augment(xs, s.rng, cfg.aug_noise_std);
      aug_cache = forward(xa, s.theta, cfg.norm_mode, &s.source_stats);
      auto sce = sce_loss(ps, aug_cache->probs, ws);
      total += sce.value;
      aug_dlogits = std::move(sce.dlogits_aug);
      for (std::size_t k = 0; k < subset.size(); ++k)
        for (std::size_t j = 0; j < upstream.cols; ++j)
          upstream.at(subset[k], j) += sce.dlogits_main.at(k, j);
    }
  }
  out.loss = total;

  // (7) one SGD step on the trainable (normalization affine) groups
  if (std::isfinite(total)) {
    auto grads = backward(cache, s.theta, upstream);
    if (aug_cache) detail::add_grads(grads, backward(*aug_cache, s.theta, aug_dlogits), s.theta);
    out.updated = sgd_step(s.theta, grads, cfg.lr);
  }
  if (out.updated) {
    // (8) pull the live parameters back toward the source model
    if (cfg.use_weight_ensembling) weight_ensemble(s.theta, s.theta0, cfg.alpha);
  } else {
    ++s.skipped_steps;
  }

  // (9) report pre-update predictions, prior-corrected when enabled
  if (cfg.use_prior_correction) {
    auto pc = prior_correct(cache.probs);
    out.predictions = detail::argmax_rows(pc.corrected);
  } else {
    out.predictions = detail::argmax_rows(cache.probs);
  }
  out.probs = std::move(cache.probs);
  return out;
}

inline StepOutput adapt_step(AdaptState& s, const Batch& batch) {
  switch (s.method) {
    case Method::source: return source_step(s, batch);
    case Method::bn1: return bn1_step(s, batch);
    case Method::tent: return tent_step(s, batch);
    case Method::roid: return roid_step(s, batch);
  }
  throw std::logic_error("adapt_step: unknown method");
}

}  // namespace tta
