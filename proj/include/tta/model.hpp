#pragma once
/*
 * One-hidden-layer classifier with a normalization layer:
 *
 *   logits = W2^T relu(gamma .* normalize(W1^T x + b1) + beta) + b2
 *
 * normalize has three modes:
 *   batch_stat     per-feature stats over the current batch (couples samples)
 *   layer_stat     per-sample stats over hidden features (independent rows)
 *   frozen_source  stored source statistics
 *
 * backward computes exact analytic gradients, including the normalization
 * Jacobian in the two recomputed modes. Parameter groups carry frozen or
 * trainable tags; adaptation trains only gamma/beta, pretraining trains all.
 */

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tta/dataset.hpp"
#include "tta/matrix.hpp"
#include "tta/prob.hpp"
#include "tta/rng.hpp"

namespace tta {

inline constexpr double kNormEps = 1e-5;  // std floor inside normalize

enum class NormMode { batch_stat, layer_stat, frozen_source };

inline const char* norm_mode_name(NormMode m) {
  switch (m) {
    case NormMode::batch_stat: return "batch_stat";
    case NormMode::layer_stat: return "layer_stat";
    case NormMode::frozen_source: return "frozen_source";
  }
  throw std::logic_error("norm_mode_name: unknown mode");
}

inline NormMode norm_mode_from_name(const std::string& name) {
  if (name == "batch_stat") return NormMode::batch_stat;
  if (name == "layer_stat") return NormMode::layer_stat;
  if (name == "frozen_source") return NormMode::frozen_source;
  throw std::invalid_argument("unknown norm mode: " + name);
}

struct NormStats {
  std::vector<double> mean;  // per hidden feature
  std::vector<double> std;   // floored, always > 0
  NormMode mode = NormMode::frozen_source;
};

struct ParamSet {
  Matrix W1;               // feature_dim x hidden
  std::vector<double> b1;  // hidden
  std::vector<double> gamma;
  std::vector<double> beta;
  Matrix W2;               // hidden x classes
  std::vector<double> b2;  // classes

  struct Tags {
    bool W1 = true, b1 = true, gamma = true, beta = true, W2 = true, b2 = true;
  } trainable;

  std::size_t feature_dim() const { return W1.rows; }
  std::size_t hidden_dim() const { return W1.cols; }
  std::size_t num_classes() const { return W2.cols; }

  void set_pretrain_partition() { trainable = Tags{}; }
  // During test-time adaptation only the normalization affine pair trains.
  void set_tta_partition() {
    trainable = Tags{false, false, true, true, false, false};
  }
};

struct ParamGrads {
  Matrix W1;
  std::vector<double> b1;
  std::vector<double> gamma;
  std::vector<double> beta;
  Matrix W2;
  std::vector<double> b2;

  static ParamGrads zeros_like(const ParamSet& p) {
    ParamGrads g;
    g.W1 = Matrix(p.W1.rows, p.W1.cols);
    g.b1.assign(p.b1.size(), 0.0);
    g.gamma.assign(p.gamma.size(), 0.0);
    g.beta.assign(p.beta.size(), 0.0);
    g.W2 = Matrix(p.W2.rows, p.W2.cols);
    g.b2.assign(p.b2.size(), 0.0);
    return g;
  }
};

// Uniform access to the six parameter groups, in a fixed canonical order.
struct GroupRef {
  const char* name;
  std::vector<double>* values;
  bool trainable;
};

inline std::vector<GroupRef> param_groups(ParamSet& p) {
  return {{"W1", &p.W1.data, p.trainable.W1},     {"b1", &p.b1, p.trainable.b1},
          {"gamma", &p.gamma, p.trainable.gamma}, {"beta", &p.beta, p.trainable.beta},
          {"W2", &p.W2.data, p.trainable.W2},     {"b2", &p.b2, p.trainable.b2}};
}

inline std::vector<GroupRef> grad_groups(ParamGrads& g, const ParamSet& p) {
  return {{"W1", &g.W1.data, p.trainable.W1},     {"b1", &g.b1, p.trainable.b1},
          {"gamma", &g.gamma, p.trainable.gamma}, {"beta", &g.beta, p.trainable.beta},
          {"W2", &g.W2.data, p.trainable.W2},     {"b2", &g.b2, p.trainable.b2}};
}

struct ForwardCache {
  NormMode mode = NormMode::batch_stat;
  Matrix input;       // N x feature_dim
  Matrix pre_act;     // z = X W1 + b1
  Matrix normalized;  // n
  Matrix post_act;    // r = relu(gamma n + beta)
  Matrix logits;
  Matrix probs;                      // row-wise softmax of logits
  std::vector<double> stat_mean;     // per feature (batch/frozen) or per row (layer)
  std::vector<double> stat_std;      // floored
  std::vector<std::uint8_t> floored; // 1 where the eps floor was active
};

inline ForwardCache forward(const Matrix& X, const ParamSet& p, NormMode mode,
                            const NormStats* source_stats = nullptr) {
  const std::size_t N = X.rows, H = p.hidden_dim();
  if (X.cols != p.feature_dim()) throw std::invalid_argument("forward: feature_dim mismatch");
  if (N == 0) throw std::invalid_argument("forward: empty batch");
  if (mode == NormMode::batch_stat && N < 2)
    throw std::invalid_argument("forward: batch_stat needs batch size >= 2");
  if (mode == NormMode::frozen_source) {
    if (source_stats == nullptr)
      throw std::invalid_argument("forward: frozen_source needs source stats");
    if (source_stats->mean.size() != H || source_stats->std.size() != H)
      throw std::invalid_argument("forward: source stats shape mismatch");
  }
  if (!all_finite(X)) throw std::invalid_argument("forward: non-finite input");

  ForwardCache c;
  c.mode = mode;
  c.input = X;
  c.pre_act = matmul(X, p.W1);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < H; ++j) c.pre_act.at(i, j) += p.b1[j];

  c.normalized = Matrix(N, H);
  switch (mode) {
    case NormMode::batch_stat: {
      c.stat_mean.assign(H, 0.0);
      c.stat_std.assign(H, 0.0);
      c.floored.assign(H, 0);
      for (std::size_t j = 0; j < H; ++j) {
        double mu = 0.0;
        for (std::size_t i = 0; i < N; ++i) mu += c.pre_act.at(i, j);
        mu /= static_cast<double>(N);
        double var = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          const double d = c.pre_act.at(i, j) - mu;
          var += d * d;
        }
        var /= static_cast<double>(N);
        double sd = std::sqrt(var);
        if (sd < kNormEps) {
          sd = kNormEps;
          c.floored[j] = 1;
        }
        c.stat_mean[j] = mu;
        c.stat_std[j] = sd;
        for (std::size_t i = 0; i < N; ++i)
          c.normalized.at(i, j) = (c.pre_act.at(i, j) - mu) / sd;
      }
      break;
    }
    case NormMode::layer_stat: {
      c.stat_mean.assign(N, 0.0);
      c.stat_std.assign(N, 0.0);
      c.floored.assign(N, 0);
      for (std::size_t i = 0; i < N; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < H; ++j) mu += c.pre_act.at(i, j);
        mu /= static_cast<double>(H);
        double var = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
          const double d = c.pre_act.at(i, j) - mu;
          var += d * d;
        }
        var /= static_cast<double>(H);
        double sd = std::sqrt(var);
        if (sd < kNormEps) {
          sd = kNormEps;
          c.floored[i] = 1;
        }
        c.stat_mean[i] = mu;
        c.stat_std[i] = sd;
        for (std::size_t j = 0; j < H; ++j)
          c.normalized.at(i, j) = (c.pre_act.at(i, j) - mu) / sd;
      }
      break;
    }
    case NormMode::frozen_source: {
      c.stat_mean = source_stats->mean;
      c.stat_std = source_stats->std;
      c.floored.assign(H, 0);
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < H; ++j)
          c.normalized.at(i, j) = (c.pre_act.at(i, j) - c.stat_mean[j]) / c.stat_std[j];
      break;
    }
  }

  c.post_act = Matrix(N, H);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < H; ++j) {
      const double a = p.gamma[j] * c.normalized.at(i, j) + p.beta[j];
      c.post_act.at(i, j) = a > 0.0 ? a : 0.0;
    }

  c.logits = matmul(c.post_act, p.W2);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < p.num_classes(); ++j) c.logits.at(i, j) += p.b2[j];
  c.probs = softmax_rows(c.logits);
  return c;
}

// Exact gradients of the cached forward w.r.t. every parameter group, given
// the upstream gradient on logits. Frozen groups still get their gradient
// computed; sgd_step is what honors the partition.
inline ParamGrads backward(const ForwardCache& c, const ParamSet& p,
                           const Matrix& dlogits) {
  const std::size_t N = c.input.rows, H = p.hidden_dim();
  if (!dlogits.same_shape(c.logits))
    throw std::invalid_argument("backward: dlogits shape mismatch");

  ParamGrads g = ParamGrads::zeros_like(p);
  g.W2 = matmul_tn(c.post_act, dlogits);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < p.num_classes(); ++j) g.b2[j] += dlogits.at(i, j);

  Matrix dr = matmul_nt(dlogits, p.W2);  // N x H

  // relu gate: post_act > 0 iff pre-relu activation > 0
  Matrix da(N, H);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < H; ++j)
      da.at(i, j) = c.post_act.at(i, j) > 0.0 ? dr.at(i, j) : 0.0;

  Matrix dn(N, H);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < H; ++j) {
      g.gamma[j] += da.at(i, j) * c.normalized.at(i, j);
      g.beta[j] += da.at(i, j);
      dn.at(i, j) = da.at(i, j) * p.gamma[j];
    }

  Matrix dz(N, H);
  switch (c.mode) {
    case NormMode::batch_stat: {
      // Per feature j: z -> (z - mu)/sd couples the batch. With the floor
      // inactive, dz_i = (dn_i - mean(dn) - n_i * mean(dn .* n)) / sd; with
      // the floor active sd is constant, so the n-term drops.
      for (std::size_t j = 0; j < H; ++j) {
        double mean_dn = 0.0, mean_dn_n = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
          mean_dn += dn.at(i, j);
          mean_dn_n += dn.at(i, j) * c.normalized.at(i, j);
        }
        mean_dn /= static_cast<double>(N);
        mean_dn_n /= static_cast<double>(N);
        const double sd = c.stat_std[j];
        for (std::size_t i = 0; i < N; ++i) {
          double v = dn.at(i, j) - mean_dn;
          if (!c.floored[j]) v -= c.normalized.at(i, j) * mean_dn_n;
          dz.at(i, j) = v / sd;
        }
      }
      break;
    }
    case NormMode::layer_stat: {
      // Same Jacobian per row across hidden features; rows stay independent.
      for (std::size_t i = 0; i < N; ++i) {
        double mean_dn = 0.0, mean_dn_n = 0.0;
        for (std::size_t j = 0; j < H; ++j) {
          mean_dn += dn.at(i, j);
          mean_dn_n += dn.at(i, j) * c.normalized.at(i, j);
        }
        mean_dn /= static_cast<double>(H);
        mean_dn_n /= static_cast<double>(H);
        const double sd = c.stat_std[i];
        for (std::size_t j = 0; j < H; ++j) {
          double v = dn.at(i, j) - mean_dn;
          if (!c.floored[i]) v -= c.normalized.at(i, j) * mean_dn_n;
          dz.at(i, j) = v / sd;
        }
      }
      break;
    }
    case NormMode::frozen_source: {
      for (std::size_t i = 0; i < N; ++i)
        for (std::size_t j = 0; j < H; ++j) dz.at(i, j) = dn.at(i, j) / c.stat_std[j];
      break;
    }
  }

  g.W1 = matmul_tn(c.input, dz);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < H; ++j) g.b1[j] += dz.at(i, j);
  return g;
}

// Plain SGD on the trainable groups. Refuses the whole step when any
// trainable gradient is non-finite; params stay untouched and the caller
// decides how to report it.
inline bool sgd_step(ParamSet& p, ParamGrads& g, double lr) {
  auto pgs = param_groups(p);
  auto ggs = grad_groups(g, p);
  for (std::size_t k = 0; k < ggs.size(); ++k) {
    if (!ggs[k].trainable) continue;
    if (!all_finite(std::span<const double>(*ggs[k].values))) return false;
  }
  for (std::size_t k = 0; k < pgs.size(); ++k) {
    if (!pgs[k].trainable) continue;
    auto& pv = *pgs[k].values;
    const auto& gv = *ggs[k].values;
    for (std::size_t i = 0; i < pv.size(); ++i) pv[i] -= lr * gv[i];
  }
  return true;
}

// Per-feature statistics of the pre-normalization activations over X,
// floored like the forward pass. The frozen-source stats come from here.
inline NormStats recompute_norm_stats(const Matrix& X, const ParamSet& p) {
  if (X.rows < 2) throw std::invalid_argument("recompute_norm_stats: need >= 2 samples");
  const std::size_t H = p.hidden_dim();
  Matrix z = matmul(X, p.W1);
  for (std::size_t i = 0; i < z.rows; ++i)
    for (std::size_t j = 0; j < H; ++j) z.at(i, j) += p.b1[j];
  NormStats s;
  s.mode = NormMode::frozen_source;
  s.mean.assign(H, 0.0);
  s.std.assign(H, 0.0);
  for (std::size_t j = 0; j < H; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < z.rows; ++i) mu += z.at(i, j);
    mu /= static_cast<double>(z.rows);
    double var = 0.0;
    for (std::size_t i = 0; i < z.rows; ++i) {
      const double d = z.at(i, j) - mu;
      var += d * d;
    }
    var /= static_cast<double>(z.rows);
    s.mean[j] = mu;
    s.std[j] = std::max(std::sqrt(var), kNormEps);
  }
  return s;
}

struct PretrainConfig {
  int epochs = 40;
  double lr = 0.05;
  int batch_size = 64;
  int hidden = 64;
  double error_ceiling = 0.10;
  NormMode mode = NormMode::batch_stat;  // backbone norm behavior while training

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("pretrain: epochs must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("pretrain: lr must be > 0");
    if (batch_size < 2) throw std::invalid_argument("pretrain: batch_size must be >= 2");
    if (hidden < 1) throw std::invalid_argument("pretrain: hidden must be >= 1");
    if (!(error_ceiling > 0.0 && error_ceiling <= 1.0))
      throw std::invalid_argument("pretrain: error_ceiling must be in (0, 1]");
    if (mode == NormMode::frozen_source)
      throw std::invalid_argument("pretrain: mode must be batch_stat or layer_stat");
  }
};

struct Pretrained {
  ParamSet params;        // theta_0, pretrain partition tags
  NormStats source_stats; // exact stats of the training activations
  double train_error = 1.0;
  double test_error = 1.0;
};

inline double eval_error(const ParamSet& p, const NormStats& stats, NormMode mode,
                         const SampleSet& data) {
  // Evaluation uses frozen stats for a batch_stat backbone (classic eval
  // behavior) and per-sample stats for a layer_stat backbone.
  const NormMode eval_mode =
      mode == NormMode::batch_stat ? NormMode::frozen_source : mode;
  auto c = forward(data.features, p, eval_mode, &stats);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto row = c.probs.row(i);
    int arg = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
      if (row[j] > row[arg]) arg = static_cast<int>(j);
    if (arg != data.labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

// Minibatch SGD on cross-entropy over all parameter groups. Deterministic
// per seed. Throws on divergence or when the test error ceiling is missed.
inline Pretrained pretrain(const SourceData& source, const PretrainConfig& cfg,
                           std::uint64_t seed) {
  cfg.validate();
  const std::size_t N = source.train.size();
  if (N < 2) throw std::invalid_argument("pretrain: need >= 2 training samples");
  const std::size_t D = source.train.features.cols;
  int num_classes = 0;
  for (int l : source.train.labels) num_classes = std::max(num_classes, l + 1);
  const std::size_t C = static_cast<std::size_t>(num_classes);
  const std::size_t H = static_cast<std::size_t>(cfg.hidden);

  ParamSet p;
  p.W1 = Matrix(D, H);
  p.b1.assign(H, 0.0);
  p.gamma.assign(H, 1.0);
  p.beta.assign(H, 0.0);
  p.W2 = Matrix(H, C);
  p.b2.assign(C, 0.0);
  p.set_pretrain_partition();

  RngStream init_rng = RngStream::derived(seed, 0x1217ULL);
  const double s1 = std::sqrt(2.0 / static_cast<double>(D));
  const double s2 = std::sqrt(2.0 / static_cast<double>(H));
  for (auto& v : p.W1.data) v = s1 * init_rng.gaussian();
  for (auto& v : p.W2.data) v = s2 * init_rng.gaussian();

  RngStream order_rng = RngStream::derived(seed, 0x0DE2ULL);
  std::vector<std::size_t> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t begin = 0; begin < N; begin += cfg.batch_size) {
      const std::size_t end = std::min(begin + cfg.batch_size, N);
      const std::size_t n = end - begin;
      if (n < 2 && cfg.mode == NormMode::batch_stat) continue;  // undefined batch stats
      Matrix X(n, D);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto src = source.train.features.row(order[begin + i]);
        std::copy(src.begin(), src.end(), X.row(i).begin());
        y[i] = source.train.labels[order[begin + i]];
      }
      auto cache = forward(X, p, cfg.mode);
      double loss = 0.0;
      Matrix dlogits(n, C);
      for (std::size_t i = 0; i < n; ++i) {
        const double pi = std::max(cache.probs.at(i, y[i]), 1e-300);
        loss -= std::log(pi);
        for (std::size_t j = 0; j < C; ++j)
          dlogits.at(i, j) = (cache.probs.at(i, j) - (static_cast<int>(j) == y[i] ? 1.0 : 0.0)) /
                             static_cast<double>(n);
      }
      loss /= static_cast<double>(n);
      if (!std::isfinite(loss))
        throw std::runtime_error("pretraining diverged (seed " + std::to_string(seed) +
                                 ", epoch " + std::to_string(epoch) + ")");
      auto grads = backward(cache, p, dlogits);
      if (!sgd_step(p, grads, cfg.lr))
        throw std::runtime_error("pretraining diverged (seed " + std::to_string(seed) +
                                 ", epoch " + std::to_string(epoch) + ")");
    }
  }

  Pretrained out;
  out.source_stats = recompute_norm_stats(source.train.features, p);
  out.params = std::move(p);
  out.train_error = eval_error(out.params, out.source_stats, cfg.mode, source.train);
  out.test_error = eval_error(out.params, out.source_stats, cfg.mode, source.test);
  if (out.test_error > cfg.error_ceiling)
    throw std::runtime_error("pretraining failed (seed " + std::to_string(seed) +
                             "): test error " + std::to_string(out.test_error) +
                             " above ceiling " + std::to_string(cfg.error_ceiling));
  return out;
}

}  // namespace tta
