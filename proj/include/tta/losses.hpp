#pragma once
/*
 * Self-training losses over softmax outputs, each returning its value and
 * the exact gradient on the logits. All values are batch-mean normalized.
 *
 * Per-sample weights are plain constants here: no gradient flows through
 * the weighting itself.
 */

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tta/matrix.hpp"

namespace tta {

inline constexpr double kLogFloor = 1e-12;  // floors arguments of log

struct ClippedProbs {
  Matrix clipped;                  // min(p, ceiling), rows no longer sum to 1
  std::vector<std::uint8_t> mask;  // 1 where unclipped (gradient passes)
};

// Elementwise probability ceiling. Clipped coordinates pass exactly zero
// gradient in the losses below.
inline ClippedProbs clip_probs(const Matrix& probs, double ceiling) {
  if (!(ceiling > 0.0 && ceiling < 1.0))
    throw std::invalid_argument("clip_probs: ceiling must be in (0, 1)");
  ClippedProbs out;
  out.clipped = probs;
  out.mask.assign(probs.rows * probs.cols, 1);
  for (std::size_t i = 0; i < probs.data.size(); ++i) {
    if (probs.data[i] > ceiling) {
      out.clipped.data[i] = ceiling;
      out.mask[i] = 0;
    }
  }
  return out;
}

// dL/dlogits from dL/dprobs via the softmax Jacobian at `probs`, with the
// clip gate applied first: dlogit_k = p_k (u~_k - sum_c u~_c p_c).
inline Matrix chain_softmax(const Matrix& probs, const Matrix& dprobs,
                            const std::vector<std::uint8_t>* gate = nullptr) {
  Matrix dlogits(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    double dot = 0.0;
    for (std::size_t j = 0; j < probs.cols; ++j) {
      const double u = gate && !(*gate)[i * probs.cols + j] ? 0.0 : dprobs.at(i, j);
      dot += u * probs.at(i, j);
    }
    for (std::size_t j = 0; j < probs.cols; ++j) {
      const double u = gate && !(*gate)[i * probs.cols + j] ? 0.0 : dprobs.at(i, j);
      dlogits.at(i, j) = probs.at(i, j) * (u - dot);
    }
  }
  return dlogits;
}

struct LossResult {
  double value = 0.0;
  Matrix dlogits;
};

// Weighted soft likelihood ratio: per sample
//   l_i = -w_i sum_c q_c * log(q_c / (S_i - q_c)),  S_i = sum_j q_j
// over clipped probabilities q. Log arguments are floored at kLogFloor, so
// a one-hot row cannot produce log(0) even pre-clipping.
inline LossResult slr_loss(const ClippedProbs& cp, const Matrix& raw_probs,
                           std::span<const double> weights) {
  const Matrix& q = cp.clipped;
  if (!q.same_shape(raw_probs)) throw std::invalid_argument("slr_loss: shape mismatch");
  if (weights.size() != q.rows) throw std::invalid_argument("slr_loss: weights size mismatch");
  if (q.cols < 2) throw std::invalid_argument("slr_loss: need >= 2 classes");

  const double N = static_cast<double>(q.rows);
  LossResult out;
  Matrix dq(q.rows, q.cols);
  for (std::size_t i = 0; i < q.rows; ++i) {
    const double w = weights[i];
    double S = 0.0;
    for (std::size_t j = 0; j < q.cols; ++j) S += q.at(i, j);

    // T = sum_c q_c / (S - q_c) with the floor gate, reused for the gradient.
    double T = 0.0;
    for (std::size_t j = 0; j < q.cols; ++j) {
      const double rest = S - q.at(i, j);
      if (rest > kLogFloor) T += q.at(i, j) / rest;
    }
    for (std::size_t j = 0; j < q.cols; ++j) {
      const double qc = q.at(i, j);
      const double rest = S - qc;
      const double qf = std::max(qc, kLogFloor);
      const double rf = std::max(rest, kLogFloor);
      out.value += -w * qc * (std::log(qf) - std::log(rf)) / N;
      const double self_term = qc > kLogFloor ? 1.0 : 0.0;
      const double cross = T - (rest > kLogFloor ? qc / rest : 0.0);
      dq.at(i, j) = -w * (std::log(qf) + self_term - std::log(rf) - cross) / N;
    }
  }
  out.dlogits = chain_softmax(raw_probs, dq, &cp.mask);
  return out;
}

struct PairLossResult {
  double value = 0.0;
  Matrix dlogits_main;
  Matrix dlogits_aug;
};

// Weighted symmetric cross-entropy between main-view and augmented-view
// probabilities: l_i = -(w_i/2) (sum_c p_c log p~_c + sum_c p~_c log p_c).
// Gradients flow into both branches.
inline PairLossResult sce_loss(const Matrix& p, const Matrix& p_aug,
                               std::span<const double> weights) {
  if (!p.same_shape(p_aug)) throw std::invalid_argument("sce_loss: shape mismatch");
  if (weights.size() != p.rows) throw std::invalid_argument("sce_loss: weights size mismatch");
  const double N = static_cast<double>(p.rows);

  PairLossResult out;
  Matrix dp(p.rows, p.cols), dpa(p.rows, p.cols);
  for (std::size_t i = 0; i < p.rows; ++i) {
    const double w2 = weights[i] / 2.0;
    for (std::size_t j = 0; j < p.cols; ++j) {
      const double a = p.at(i, j), b = p_aug.at(i, j);
      const double af = std::max(a, kLogFloor), bf = std::max(b, kLogFloor);
      out.value += -w2 * (a * std::log(bf) + b * std::log(af)) / N;
      dp.at(i, j) = -w2 * (std::log(bf) + (a > kLogFloor ? b / af : 0.0)) / N;
      dpa.at(i, j) = -w2 * ((b > kLogFloor ? a / bf : 0.0) + std::log(af)) / N;
    }
  }
  out.dlogits_main = chain_softmax(p, dp);
  out.dlogits_aug = chain_softmax(p_aug, dpa);
  return out;
}

// Mean Shannon entropy of the batch; descending it sharpens predictions.
inline LossResult entropy_loss(const Matrix& probs) {
  const double N = static_cast<double>(probs.rows);
  LossResult out;
  Matrix dp(probs.rows, probs.cols);
  for (std::size_t i = 0; i < probs.rows; ++i) {
    for (std::size_t j = 0; j < probs.cols; ++j) {
      const double p = probs.at(i, j);
      if (p > 0.0) out.value += -p * std::log(p) / N;
      dp.at(i, j) = -(std::log(std::max(p, 1e-300)) + 1.0) / N;
    }
  }
  out.dlogits = chain_softmax(probs, dp);
  return out;
}

}  // namespace tta
