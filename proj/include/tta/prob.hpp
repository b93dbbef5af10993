#pragma once
/*
 * Probability-vector primitives shared by losses, weighting and metrics.
 * Conventions: natural log everywhere, 0*log(0) == 0.
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "tta/matrix.hpp"

namespace tta {

// Discrete distribution: non-negative entries summing to 1 within 1e-9.
// Checked at construction; treat instances as immutable.
class ProbVector {
 public:
  ProbVector() = default;

  explicit ProbVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) throw std::invalid_argument("ProbVector: empty");
    double sum = 0.0;
    for (double v : values_) {
      if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument("ProbVector: entries must be finite and >= 0");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("ProbVector: entries must sum to 1");
  }

  static ProbVector uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("ProbVector: empty");
    return ProbVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }
  operator std::span<const double>() const { return {values_.data(), values_.size()}; }

 private:
  std::vector<double> values_;
};

// Numerically stable softmax (max subtraction). Rejects non-finite input.
inline std::vector<double> softmax_values(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax: empty input");
  if (!all_finite(logits)) throw std::invalid_argument("softmax: non-finite input");
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

inline ProbVector softmax(std::span<const double> logits) {
  return ProbVector(softmax_values(logits));
}

// Row-wise softmax of a logit matrix; every row is a valid distribution.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix probs(logits.rows, logits.cols);
  for (std::size_t i = 0; i < logits.rows; ++i) {
    auto v = softmax_values(logits.row(i));
    std::copy(v.begin(), v.end(), probs.row(i).begin());
  }
  return probs;
}

// Shannon entropy in nats with the 0*log(0) == 0 convention.
inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

inline double entropy(const ProbVector& p) {
  return entropy(static_cast<std::span<const double>>(p));
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Total variation distance: 0.5 * sum_i |p_i - q_i|.
inline double tvd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("tvd: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tvd(const ProbVector& p, const ProbVector& q) {
  return tvd(static_cast<std::span<const double>>(p),
             static_cast<std::span<const double>>(q));
}

// Min-max rescale to [0, 1]. A constant vector carries no ranking signal, so
// it maps to all ones (neutral under multiplicative use).
inline std::vector<double> minmax_unit_normalize(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("minmax_unit_normalize: empty input");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it, hi = *hi_it;
  if (lo == hi) return std::vector<double>(v.size(), 1.0);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
  return out;
}

}  // namespace tta
