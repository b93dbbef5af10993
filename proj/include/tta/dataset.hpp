#pragma once
/*
 * Synthetic class-conditional Gaussian datasets and label-preserving
 * domain shifts.
 *
 * A source domain is C Gaussian clusters with distinct means. Shifted domains
 * transform the source test samples feature-wise; sample i of a shifted
 * domain is always the transform of source test sample i, and every draw is
 * a pure function of (seed, sample index), so regeneration is bit-identical
 * regardless of call order.
 */

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tta/matrix.hpp"
#include "tta/rng.hpp"

namespace tta {

struct DatasetSpec {
  int num_classes = 10;
  int feature_dim = 32;
  int samples_per_class = 50;  // per class, per split
  double class_mean_scale = 4.0;
  double within_class_std = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("dataset: num_classes must be >= 2");
    if (feature_dim < 2) throw std::invalid_argument("dataset: feature_dim must be >= 2");
    if (samples_per_class < 1)
      throw std::invalid_argument("dataset: samples_per_class must be >= 1");
    if (class_mean_scale < 0.0 || within_class_std < 0.0)
      throw std::invalid_argument("dataset: scales must be non-negative");
    if (class_mean_scale == 0.0 && within_class_std == 0.0)
      throw std::invalid_argument("dataset: degenerate spec (no mean spread, no within-class spread)");
  }
};

// Column batch of labeled samples. domain_id 0 is the source domain;
// shifted domains are numbered 1..K in suite order.
struct SampleSet {
  Matrix features;  // n x feature_dim
  std::vector<int> labels;
  std::vector<int> domain_ids;

  std::size_t size() const { return labels.size(); }
};

struct LabeledSample {
  std::vector<double> features;
  int label = 0;
  int domain_id = 0;
};

inline LabeledSample get_sample(const SampleSet& s, std::size_t i) {
  auto r = s.features.row(i);
  return {std::vector<double>(r.begin(), r.end()), s.labels[i], s.domain_ids[i]};
}

struct SourceData {
  SampleSet train;
  SampleSet test;
  Matrix class_means;  // num_classes x feature_dim
};

enum class ShiftKind { rotation, scaling, additive_noise, mean_translation, feature_dropout };

inline const char* shift_kind_name(ShiftKind k) {
  switch (k) {
    case ShiftKind::rotation: return "rotation";
    case ShiftKind::scaling: return "scaling";
    case ShiftKind::additive_noise: return "additive_noise";
    case ShiftKind::mean_translation: return "mean_translation";
    case ShiftKind::feature_dropout: return "feature_dropout";
  }
  throw std::logic_error("shift_kind_name: unknown kind");
}

inline ShiftKind shift_kind_from_name(const std::string& name) {
  if (name == "rotation") return ShiftKind::rotation;
  if (name == "scaling") return ShiftKind::scaling;
  if (name == "additive_noise") return ShiftKind::additive_noise;
  if (name == "mean_translation") return ShiftKind::mean_translation;
  if (name == "feature_dropout") return ShiftKind::feature_dropout;
  throw std::invalid_argument("unknown shift kind: " + name);
}

struct DomainShift {
  ShiftKind kind = ShiftKind::additive_noise;
  int severity = 1;  // 1..5, monotone in displacement
  std::uint64_t seed = 0;

  void validate() const {
    if (severity < 1 || severity > 5)
      throw std::invalid_argument("shift: severity must be in 1..5");
  }
};

// Severity scaling constants. Scaling and mean_translation move batch
// statistics (fixable by recomputed normalization); rotation and
// feature_dropout distort feature structure (statistics barely move).
inline constexpr double kRotationAnglePerSeverity = 0.12;   // radians per plane
inline constexpr double kScalingFactorPerSeverity = 0.20;
inline constexpr double kNoiseStdPerSeverity = 0.50;
inline constexpr double kTranslationPerSeverity = 1.00;
inline constexpr double kDropoutFractionPerSeverity = 0.10;

// Frozen per-domain randomness: rotation planes, translation direction,
// dropout coordinate set. Built once per (shift, feature_dim).
struct ShiftTransform {
  DomainShift shift;
  int feature_dim = 0;
  double angle = 0.0;                              // rotation, per plane
  std::vector<std::pair<int, int>> planes;         // rotation
  double scale_factor = 1.0;                       // scaling
  double noise_std = 0.0;                          // additive_noise
  std::vector<double> translation;                 // mean_translation
  std::vector<std::uint8_t> dropped;               // feature_dropout, per dim
};

inline ShiftTransform make_transform(const DomainShift& shift, int feature_dim) {
  shift.validate();
  if (feature_dim < 2) throw std::invalid_argument("make_transform: feature_dim must be >= 2");
  ShiftTransform t;
  t.shift = shift;
  t.feature_dim = feature_dim;
  RngStream rng = RngStream::derived(shift.seed, 0);
  switch (shift.kind) {
    case ShiftKind::rotation: {
      t.angle = kRotationAnglePerSeverity * shift.severity;
      std::vector<int> axes(feature_dim);
      for (int i = 0; i < feature_dim; ++i) axes[i] = i;
      rng.shuffle(axes);
      for (int i = 0; i + 1 < feature_dim; i += 2) t.planes.emplace_back(axes[i], axes[i + 1]);
      break;
    }
    case ShiftKind::scaling:
      t.scale_factor = 1.0 + kScalingFactorPerSeverity * shift.severity;
      break;
    case ShiftKind::additive_noise:
      t.noise_std = kNoiseStdPerSeverity * shift.severity;
      break;
    case ShiftKind::mean_translation: {
      std::vector<double> dir(feature_dim);
      double norm = 0.0;
      do {
        norm = 0.0;
        for (auto& v : dir) {
          v = rng.gaussian();
          norm += v * v;
        }
        norm = std::sqrt(norm);
      } while (norm == 0.0);
      t.translation.resize(feature_dim);
      const double len = kTranslationPerSeverity * shift.severity;
      for (int i = 0; i < feature_dim; ++i) t.translation[i] = dir[i] / norm * len;
      break;
    }
    case ShiftKind::feature_dropout: {
      const int n_drop = static_cast<int>(
          std::lround(kDropoutFractionPerSeverity * shift.severity * feature_dim));
      std::vector<int> axes(feature_dim);
      for (int i = 0; i < feature_dim; ++i) axes[i] = i;
      rng.shuffle(axes);
      t.dropped.assign(feature_dim, 0);
      for (int i = 0; i < n_drop; ++i) t.dropped[axes[i]] = 1;
      break;
    }
  }
  return t;
}

// In-plane Givens rotation by `angle` over each precomputed axis pair.
inline void rotate_planes(std::span<double> x,
                          const std::vector<std::pair<int, int>>& planes, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  for (const auto& [i, j] : planes) {
    const double xi = x[i], xj = x[j];
    x[i] = c * xi - s * xj;
    x[j] = s * xi + c * xj;
  }
}

// Transform one sample in place. Noise depends only on (shift.seed,
// sample_index), never on call order.
inline void apply_shift_inplace(const ShiftTransform& t, std::span<double> x,
                                std::uint64_t sample_index) {
  if (static_cast<int>(x.size()) != t.feature_dim)
    throw std::invalid_argument("apply_shift: feature_dim mismatch");
  switch (t.shift.kind) {
    case ShiftKind::rotation:
      rotate_planes(x, t.planes, t.angle);
      break;
    case ShiftKind::scaling:
      for (auto& v : x) v *= t.scale_factor;
      break;
    case ShiftKind::additive_noise: {
      RngStream rng = RngStream::derived(t.shift.seed, 1 + sample_index);
      for (auto& v : x) v += t.noise_std * rng.gaussian();
      break;
    }
    case ShiftKind::mean_translation:
      for (int i = 0; i < t.feature_dim; ++i) x[i] += t.translation[i];
      break;
    case ShiftKind::feature_dropout:
      for (int i = 0; i < t.feature_dim; ++i) {
        if (t.dropped[i]) x[i] = 0.0;
      }
      break;
  }
}

inline LabeledSample apply_shift(const DomainShift& shift, const LabeledSample& sample,
                                 std::uint64_t sample_index) {
  auto t = make_transform(shift, static_cast<int>(sample.features.size()));
  LabeledSample out = sample;
  apply_shift_inplace(t, out.features, sample_index);
  return out;
}

inline SampleSet apply_shift_set(const ShiftTransform& t, const SampleSet& src,
                                 int domain_id) {
  SampleSet out;
  out.features = src.features;
  out.labels = src.labels;
  out.domain_ids.assign(src.size(), domain_id);
  for (std::size_t i = 0; i < out.size(); ++i)
    apply_shift_inplace(t, out.features.row(i), i);
  return out;
}

// Draw one balanced split (samples_per_class per class), class-major order.
// split_tag decorrelates train from test.
inline SampleSet draw_split(const DatasetSpec& spec, const Matrix& class_means,
                            std::uint64_t split_tag) {
  const std::size_t n =
      static_cast<std::size_t>(spec.num_classes) * spec.samples_per_class;
  SampleSet s;
  s.features = Matrix(n, spec.feature_dim);
  s.labels.resize(n);
  s.domain_ids.assign(n, 0);
  std::size_t idx = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int k = 0; k < spec.samples_per_class; ++k, ++idx) {
      RngStream rng = RngStream::derived(spec.seed ^ (split_tag * 0x51ED2701ULL), idx);
      auto row = s.features.row(idx);
      for (int j = 0; j < spec.feature_dim; ++j)
        row[j] = class_means.at(c, j) + spec.within_class_std * rng.gaussian();
      s.labels[idx] = c;
    }
  }
  return s;
}

inline SourceData make_source(const DatasetSpec& spec) {
  spec.validate();
  SourceData d;
  d.class_means = Matrix(spec.num_classes, spec.feature_dim);
  RngStream mean_rng = RngStream::derived(spec.seed, 0xC1A55ULL);
  for (int c = 0; c < spec.num_classes; ++c) {
    auto row = d.class_means.row(c);
    double norm = 0.0;
    do {
      norm = 0.0;
      for (int j = 0; j < spec.feature_dim; ++j) {
        row[j] = mean_rng.gaussian();
        norm += row[j] * row[j];
      }
      norm = std::sqrt(norm);
    } while (norm == 0.0);
    for (int j = 0; j < spec.feature_dim; ++j)
      row[j] = row[j] / norm * spec.class_mean_scale;
  }
  d.train = draw_split(spec, d.class_means, 1);
  d.test = draw_split(spec, d.class_means, 2);
  return d;
}

struct DomainSuite {
  DatasetSpec spec;
  SourceData source;
  std::vector<DomainShift> shifts;   // empty when loaded from external data
  std::vector<SampleSet> shifted;    // shifted[k] has domain_id k+1

  std::size_t num_shifted_domains() const { return shifted.size(); }

  const SampleSet& domain(std::size_t domain_id) const {
    if (domain_id == 0) return source.test;
    if (domain_id > shifted.size()) throw std::out_of_range("suite: bad domain_id");
    return shifted[domain_id - 1];
  }
};

inline DomainSuite make_suite(const DatasetSpec& spec,
                              const std::vector<DomainShift>& shifts) {
  DomainSuite suite;
  suite.spec = spec;
  suite.source = make_source(spec);
  suite.shifts = shifts;
  suite.shifted.reserve(shifts.size());
  for (std::size_t k = 0; k < shifts.size(); ++k) {
    auto t = make_transform(shifts[k], spec.feature_dim);
    suite.shifted.push_back(
        apply_shift_set(t, suite.source.test, static_cast<int>(k) + 1));
  }
  return suite;
}

}  // namespace tta
