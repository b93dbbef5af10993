#pragma once
/*
 * Symmetric Dirichlet sampling on top of RngStream.
 *
 * Gamma draws use Marsaglia-Tsang squeeze for shape >= 1 and the
 * Gamma(a+1) * U^(1/a) boost for shape < 1. The boost is carried in log
 * space: for concentrations as small as 0.01 the raw draws underflow to
 * zero, while log draws normalize exactly like a softmax.
 */

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tta/prob.hpp"
#include "tta/rng.hpp"

namespace tta {

// log of a Gamma(shape, 1) draw.
inline double gamma_log_sample(double shape, RngStream& rng) {
  if (!(shape > 0.0)) throw std::invalid_argument("gamma_log_sample: shape must be > 0");
  double boost = 0.0;
  if (shape < 1.0) {
    // Gamma(a) == Gamma(a+1) * U^(1/a); keep the factor in log space.
    double u = rng.uniform();
    while (u == 0.0) u = rng.uniform();
    boost = std::log(u) / shape;
    shape += 1.0;
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    if (u < 1.0 - 0.0331 * x * x * x * x) return std::log(d * v) + boost;
    if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
      return std::log(d * v) + boost;
  }
}

// One draw from Dirichlet(concentration, ..., concentration) over dims slots.
inline ProbVector dirichlet_sample(double concentration, std::size_t dims,
                                   RngStream& rng) {
  if (dims == 0) throw std::invalid_argument("dirichlet_sample: dims must be >= 1");
  if (!(concentration > 0.0))
    throw std::invalid_argument("dirichlet_sample: concentration must be > 0");
  if (dims == 1) return ProbVector({1.0});
  std::vector<double> logs(dims);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < dims; ++i) {
    logs[i] = gamma_log_sample(concentration, rng);
    mx = std::max(mx, logs[i]);
  }
  std::vector<double> out(dims);
  double sum = 0.0;
  for (std::size_t i = 0; i < dims; ++i) {
    out[i] = std::exp(logs[i] - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return ProbVector(std::move(out));
}

}  // namespace tta
