#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "tta/losses.hpp"
#include "tta/prob.hpp"
#include "tta/rng.hpp"

using namespace tta;

namespace {

Matrix rows_to_matrix(const std::vector<std::vector<double>>& rows) {
  Matrix m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m.at(i, j) = rows[i][j];
  return m;
}

Matrix random_logits(std::size_t n, std::size_t c, RngStream& rng, double spread = 1.5) {
  Matrix m(n, c);
  for (auto& v : m.data) v = spread * rng.gaussian();
  return m;
}

// Central-difference gradient of `f` w.r.t. each logit, compared against the
// analytic matrix via the ratio of error norm to gradient norm.
template <typename F>
double fd_relative_error(Matrix logits, const Matrix& analytic, F&& f, double h = 1e-5) {
  double err2 = 0.0, ref2 = 0.0;
  for (std::size_t i = 0; i < logits.data.size(); ++i) {
    const double keep = logits.data[i];
    logits.data[i] = keep + h;
    const double up = f(logits);
    logits.data[i] = keep - h;
    const double down = f(logits);
    logits.data[i] = keep;
    const double fd = (up - down) / (2.0 * h);
    err2 += (fd - analytic.data[i]) * (fd - analytic.data[i]);
    ref2 += analytic.data[i] * analytic.data[i];
  }
  return std::sqrt(err2) / std::max(std::sqrt(ref2), 1e-12);
}

}  // namespace

TEST_CASE("slr value on hand-worked batches") {
  SECTION("two uniform classes give exactly zero") {
    auto probs = rows_to_matrix({{0.5, 0.5}});
    std::vector<double> w{1.0};
    auto cp = clip_probs(probs, 0.99);
    auto res = slr_loss(cp, probs, w);
    CHECK(res.value == Catch::Approx(0.0).margin(1e-15));
  }
  SECTION("three uniform classes give ln 2") {
    auto probs = rows_to_matrix({{1.0 / 3, 1.0 / 3, 1.0 / 3}});
    std::vector<double> w{1.0};
    auto res = slr_loss(clip_probs(probs, 0.99), probs, w);
    CHECK(res.value == Catch::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SECTION("value and gradient are linear in the weight") {
    auto probs = rows_to_matrix({{0.7, 0.2, 0.1}});
    std::vector<double> w1{1.0}, w2{2.5};
    auto a = slr_loss(clip_probs(probs, 0.99), probs, w1);
    auto b = slr_loss(clip_probs(probs, 0.99), probs, w2);
    CHECK(b.value == Catch::Approx(2.5 * a.value).epsilon(1e-12));
    for (std::size_t i = 0; i < a.dlogits.data.size(); ++i)
      CHECK(b.dlogits.data[i] == Catch::Approx(2.5 * a.dlogits.data[i]).margin(1e-15));
  }
  SECTION("batch mean with a zero-weight row halves the single-row value") {
    auto one = rows_to_matrix({{0.7, 0.2, 0.1}});
    auto two = rows_to_matrix({{0.7, 0.2, 0.1}, {0.1, 0.1, 0.8}});
    std::vector<double> w1{1.0}, w2{1.0, 0.0};
    auto a = slr_loss(clip_probs(one, 0.99), one, w1);
    auto b = slr_loss(clip_probs(two, 0.99), two, w2);
    CHECK(b.value == Catch::Approx(a.value / 2.0).epsilon(1e-12));
  }
  SECTION("clipping caps the confident coordinate") {
    auto probs = rows_to_matrix({{0.995, 0.005}});
    std::vector<double> w{1.0};
    auto cp = clip_probs(probs, 0.99);
    CHECK(cp.clipped.at(0, 0) == 0.99);
    CHECK(cp.mask[0] == 0);
    CHECK(cp.mask[1] == 1);
    const double expect =
        -(0.99 * std::log(0.99 / 0.005) + 0.005 * std::log(0.005 / 0.99));
    auto res = slr_loss(cp, probs, w);
    CHECK(res.value == Catch::Approx(expect).epsilon(1e-12));
  }
  SECTION("one-hot rows stay finite through the log floor") {
    auto probs = rows_to_matrix({{1.0, 0.0, 0.0}});
    std::vector<double> w{1.0};
    auto res = slr_loss(clip_probs(probs, 0.99), probs, w);
    CHECK(std::isfinite(res.value));
    for (double g : res.dlogits.data) CHECK(std::isfinite(g));
  }
}

TEST_CASE("sce value on hand-worked batches") {
  SECTION("identical uniform views give ln C") {
    auto p = rows_to_matrix({{0.25, 0.25, 0.25, 0.25}});
    std::vector<double> w{1.0};
    auto res = sce_loss(p, p, w);
    CHECK(res.value == Catch::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SECTION("swapping the views preserves the value and mirrors the gradients") {
    auto p = rows_to_matrix({{0.6, 0.3, 0.1}});
    auto q = rows_to_matrix({{0.2, 0.5, 0.3}});
    std::vector<double> w{1.3};
    auto ab = sce_loss(p, q, w);
    auto ba = sce_loss(q, p, w);
    CHECK(ab.value == Catch::Approx(ba.value).epsilon(1e-12));
    for (std::size_t i = 0; i < ab.dlogits_main.data.size(); ++i) {
      CHECK(ab.dlogits_main.data[i] == Catch::Approx(ba.dlogits_aug.data[i]).margin(1e-15));
      CHECK(ab.dlogits_aug.data[i] == Catch::Approx(ba.dlogits_main.data[i]).margin(1e-15));
    }
  }
  SECTION("zero weight silences the row") {
    auto p = rows_to_matrix({{0.6, 0.4}});
    auto q = rows_to_matrix({{0.3, 0.7}});
    std::vector<double> w{0.0};
    auto res = sce_loss(p, q, w);
    CHECK(res.value == 0.0);
    for (double g : res.dlogits_main.data) CHECK(g == 0.0);
    for (double g : res.dlogits_aug.data) CHECK(g == 0.0);
  }
}

TEST_CASE("entropy loss on hand-worked batches") {
  CHECK(entropy_loss(rows_to_matrix({{0.5, 0.5}})).value ==
        Catch::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(entropy_loss(rows_to_matrix({{1.0, 0.0}})).value == 0.0);
  // batch mean of a uniform and a deterministic row
  CHECK(entropy_loss(rows_to_matrix({{0.5, 0.5}, {1.0, 0.0}})).value ==
        Catch::Approx(0.5 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss gradients match finite differences through the softmax") {
  const double kCeil = 0.99;
  const std::size_t N = 4, C = 5;

  SECTION("slr, no active clipping") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      RngStream rng(seed * 11);
      Matrix logits = random_logits(N, C, rng);
      auto probs = softmax_rows(logits);
      bool near_kink = false;
      for (double p : probs.data) near_kink |= std::abs(p - kCeil) < 1e-4;
      if (near_kink) continue;
      std::vector<double> w(N);
      for (auto& v : w) v = rng.uniform(0.0, 2.0);

      auto res = slr_loss(clip_probs(probs, kCeil), probs, w);
      auto f = [&](const Matrix& lg) {
        auto p = softmax_rows(lg);
        return slr_loss(clip_probs(p, kCeil), p, w).value;
      };
      INFO("seed " << seed);
      CHECK(fd_relative_error(logits, res.dlogits, f) < 1e-4);
    }
  }

  SECTION("slr, one coordinate held at the ceiling") {
    Matrix logits = rows_to_matrix({{6.0, 0.0, 0.0, 0.0}, {0.4, -0.2, 0.1, 0.3}});
    auto probs = softmax_rows(logits);
    REQUIRE(probs.at(0, 0) > kCeil + 1e-3);
    std::vector<double> w{1.0, 0.7};
    auto res = slr_loss(clip_probs(probs, kCeil), probs, w);
    auto f = [&](const Matrix& lg) {
      auto p = softmax_rows(lg);
      return slr_loss(clip_probs(p, kCeil), p, w).value;
    };
    CHECK(fd_relative_error(logits, res.dlogits, f) < 1e-4);
  }

  SECTION("sce, both branches") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      RngStream rng(seed * 17);
      Matrix lg_main = random_logits(N, C, rng);
      Matrix lg_aug = random_logits(N, C, rng);
      std::vector<double> w(N);
      for (auto& v : w) v = rng.uniform(0.0, 2.0);
      auto pm = softmax_rows(lg_main);
      auto pa = softmax_rows(lg_aug);
      auto res = sce_loss(pm, pa, w);

      auto f_main = [&](const Matrix& lg) {
        return sce_loss(softmax_rows(lg), pa, w).value;
      };
      auto f_aug = [&](const Matrix& lg) {
        return sce_loss(pm, softmax_rows(lg), w).value;
      };
      INFO("seed " << seed);
      CHECK(fd_relative_error(lg_main, res.dlogits_main, f_main) < 1e-4);
      CHECK(fd_relative_error(lg_aug, res.dlogits_aug, f_aug) < 1e-4);
    }
  }

  SECTION("entropy") {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      RngStream rng(seed * 23);
      Matrix logits = random_logits(N, C, rng);
      auto res = entropy_loss(softmax_rows(logits));
      auto f = [&](const Matrix& lg) { return entropy_loss(softmax_rows(lg)).value; };
      INFO("seed " << seed);
      CHECK(fd_relative_error(logits, res.dlogits, f) < 1e-4);
    }
  }
}

TEST_CASE("loss input validation") {
  auto p = rows_to_matrix({{0.5, 0.5}});
  std::vector<double> w{1.0};
  CHECK_THROWS_AS(clip_probs(p, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(clip_probs(p, 1.0), std::invalid_argument);
  std::vector<double> bad_w{1.0, 2.0};
  CHECK_THROWS_AS(slr_loss(clip_probs(p, 0.99), p, bad_w), std::invalid_argument);
  auto q3 = rows_to_matrix({{0.2, 0.3, 0.5}});
  CHECK_THROWS_AS(sce_loss(p, q3, w), std::invalid_argument);
  auto one_class = rows_to_matrix({{1.0}});
  CHECK_THROWS_AS(slr_loss(clip_probs(one_class, 0.99), one_class, w),
                  std::invalid_argument);
}
