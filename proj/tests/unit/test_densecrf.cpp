#include <doctest.h>

#include <cmath>
#include <random>

#include "crf_oracle.hpp"
#include "fseg/densecrf.hpp"

using namespace fseg;
using fseg::testing::all_pairs_mean_field;

namespace {

Unary random_unary(Shape3 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.05f, 3.0f);
  Unary out{FloatGrid(s), FloatGrid(s)};
  for (std::size_t n = 0; n < s.count(); ++n) {
    out.background[n] = u(rng);
    out.foreground[n] = u(rng);
  }
  return out;
}

FloatGrid random_image(Shape3 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 255.0f);
  FloatGrid g(s);
  for (auto& x : g.values()) x = u(rng);
  return g;
}

}  // namespace

TEST_CASE("unary_from_probability thresholds into 0.9 / 0.1") {
  FloatGrid p({2, 2, 2}, 0.0f);
  p[0] = 1.0f;
  p[1] = 0.3f - 1e-6f;
  p[2] = 0.3f;
  const auto u = unary_from_probability(p, 0.3f);
  CHECK(u.foreground[0] == doctest::Approx(-std::log(0.9)));
  CHECK(u.background[0] == doctest::Approx(-std::log(0.1)));
  CHECK(u.foreground[1] > u.background[1]);
  CHECK(u.foreground[2] < u.background[2]);
}

TEST_CASE("checkerboard probability gives an alternating unary") {
  const Shape3 s{4, 5, 6};
  FloatGrid p(s);
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k) p(i, j, k) = (i + j + k) % 2 ? 0.8f : 0.2f;
  const auto u = unary_from_probability(p, 0.5f);
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k) {
        const bool fg = (i + j + k) % 2;
        CHECK((u.foreground(i, j, k) < u.background(i, j, k)) == fg);
      }
}

TEST_CASE("zero pairwise weights leave the unary softmax untouched") {
  std::mt19937_64 rng(1);
  const Shape3 s{5, 4, 3};
  const auto u = random_unary(s, rng);
  CrfParams p;
  p.w_smooth = p.w_bilateral = 0.0f;
  const auto r = mean_field(u, random_image(s, rng), p);
  for (std::size_t n = 0; n < s.count(); ++n) {
    const double expect = 1.0 / (1.0 + std::exp(static_cast<double>(u.foreground[n]) - u.background[n]));
    CHECK(r.q_foreground[n] == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("uniform unary on a constant image is a fixed point") {
  const Shape3 s{6, 6, 6};
  Unary u{FloatGrid(s, 0.7f), FloatGrid(s, 0.7f)};
  const auto r = mean_field(u, FloatGrid(s, 100.0f), CrfParams{});
  for (float q : r.q_foreground.values()) CHECK(q == doctest::Approx(0.5f).epsilon(1e-6));
}

TEST_CASE("windowed mean field matches the all-pairs oracle on 6^3 volumes") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> w(0.0f, 1.5f), th(0.5f, 4.0f), beta(5.0f, 60.0f);
  const Shape3 s{6, 6, 6};
  for (int t = 0; t < 20; ++t) {
    CrfParams p;
    p.w_smooth = w(rng);
    p.w_bilateral = w(rng);
    p.theta_gamma_vox = th(rng);
    p.theta_alpha_vox = th(rng);
    p.theta_beta_intensity = beta(rng);
    p.iterations = 5;
    p.window_radius_vox = 5;  // covers every pair of a 6^3 grid
    const auto u = random_unary(s, rng);
    const auto img = random_image(s, rng);
    const auto got = mean_field(u, img, p);
    const auto want = all_pairs_mean_field(u, img, p, got.iterations_run);
    double worst = 0.0;
    for (std::size_t n = 0; n < s.count(); ++n)
      worst = std::max(worst, std::abs(static_cast<double>(got.q_foreground[n]) - want[n]));
    CHECK(worst <= 1e-5);
    for (float q : got.q_foreground.values()) {
      CHECK(q >= 0.0f);
      CHECK(q <= 1.0f);
    }
  }
}

TEST_CASE("default parameters fill a one-voxel hole in a solid cube") {
  const Shape3 s{11, 11, 11};
  FloatGrid prob(s, 0.0f);
  for (std::size_t i = 2; i < 9; ++i)
    for (std::size_t j = 2; j < 9; ++j)
      for (std::size_t k = 2; k < 9; ++k) prob(i, j, k) = 1.0f;
  prob(5, 5, 5) = 0.0f;
  FloatGrid image(s, 50.0f);
  for (std::size_t n = 0; n < prob.size(); ++n)
    if (prob[n] > 0.0f) image[n] = 200.0f;
  image(5, 5, 5) = 200.0f;  // the hole is a label gap, not an intensity gap

  const CrfParams p;
  const auto u = unary_from_probability(prob, 0.5f);
  const auto r = mean_field(u, image, p);
  const auto oracle = all_pairs_mean_field(u, image, {p.w_smooth, p.theta_gamma_vox, p.w_bilateral,
                                                      p.theta_alpha_vox, p.theta_beta_intensity, p.iterations,
                                                      100, p.unary_threshold},
                                           r.iterations_run);
  CHECK(oracle[image.index(5, 5, 5)] > 0.5);
  CHECK(r.mask.data(5, 5, 5) == 1);
  CHECK(r.mask.data(0, 0, 0) == 0);
  // Corners may erode; nothing grows beyond a one-voxel shell.
  CHECK(r.mask.count_foreground() >= 300);
  for (std::size_t i = 0; i < 11; ++i)
    for (std::size_t j = 0; j < 11; ++j)
      for (std::size_t k = 0; k < 11; ++k)
        if (r.mask.data(i, j, k)) CHECK((i >= 1 && i <= 9 && j >= 1 && j <= 9 && k >= 1 && k <= 9));
}

TEST_CASE("residuals are recorded and iteration stops at convergence") {
  std::mt19937_64 rng(3);
  const Shape3 s{8, 8, 8};
  CrfParams p;
  p.iterations = 50;
  const auto r = mean_field(random_unary(s, rng), random_image(s, rng), p);
  CHECK(r.residuals.size() == r.iterations_run);
  CHECK(r.iterations_run <= 50);
  if (r.iterations_run < 50) CHECK(r.residuals.back() < kCrfConvergence);
}

TEST_CASE("shape mismatch and invalid parameters throw") {
  const Shape3 s{3, 3, 3};
  Unary u{FloatGrid(s), FloatGrid(s)};
  CHECK_THROWS_AS((void)mean_field(u, FloatGrid({3, 3, 4}), CrfParams{}), std::invalid_argument);
  CrfParams p;
  p.window_radius_vox = 0;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = CrfParams{};
  p.w_smooth = -1.0f;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
  p = CrfParams{};
  p.theta_beta_intensity = 0.0f;
  CHECK_THROWS_AS(validate(p), std::invalid_argument);
}
