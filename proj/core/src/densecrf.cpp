#include "fseg/densecrf.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fseg {

void validate(const CrfParams& p) {
  if (p.w_smooth < 0.0f || p.w_bilateral < 0.0f) throw std::invalid_argument("crf: weights must be >= 0");
  if (!(p.theta_gamma_vox > 0.0f) || !(p.theta_alpha_vox > 0.0f) || !(p.theta_beta_intensity > 0.0f))
    throw std::invalid_argument("crf: bandwidths must be positive");
  if (p.window_radius_vox < 1) throw std::invalid_argument("crf: window radius must be >= 1");
}

Unary unary_from_probability(const FloatGrid& prob, float tau) {
  Unary u{FloatGrid(prob.shape()), FloatGrid(prob.shape())};
  const float hi_fg = -std::log(kUnaryHighProb);
  const float lo_fg = -std::log(kUnaryLowProb);
  for (std::size_t n = 0; n < prob.size(); ++n) {
    const bool fg = prob[n] >= tau;
    u.foreground[n] = fg ? hi_fg : lo_fg;
    u.background[n] = fg ? lo_fg : hi_fg;
  }
  return u;
}

namespace {

// Pairwise weights are constant across iterations; they are cached when the
// table fits in this many entries and recomputed per iteration otherwise.
constexpr std::size_t kMaxCachedPairs = std::size_t{48} << 20;

struct Offset {
  std::ptrdiff_t di, dj, dk;
  double spatial_smooth;    // w_s * exp(-|d|^2 / 2 theta_gamma^2)
  double spatial_bilateral; // w_b * exp(-|d|^2 / 2 theta_alpha^2)
};

}  // namespace

CrfResult mean_field(const Unary& unary, const FloatGrid& image, const CrfParams& params) {
  validate(params);
  const auto& s = image.shape();
  if (!(unary.foreground.shape() == s) || !(unary.background.shape() == s))
    throw std::invalid_argument("mean_field: unary and image shapes differ");
  const std::size_t n = s.count();

  const auto r = static_cast<std::ptrdiff_t>(params.window_radius_vox);
  std::vector<Offset> offsets;
  for (std::ptrdiff_t di = -r; di <= r; ++di)
    for (std::ptrdiff_t dj = -r; dj <= r; ++dj)
      for (std::ptrdiff_t dk = -r; dk <= r; ++dk) {
        if (di == 0 && dj == 0 && dk == 0) continue;
        const double d2 = static_cast<double>(di * di + dj * dj + dk * dk);
        offsets.push_back({di, dj, dk,
                           params.w_smooth * std::exp(-d2 / (2.0 * params.theta_gamma_vox * params.theta_gamma_vox)),
                           params.w_bilateral * std::exp(-d2 / (2.0 * params.theta_alpha_vox * params.theta_alpha_vox))});
      }
  const double inv_two_beta2 = 1.0 / (2.0 * params.theta_beta_intensity * params.theta_beta_intensity);
  const auto n0 = static_cast<std::ptrdiff_t>(s.d0), n1 = static_cast<std::ptrdiff_t>(s.d1),
             n2 = static_cast<std::ptrdiff_t>(s.d2);

  auto for_each_pair = [&](auto&& fn) {
    for (std::ptrdiff_t i = 0; i < n0; ++i)
      for (std::ptrdiff_t j = 0; j < n1; ++j)
        for (std::ptrdiff_t k = 0; k < n2; ++k) {
          const std::size_t a = image.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                                            static_cast<std::size_t>(k));
          for (std::size_t o = 0; o < offsets.size(); ++o) {
            const auto& off = offsets[o];
            const std::ptrdiff_t ii = i + off.di, jj = j + off.dj, kk = k + off.dk;
            if (ii < 0 || ii >= n0 || jj < 0 || jj >= n1 || kk < 0 || kk >= n2) continue;
            const std::size_t b = image.index(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj),
                                              static_cast<std::size_t>(kk));
            fn(a, b, o);
          }
        }
  };
  auto weight = [&](std::size_t a, std::size_t b, std::size_t o) {
    const double dI = static_cast<double>(image[a]) - static_cast<double>(image[b]);
    return offsets[o].spatial_smooth + offsets[o].spatial_bilateral * std::exp(-dI * dI * inv_two_beta2);
  };

  // Total kernel mass per voxel, and the optional cached per-pair weights
  // laid out voxel-major in window order.
  std::vector<double> mass(n, 0.0);
  const bool cache = n * offsets.size() <= kMaxCachedPairs;
  std::vector<float> pair_w;
  std::vector<std::uint32_t> pair_b;
  std::vector<std::size_t> pair_begin;
  if (cache) {
    pair_begin.assign(n + 1, 0);
    pair_w.reserve(n * offsets.size());
    pair_b.reserve(n * offsets.size());
    std::size_t last = 0;
    for_each_pair([&](std::size_t a, std::size_t b, std::size_t o) {
      while (last < a) pair_begin[++last] = pair_w.size();
      const float w = static_cast<float>(weight(a, b, o));
      mass[a] += w;
      pair_w.push_back(w);
      pair_b.push_back(static_cast<std::uint32_t>(b));
    });
    while (last < n) pair_begin[++last] = pair_w.size();
  } else {
    for_each_pair([&](std::size_t a, std::size_t b, std::size_t o) { mass[a] += weight(a, b, o); });
  }

  // Q_fg initialised to softmax(-unary).
  std::vector<double> q(n), next(n);
  for (std::size_t a = 0; a < n; ++a)
    q[a] = 1.0 / (1.0 + std::exp(static_cast<double>(unary.foreground[a]) - unary.background[a]));

  CrfResult result;
  std::vector<double> message(n);
  for (std::uint32_t it = 0; it < params.iterations; ++it) {
    if (cache) {
      for (std::size_t a = 0; a < n; ++a) {
        double acc = 0.0;
        for (std::size_t p = pair_begin[a]; p < pair_begin[a + 1]; ++p) acc += pair_w[p] * q[pair_b[p]];
        message[a] = acc;
      }
    } else {
      std::fill(message.begin(), message.end(), 0.0);
      for_each_pair([&](std::size_t a, std::size_t b, std::size_t o) { message[a] += weight(a, b, o) * q[b]; });
    }
    double delta = 0.0;
    for (std::size_t a = 0; a < n; ++a) {
      // Potts: E(l) = u(l) + sum_j k_ij Q_j(1-l); only the difference matters.
      const double e_fg = unary.foreground[a] + (mass[a] - message[a]);
      const double e_bg = unary.background[a] + message[a];
      next[a] = 1.0 / (1.0 + std::exp(e_fg - e_bg));
      delta = std::max(delta, std::abs(next[a] - q[a]));
    }
    q.swap(next);
    result.residuals.push_back(delta);
    result.iterations_run = it + 1;
    if (delta < kCrfConvergence) break;
  }

  result.q_foreground = FloatGrid(s);
  result.mask = MaskVolume(s);
  for (std::size_t a = 0; a < n; ++a) {
    result.q_foreground[a] = static_cast<float>(q[a]);
    result.mask.data[a] = q[a] > 0.5 ? 1 : 0;
  }
  return result;
}

}  // namespace fseg
