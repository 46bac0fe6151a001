#pragma once

// Binary fully-connected CRF with Gaussian pairwise kernels, solved by
// mean-field iteration restricted to a cubic window around each voxel.

#include <cstdint>
#include <vector>

#include "fseg/volume.hpp"

namespace fseg {

// Defaults tuned on the phantoms by pseudo-label Dice. Wider smoothness
// kernels (theta_gamma 3, radius 5) erase the few-voxel-wide tube entirely.
struct CrfParams {
  float w_smooth = 1.0f;
  float theta_gamma_vox = 1.0f;
  float w_bilateral = 3.0f;
  float theta_alpha_vox = 3.0f;
  float theta_beta_intensity = 20.0f;
  std::uint32_t iterations = 10;
  std::uint32_t window_radius_vox = 3;
  float unary_threshold = 0.5f;
};

void validate(const CrfParams& p);

// Negative log-probabilities per label.
struct Unary {
  FloatGrid background;
  FloatGrid foreground;
};

inline constexpr float kUnaryHighProb = 0.9f;
inline constexpr float kUnaryLowProb = 0.1f;

// Foreground probability 0.9 where prob >= tau, 0.1 elsewhere.
[[nodiscard]] Unary unary_from_probability(const FloatGrid& prob, float tau);

struct CrfResult {
  MaskVolume mask;           // argmax of the final marginals
  FloatGrid q_foreground;    // final foreground marginal; background is 1 - q
  std::uint32_t iterations_run = 0;
  std::vector<double> residuals;  // max |dQ| after each iteration
};

inline constexpr double kCrfConvergence = 1e-5;

// `image` carries raw intensities (theta_beta is in intensity units).
[[nodiscard]] CrfResult mean_field(const Unary& unary, const FloatGrid& image, const CrfParams& params);

}  // namespace fseg
