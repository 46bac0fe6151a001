#pragma once

// Multiscale Hessian line filter (Frangi vesselness) in voxel index space.

#include <array>
#include <optional>
#include <vector>

#include "fseg/volume.hpp"

namespace fseg {

struct VesselnessParams {
  std::vector<float> scales{2.0f, 3.0f};
  float alpha = 0.5f;
  float beta = 0.5f;
  // Structureness constant; unset means half of the largest Hessian norm per scale.
  std::optional<float> c;
  bool bright_on_dark = true;
};

void validate(const VesselnessParams& p);

// Separable Gaussian, kernel truncated at ceil(3 sigma) and renormalized,
// half-sample symmetric reflection at the borders.
[[nodiscard]] FloatGrid gaussian_smooth(const FloatGrid& vol, float sigma);

// Eigenvalues of a symmetric 3x3 matrix given as (xx, yy, zz, xy, xz, yz),
// ordered so that |l1| <= |l2| <= |l3|.
[[nodiscard]] std::array<double, 3> symmetric_eigenvalues(const std::array<double, 6>& m);

struct HessianEigenvalues {
  FloatGrid l1;
  FloatGrid l2;
  FloatGrid l3;
};

// Hessian of the sigma-smoothed volume from second central differences,
// scaled by sigma^2.
[[nodiscard]] HessianEigenvalues hessian_eigen(const FloatGrid& vol, float sigma);

[[nodiscard]] FloatGrid vesselness(const FloatGrid& vol, const VesselnessParams& params = {});

}  // namespace fseg
