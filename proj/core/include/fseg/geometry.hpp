#pragma once

// Frustum (beam-space) <-> Cartesian scan conversion.
//
// Beam geometry: the apex sits at the origin, z points along the center beam.
// Sample (r_idx, a_idx, e_idx) lies at true Euclidean distance
//   r = radial_start + r_idx * radial_step
// from the apex, steered by
//   theta = (a_idx - (A-1)/2) * azimuth_step,  phi = (e_idx - (E-1)/2) * elevation_step.
//
// FanModel::TanFan (default) treats the two fan angles as separable slopes:
//   d = r / sqrt(1 + tan^2 theta + tan^2 phi);  x = d tan theta, y = d tan phi, z = d.
// FanModel::Spherical rotates by azimuth then elevation:
//   x = r sin theta, y = r cos theta sin phi, z = r cos theta cos phi.

#include <array>
#include <cstddef>

#include "fseg/volume.hpp"

namespace fseg {

enum class FanModel { TanFan, Spherical };

struct ProbeGeometry {
  float radial_start_mm = 0.0f;
  float radial_step_mm = 1.0f;
  float azimuth_step_deg = 1.0f;
  float elevation_step_deg = 1.0f;
  std::size_t azimuth_lines = 1;
  std::size_t elevation_lines = 1;
  FanModel model = FanModel::TanFan;

  [[nodiscard]] double azimuth_span_deg() const { return static_cast<double>(azimuth_lines - 1) * azimuth_step_deg; }
  [[nodiscard]] double elevation_span_deg() const {
    return static_cast<double>(elevation_lines - 1) * elevation_step_deg;
  }

  static ProbeGeometry for_volume(const FrustumVolume& v, FanModel model = FanModel::TanFan);
  static ProbeGeometry for_shape(const Shape3& frustum_shape, float radial_start_mm, float radial_step_mm,
                                 float azimuth_step_deg, float elevation_step_deg,
                                 FanModel model = FanModel::TanFan);
};

// Throws std::invalid_argument on non-positive steps or a fan span >= 180 degrees.
void validate(const ProbeGeometry& g);

struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
};

struct FrustumCoord {
  double r_idx = 0.0;
  double a_idx = 0.0;
  double e_idx = 0.0;
};

[[nodiscard]] Point3 frustum_point_to_cartesian(double r_idx, double a_idx, double e_idx, const ProbeGeometry& g);
[[nodiscard]] FrustumCoord cartesian_point_to_frustum(const Point3& p, const ProbeGeometry& g);

struct CartesianGrid {
  Shape3 shape;
  std::array<float, 3> origin_mm{};
  float spacing_mm = 1.0f;
};

// Smallest axis-aligned grid at `spacing_mm` holding every frustum sample.
[[nodiscard]] CartesianGrid plan_cartesian_grid(const ProbeGeometry& g, std::size_t radial_samples, float spacing_mm);

struct CartesianConversion {
  CartesianVolume volume;
  MaskVolume footprint;  // 1 where the voxel maps inside the frustum
};

struct FrustumConversion {
  FrustumVolume volume;
  std::size_t out_of_bounds = 0;  // frustum samples that fell outside the Cartesian grid
};

[[nodiscard]] CartesianConversion frustum_to_cartesian(const FrustumVolume& fv, const ProbeGeometry& g,
                                                       float spacing_mm);
[[nodiscard]] FrustumConversion cartesian_to_frustum(const CartesianVolume& cv, const ProbeGeometry& g,
                                                     const Shape3& frustum_shape);

// Nearest-neighbour variants so masks stay binary.
[[nodiscard]] MaskVolume mask_frustum_to_cartesian(const MaskVolume& m, const ProbeGeometry& g,
                                                   const CartesianGrid& grid);
[[nodiscard]] MaskVolume mask_cartesian_to_frustum(const MaskVolume& m, const CartesianGrid& grid,
                                                   const ProbeGeometry& g, const Shape3& frustum_shape);

// Trilinear sample at a fractional index; coordinates must lie in [0, n-1].
[[nodiscard]] float trilinear(const FloatGrid& grid, double i, double j, double k);

}  // namespace fseg
