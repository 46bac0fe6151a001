#include "fseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace fseg {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr double kInsideTol = 1e-6;

double center(std::size_t n) { return 0.5 * static_cast<double>(n - 1); }

bool inside(double x, std::size_t n) { return x >= -kInsideTol && x <= static_cast<double>(n - 1) + kInsideTol; }

double clamp_index(double x, std::size_t n) { return std::clamp(x, 0.0, static_cast<double>(n - 1)); }

std::size_t nearest(double x, std::size_t n) {
  return static_cast<std::size_t>(std::lround(clamp_index(x, n)));
}

}  // namespace

ProbeGeometry ProbeGeometry::for_volume(const FrustumVolume& v, FanModel model) {
  return for_shape(v.shape(), v.radial_start_mm, v.radial_step_mm, v.azimuth_step_deg, v.elevation_step_deg, model);
}

ProbeGeometry ProbeGeometry::for_shape(const Shape3& s, float radial_start_mm, float radial_step_mm,
                                       float azimuth_step_deg, float elevation_step_deg, FanModel model) {
  ProbeGeometry g;
  g.radial_start_mm = radial_start_mm;
  g.radial_step_mm = radial_step_mm;
  g.azimuth_step_deg = azimuth_step_deg;
  g.elevation_step_deg = elevation_step_deg;
  g.azimuth_lines = s.d1;
  g.elevation_lines = s.d2;
  g.model = model;
  return g;
}

void validate(const ProbeGeometry& g) {
  if (!(g.radial_step_mm > 0.0f) || !(g.azimuth_step_deg > 0.0f) || !(g.elevation_step_deg > 0.0f))
    throw std::invalid_argument("probe geometry: steps must be positive");
  if (g.radial_start_mm < 0.0f) throw std::invalid_argument("probe geometry: radial start must be >= 0");
  if (g.azimuth_lines < 1 || g.elevation_lines < 1) throw std::invalid_argument("probe geometry: empty fan");
  if (g.azimuth_span_deg() >= 180.0 || g.elevation_span_deg() >= 180.0)
    throw std::invalid_argument("probe geometry: fan span must be below 180 degrees");
}

Point3 frustum_point_to_cartesian(double r_idx, double a_idx, double e_idx, const ProbeGeometry& g) {
  const double r = g.radial_start_mm + r_idx * g.radial_step_mm;
  const double theta = (a_idx - center(g.azimuth_lines)) * g.azimuth_step_deg * kDeg;
  const double phi = (e_idx - center(g.elevation_lines)) * g.elevation_step_deg * kDeg;
  if (g.model == FanModel::Spherical) {
    return {r * std::sin(theta), r * std::cos(theta) * std::sin(phi), r * std::cos(theta) * std::cos(phi)};
  }
  const double tt = std::tan(theta);
  const double tp = std::tan(phi);
  const double d = r / std::sqrt(1.0 + tt * tt + tp * tp);
  return {d * tt, d * tp, d};
}

FrustumCoord cartesian_point_to_frustum(const Point3& p, const ProbeGeometry& g) {
  const double r = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
  double theta = 0.0;
  double phi = 0.0;
  if (g.model == FanModel::Spherical) {
    theta = r > 0.0 ? std::asin(std::clamp(p.x / r, -1.0, 1.0)) : 0.0;
    phi = std::atan2(p.y, p.z);
  } else {
    theta = std::atan2(p.x, p.z);
    phi = std::atan2(p.y, p.z);
  }
  return {(r - g.radial_start_mm) / g.radial_step_mm,
          theta / (g.azimuth_step_deg * kDeg) + center(g.azimuth_lines),
          phi / (g.elevation_step_deg * kDeg) + center(g.elevation_lines)};
}

CartesianGrid plan_cartesian_grid(const ProbeGeometry& g, std::size_t radial_samples, float spacing_mm) {
  validate(g);
  if (!(spacing_mm > 0.0f)) throw std::invalid_argument("cartesian spacing must be positive");
  if (radial_samples < 1) throw std::invalid_argument("frustum must have at least one radial sample");
  std::array<double, 3> lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(),
                           std::numeric_limits<double>::max()};
  std::array<double, 3> hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest(),
                           std::numeric_limits<double>::lowest()};
  auto visit = [&](std::size_t i, std::size_t j, std::size_t k) {
    const Point3 p = frustum_point_to_cartesian(static_cast<double>(i), static_cast<double>(j),
                                                static_cast<double>(k), g);
    const std::array<double, 3> c{p.x, p.y, p.z};
    for (int ax = 0; ax < 3; ++ax) {
      lo[ax] = std::min(lo[ax], c[ax]);
      hi[ax] = std::max(hi[ax], c[ax]);
    }
  };
  // Extremes of the footprint lie on the frustum's bounding faces.
  const std::size_t D = radial_samples, A = g.azimuth_lines, E = g.elevation_lines;
  for (std::size_t j = 0; j < A; ++j)
    for (std::size_t k = 0; k < E; ++k) {
      visit(0, j, k);
      visit(D - 1, j, k);
    }
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t k = 0; k < E; ++k) {
      visit(i, 0, k);
      visit(i, A - 1, k);
    }
    for (std::size_t j = 0; j < A; ++j) {
      visit(i, j, 0);
      visit(i, j, E - 1);
    }
  }
  CartesianGrid grid;
  grid.spacing_mm = spacing_mm;
  std::array<std::size_t, 3> n{};
  for (int ax = 0; ax < 3; ++ax) {
    grid.origin_mm[ax] = static_cast<float>(lo[ax]);
    n[ax] = static_cast<std::size_t>(std::ceil((hi[ax] - lo[ax]) / spacing_mm - 1e-9)) + 1;
  }
  grid.shape = {n[0], n[1], n[2]};
  return grid;
}

float trilinear(const FloatGrid& grid, double i, double j, double k) {
  const auto& s = grid.shape();
  auto split = [](double x, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
    x = clamp_index(x, n);
    i0 = static_cast<std::size_t>(std::floor(x));
    i1 = std::min(i0 + 1, n - 1);
    f = x - static_cast<double>(i0);
  };
  std::size_t i0, i1, j0, j1, k0, k1;
  double fi, fj, fk;
  split(i, s.d0, i0, i1, fi);
  split(j, s.d1, j0, j1, fj);
  split(k, s.d2, k0, k1, fk);
  const double c00 = grid(i0, j0, k0) * (1 - fk) + grid(i0, j0, k1) * fk;
  const double c01 = grid(i0, j1, k0) * (1 - fk) + grid(i0, j1, k1) * fk;
  const double c10 = grid(i1, j0, k0) * (1 - fk) + grid(i1, j0, k1) * fk;
  const double c11 = grid(i1, j1, k0) * (1 - fk) + grid(i1, j1, k1) * fk;
  const double c0 = c00 * (1 - fj) + c01 * fj;
  const double c1 = c10 * (1 - fj) + c11 * fj;
  return static_cast<float>(c0 * (1 - fi) + c1 * fi);
}

CartesianConversion frustum_to_cartesian(const FrustumVolume& fv, const ProbeGeometry& g, float spacing_mm) {
  if (g.azimuth_lines != fv.shape().d1 || g.elevation_lines != fv.shape().d2)
    throw std::invalid_argument("frustum_to_cartesian: geometry does not match volume shape");
  const CartesianGrid grid = plan_cartesian_grid(g, fv.shape().d0, spacing_mm);
  CartesianConversion out;
  out.volume.data = FloatGrid(grid.shape, 0.0f);
  out.volume.spacing_mm = {spacing_mm, spacing_mm, spacing_mm};
  out.volume.intensity_max = fv.intensity_max;
  out.volume.origin_mm = grid.origin_mm;
  out.footprint = MaskVolume(grid.shape);
  out.footprint.step = out.volume.spacing_mm;
  const auto& fs = fv.shape();
  for (std::size_t x = 0; x < grid.shape.d0; ++x)
    for (std::size_t y = 0; y < grid.shape.d1; ++y)
      for (std::size_t z = 0; z < grid.shape.d2; ++z) {
        const Point3 p{grid.origin_mm[0] + static_cast<double>(x) * spacing_mm,
                       grid.origin_mm[1] + static_cast<double>(y) * spacing_mm,
                       grid.origin_mm[2] + static_cast<double>(z) * spacing_mm};
        const FrustumCoord c = cartesian_point_to_frustum(p, g);
        if (!inside(c.r_idx, fs.d0) || !inside(c.a_idx, fs.d1) || !inside(c.e_idx, fs.d2)) continue;
        out.volume.data(x, y, z) = std::clamp(trilinear(fv.data, c.r_idx, c.a_idx, c.e_idx), 0.0f, fv.intensity_max);
        out.footprint.data(x, y, z) = 1;
      }
  return out;
}

FrustumConversion cartesian_to_frustum(const CartesianVolume& cv, const ProbeGeometry& g, const Shape3& fs) {
  validate(g);
  if (g.azimuth_lines != fs.d1 || g.elevation_lines != fs.d2)
    throw std::invalid_argument("cartesian_to_frustum: geometry does not match frustum shape");
  FrustumConversion out;
  out.volume.data = FloatGrid(fs, 0.0f);
  out.volume.radial_step_mm = g.radial_step_mm;
  out.volume.azimuth_step_deg = g.azimuth_step_deg;
  out.volume.elevation_step_deg = g.elevation_step_deg;
  out.volume.radial_start_mm = g.radial_start_mm;
  out.volume.intensity_max = cv.intensity_max;
  const auto& cs = cv.shape();
  for (std::size_t i = 0; i < fs.d0; ++i)
    for (std::size_t j = 0; j < fs.d1; ++j)
      for (std::size_t k = 0; k < fs.d2; ++k) {
        const Point3 p = frustum_point_to_cartesian(static_cast<double>(i), static_cast<double>(j),
                                                    static_cast<double>(k), g);
        const double cx = (p.x - cv.origin_mm[0]) / cv.spacing_mm[0];
        const double cy = (p.y - cv.origin_mm[1]) / cv.spacing_mm[1];
        const double cz = (p.z - cv.origin_mm[2]) / cv.spacing_mm[2];
        if (!inside(cx, cs.d0) || !inside(cy, cs.d1) || !inside(cz, cs.d2)) {
          ++out.out_of_bounds;
          continue;
        }
        out.volume.data(i, j, k) = std::clamp(trilinear(cv.data, cx, cy, cz), 0.0f, cv.intensity_max);
      }
  return out;
}

MaskVolume mask_frustum_to_cartesian(const MaskVolume& m, const ProbeGeometry& g, const CartesianGrid& grid) {
  MaskVolume out(grid.shape);
  out.step = {grid.spacing_mm, grid.spacing_mm, grid.spacing_mm};
  const auto& fs = m.shape();
  for (std::size_t x = 0; x < grid.shape.d0; ++x)
    for (std::size_t y = 0; y < grid.shape.d1; ++y)
      for (std::size_t z = 0; z < grid.shape.d2; ++z) {
        const Point3 p{grid.origin_mm[0] + static_cast<double>(x) * grid.spacing_mm,
                       grid.origin_mm[1] + static_cast<double>(y) * grid.spacing_mm,
                       grid.origin_mm[2] + static_cast<double>(z) * grid.spacing_mm};
        const FrustumCoord c = cartesian_point_to_frustum(p, g);
        if (!inside(c.r_idx, fs.d0) || !inside(c.a_idx, fs.d1) || !inside(c.e_idx, fs.d2)) continue;
        out.data(x, y, z) = m.data(nearest(c.r_idx, fs.d0), nearest(c.a_idx, fs.d1), nearest(c.e_idx, fs.d2));
      }
  return out;
}

MaskVolume mask_cartesian_to_frustum(const MaskVolume& m, const CartesianGrid& grid, const ProbeGeometry& g,
                                     const Shape3& frustum_shape) {
  MaskVolume out(frustum_shape);
  out.step = {g.radial_step_mm, g.azimuth_step_deg, g.elevation_step_deg};
  const auto& cs = m.shape();
  for (std::size_t i = 0; i < frustum_shape.d0; ++i)
    for (std::size_t j = 0; j < frustum_shape.d1; ++j)
      for (std::size_t k = 0; k < frustum_shape.d2; ++k) {
        const Point3 p = frustum_point_to_cartesian(static_cast<double>(i), static_cast<double>(j),
                                                    static_cast<double>(k), g);
        const double cx = (p.x - grid.origin_mm[0]) / grid.spacing_mm;
        const double cy = (p.y - grid.origin_mm[1]) / grid.spacing_mm;
        const double cz = (p.z - grid.origin_mm[2]) / grid.spacing_mm;
        if (!inside(cx, cs.d0) || !inside(cy, cs.d1) || !inside(cz, cs.d2)) continue;
        out.data(i, j, k) = m.data(nearest(cx, cs.d0), nearest(cy, cs.d1), nearest(cz, cs.d2));
      }
  return out;
}

}  // namespace fseg
