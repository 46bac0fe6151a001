#include "fseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "fseg/frangi.hpp"

namespace fseg {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

double rayleigh_unit_mean(std::mt19937_64& rng) {
  // Rayleigh with scale sqrt(2/pi) has mean 1.
  std::uniform_real_distribution<double> u(std::numeric_limits<double>::min(), 1.0);
  return std::sqrt(2.0 / std::numbers::pi) * std::sqrt(-2.0 * std::log(u(rng)));
}

std::array<double, 3> catmull_rom(const std::array<double, 3>& p0, const std::array<double, 3>& p1,
                                  const std::array<double, 3>& p2, const std::array<double, 3>& p3, double t) {
  const double t2 = t * t, t3 = t2 * t;
  std::array<double, 3> out{};
  for (int ax = 0; ax < 3; ++ax)
    out[ax] = 0.5 * (2.0 * p1[ax] + (-p0[ax] + p2[ax]) * t + (2.0 * p0[ax] - 5.0 * p1[ax] + 4.0 * p2[ax] - p3[ax]) * t2 +
                     (-p0[ax] + 3.0 * p1[ax] - 3.0 * p2[ax] + p3[ax]) * t3);
  return out;
}

}  // namespace

void validate(const PhantomSpec& spec) {
  if (spec.shape.d0 < 1 || spec.shape.d1 < 1 || spec.shape.d2 < 1) throw std::invalid_argument("phantom: empty shape");
  if (!(spec.radial_step_mm > 0.0f) || !(spec.azimuth_step_deg > 0.0f) || !(spec.elevation_step_deg > 0.0f))
    throw std::invalid_argument("phantom: steps must be positive");
  if (!(spec.catheter_diameter_mm > 0.0f)) throw std::invalid_argument("phantom: diameter must be positive");
  if (spec.control_points.size() < 2) throw std::invalid_argument("phantom: need at least two control points");
  for (const auto& p : spec.control_points)
    for (int ax = 0; ax < 3; ++ax)
      if (!(p[ax] >= 0.0f) || p[ax] > static_cast<float>(spec.shape[ax] - 1))
        throw std::invalid_argument("phantom: control point outside the volume");
  if (!(spec.intensity_max > 0.0f)) throw std::invalid_argument("phantom: intensity_max must be positive");
}

std::vector<std::array<double, 3>> tube_centerline(const std::vector<std::array<float, 3>>& control, double step) {
  std::vector<std::array<double, 3>> pts;
  pts.reserve(control.size() + 2);
  auto as_d = [](const std::array<float, 3>& p) { return std::array<double, 3>{p[0], p[1], p[2]}; };
  pts.push_back(as_d(control.front()));
  for (const auto& p : control) pts.push_back(as_d(p));
  pts.push_back(as_d(control.back()));

  std::vector<std::array<double, 3>> out;
  for (std::size_t s = 1; s + 2 < pts.size(); ++s) {
    double len = 0.0;
    for (int ax = 0; ax < 3; ++ax) len += (pts[s + 1][ax] - pts[s][ax]) * (pts[s + 1][ax] - pts[s][ax]);
    const int n = std::max(1, static_cast<int>(std::ceil(std::sqrt(len) / step)));
    for (int t = 0; t < n; ++t)
      out.push_back(catmull_rom(pts[s - 1], pts[s], pts[s + 1], pts[s + 2], static_cast<double>(t) / n));
  }
  out.push_back(pts[pts.size() - 2]);
  return out;
}

std::array<double, 3> tube_radius_vox(const PhantomSpec& spec, double radial_index) {
  const double half = 0.5 * spec.catheter_diameter_mm;
  const double depth_mm = std::max<double>(spec.radial_start_mm + radial_index * spec.radial_step_mm,
                                           spec.radial_step_mm);
  return {half / spec.radial_step_mm, half / (depth_mm * spec.azimuth_step_deg * kDeg),
          half / (depth_mm * spec.elevation_step_deg * kDeg)};
}

Phantom generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  const Shape3 s = spec.shape;
  std::mt19937_64 rng(spec.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto line = tube_centerline(spec.control_points);
  for (const auto& p : line)
    for (int ax = 0; ax < 3; ++ax)
      if (p[ax] < -1e-6 || p[ax] > static_cast<double>(s[ax] - 1) + 1e-6)
        throw std::invalid_argument("phantom: tube leaves the volume");

  // Ground truth: voxels whose physical distance to the centerline polyline is
  // within the catheter radius, measured with the per-axis voxel size at the
  // voxel's own depth.
  MaskVolume gt(s);
  gt.step = {spec.radial_step_mm, spec.azimuth_step_deg, spec.elevation_step_deg};
  for (std::size_t seg = 0; seg + 1 < line.size(); ++seg) {
    const auto& a = line[seg];
    const auto& b = line[seg + 1];
    std::array<std::size_t, 3> lo{}, hi{};
    // Lateral radii grow towards the apex, so size the search box at the
    // shallowest depth it can reach.
    const double radial_reach = std::ceil(tube_radius_vox(spec, 0.0)[0]) + 1.0;
    const auto widest = tube_radius_vox(spec, std::max(0.0, std::min(a[0], b[0]) - radial_reach));
    for (int ax = 0; ax < 3; ++ax) {
      const double reach = std::ceil(widest[ax]) + 1.0;
      lo[ax] = static_cast<std::size_t>(std::max(0.0, std::floor(std::min(a[ax], b[ax]) - reach)));
      hi[ax] = static_cast<std::size_t>(
          std::min(static_cast<double>(s[ax] - 1), std::ceil(std::max(a[ax], b[ax]) + reach)));
    }
    for (std::size_t i = lo[0]; i <= hi[0]; ++i) {
      const auto rad = tube_radius_vox(spec, static_cast<double>(i));
      for (std::size_t j = lo[1]; j <= hi[1]; ++j)
        for (std::size_t k = lo[2]; k <= hi[2]; ++k) {
          if (gt.data(i, j, k)) continue;
          const std::array<double, 3> p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
          std::array<double, 3> ab{}, ap{};
          double ab2 = 0.0, dot = 0.0;
          for (int ax = 0; ax < 3; ++ax) {
            ab[ax] = (b[ax] - a[ax]) / rad[ax];
            ap[ax] = (p[ax] - a[ax]) / rad[ax];
            ab2 += ab[ax] * ab[ax];
            dot += ab[ax] * ap[ax];
          }
          const double t = ab2 > 0.0 ? std::clamp(dot / ab2, 0.0, 1.0) : 0.0;
          double d2 = 0.0;
          for (int ax = 0; ax < 3; ++ax) d2 += (ap[ax] - t * ab[ax]) * (ap[ax] - t * ab[ax]);
          if (d2 <= 1.0) gt.data(i, j, k) = 1;
        }
    }
  }

  // Background: smooth low-frequency field times multiplicative Rayleigh speckle.
  struct Wave {
    double fx, fy, fz, phase, amp;
  };
  std::vector<Wave> waves;
  for (int w = 0; w < 3; ++w)
    waves.push_back({0.5 + 1.5 * unit(rng), 0.5 + 1.5 * unit(rng), 0.5 + 1.5 * unit(rng),
                     2.0 * std::numbers::pi * unit(rng), (unit(rng) * 2.0 - 1.0) / 3.0});
  struct Shell {
    std::array<double, 3> center, radii;
  };
  std::vector<Shell> shells;
  for (std::uint32_t t = 0; t < spec.tissue_count; ++t) {
    Shell sh{};
    for (int ax = 0; ax < 3; ++ax) {
      const double n = static_cast<double>(s[ax]);
      sh.center[ax] = n * (-0.3 + 1.6 * unit(rng));
      sh.radii[ax] = n * (0.4 + 0.6 * unit(rng));
    }
    shells.push_back(sh);
  }

  FrustumVolume vol;
  vol.radial_step_mm = spec.radial_step_mm;
  vol.azimuth_step_deg = spec.azimuth_step_deg;
  vol.elevation_step_deg = spec.elevation_step_deg;
  vol.radial_start_mm = spec.radial_start_mm;
  vol.intensity_max = spec.intensity_max;
  vol.data = FloatGrid(s);
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k) {
        const double u0 = static_cast<double>(i) / s.d0, u1 = static_cast<double>(j) / s.d1,
                     u2 = static_cast<double>(k) / s.d2;
        double field = 1.0;
        for (const auto& w : waves)
          field += spec.background_variation * w.amp *
                   std::cos(2.0 * std::numbers::pi * (w.fx * u0 + w.fy * u1 + w.fz * u2) + w.phase);
        double base = spec.background_mean * std::max(field, 0.1);
        for (const auto& sh : shells) {
          double rho2 = 0.0;
          double mean_r = 0.0;
          const std::array<double, 3> p{static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
          for (int ax = 0; ax < 3; ++ax) {
            const double d = (p[ax] - sh.center[ax]) / sh.radii[ax];
            rho2 += d * d;
            mean_r += sh.radii[ax] / 3.0;
          }
          if (std::abs(std::sqrt(rho2) - 1.0) * mean_r <= 0.5 * spec.tissue_thickness_vox)
            base = std::max<double>(base, spec.tissue_intensity);
        }
        double v = base * rayleigh_unit_mean(rng);
        if (gt.data(i, j, k)) v = spec.tube_intensity_mean + spec.tube_intensity_sigma * normal(rng);
        vol.data(i, j, k) = static_cast<float>(v);
      }
  if (spec.speckle_correlation_vox > 0.0f) vol.data = gaussian_smooth(vol.data, spec.speckle_correlation_vox);
  for (auto& v : vol.data.storage()) v = std::clamp(v, 0.0f, spec.intensity_max);

  Phantom out;
  out.volume = std::move(vol);
  out.loose_bbox = dilate(tight_bbox(gt), spec.bbox_margin_vox, s);
  out.ground_truth = std::move(gt);
  return out;
}

const char* to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split: " + s);
}

SplitSizes SplitSizes::proportional(std::size_t count) {
  SplitSizes out;
  out.test = static_cast<std::size_t>(std::llround(static_cast<double>(count) / 6.0));
  out.val = static_cast<std::size_t>(std::llround(static_cast<double>(count) / 12.0));
  if (out.test + out.val >= count) out.test = out.val = 0;
  out.train = count - out.test - out.val;
  return out;
}

std::vector<const DatasetItem*> Dataset::members(Split s) const {
  std::vector<const DatasetItem*> out;
  for (const auto& it : items)
    if (it.split == s) out.push_back(&it);
  return out;
}

std::uint64_t member_seed(std::uint64_t master_seed, std::size_t index) {
  // splitmix64 over the pair
  std::uint64_t z = master_seed + 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<std::array<float, 3>> random_centerline(const PhantomSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Shape3 s = spec.shape;
  const int main_axis = unit(rng) < 0.5 ? 1 : 2;
  const int side_axis = 3 - main_axis;
  const double D = static_cast<double>(s.d0 - 1);
  const double N = static_cast<double>(s[main_axis] - 1);
  const double M = static_cast<double>(s[side_axis] - 1);

  const double depth0 = D * (0.3 + 0.4 * unit(rng));
  const double side0 = M * (0.3 + 0.4 * unit(rng));
  const double depth_slope = D * 0.12 * (2.0 * unit(rng) - 1.0);
  const double side_slope = M * 0.2 * (2.0 * unit(rng) - 1.0);
  const std::array<double, 4> fractions{0.04, 0.36, 0.64, 0.96};
  std::vector<std::array<float, 3>> pts;
  for (double f : fractions) {
    std::array<float, 3> p{};
    const double t = f - 0.5;
    p[0] = static_cast<float>(std::clamp(depth0 + depth_slope * t + D * 0.02 * (2.0 * unit(rng) - 1.0), 0.15 * D, 0.85 * D));
    p[main_axis] = static_cast<float>(std::clamp(N * f, 0.0, N));
    p[side_axis] =
        static_cast<float>(std::clamp(side0 + side_slope * t + M * 0.03 * (2.0 * unit(rng) - 1.0), 0.15 * M, 0.85 * M));
    pts.push_back(p);
  }
  return pts;
}

Dataset generate_dataset(const PhantomSpec& base, std::size_t count, std::uint64_t seed, SplitSizes split) {
  if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
  if (split.total() != count) throw std::invalid_argument("generate_dataset: split sizes must sum to count");
  Dataset ds;
  ds.master_seed = seed;
  for (std::size_t n = 0; n < count; ++n) {
    const std::uint64_t ms = member_seed(seed, n);
    std::mt19937_64 rng(ms);
    std::uniform_real_distribution<double> jitter(-1.0, 1.0);
    DatasetItem item;
    std::ostringstream id;
    id << "phantom_" << std::setw(3) << std::setfill('0') << n;
    item.id = id.str();
    item.split = n < split.train ? Split::Train : (n < split.train + split.val ? Split::Val : Split::Test);
    PhantomSpec spec = base;
    spec.rng_seed = member_seed(ms, 1);
    if (base.control_points.empty()) {
      spec.control_points = random_centerline(base, member_seed(ms, 2));
    } else {
      for (auto& p : spec.control_points)
        for (int ax = 0; ax < 3; ++ax) {
          const double n_ax = static_cast<double>(base.shape[ax] - 1);
          p[ax] = static_cast<float>(std::clamp(p[ax] + 0.06 * n_ax * jitter(rng), 0.0, n_ax));
        }
    }
    spec.tube_intensity_mean = static_cast<float>(base.tube_intensity_mean * (1.0 + 0.08 * jitter(rng)));
    spec.background_mean = static_cast<float>(base.background_mean * (1.0 + 0.12 * jitter(rng)));
    spec.tissue_intensity = static_cast<float>(base.tissue_intensity * (1.0 + 0.12 * jitter(rng)));
    item.spec = spec;
    item.phantom = generate_phantom(spec);
    ds.items.push_back(std::move(item));
  }
  return ds;
}

void write_bbox(const BoundingBox3& b, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << b.start.i << " " << b.end.i << " " << b.start.j << " " << b.end.j << " " << b.start.k << " " << b.end.k << "\n";
}

namespace {
BoundingBox3 parse_bbox(std::istream& in) {
  BoundingBox3 b;
  if (!(in >> b.start.i >> b.end.i >> b.start.j >> b.end.j >> b.start.k >> b.end.k))
    throw std::runtime_error("malformed bounding box");
  if (!b.valid()) throw std::runtime_error("bounding box start must be below end");
  return b;
}
}  // namespace

BoundingBox3 read_bbox(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  return parse_bbox(f);
}

void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw std::runtime_error("cannot write manifest in " + dir.string());
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& it : ds.items) ++counts[static_cast<int>(it.split)];
  man << "# fseg phantom dataset v1\n";
  man << "master_seed " << ds.master_seed << "\n";
  man << "count " << ds.items.size() << "\n";
  man << "split " << counts[0] << " " << counts[1] << " " << counts[2] << "\n";
  man << "# id split volume mask x_start x_end y_start y_end z_start z_end\n";
  for (const auto& it : ds.items) {
    const auto vol = it.id + ".frv";
    const auto msk = it.id + ".msk";
    save_volume(it.phantom.volume, dir / vol);
    save_volume(it.phantom.ground_truth, dir / msk);
    write_bbox(it.phantom.loose_bbox, dir / (it.id + ".bbox"));
    const auto& b = it.phantom.loose_bbox;
    man << it.id << " " << to_string(it.split) << " " << vol << " " << msk << " " << b.start.i << " " << b.end.i << " "
        << b.start.j << " " << b.end.j << " " << b.start.k << " " << b.end.k << "\n";
  }
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  std::ifstream f(manifest);
  if (!f) throw std::runtime_error("cannot read manifest " + manifest.string());
  const auto dir = manifest.parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string first;
    ls >> first;
    if (first == "master_seed" || first == "count" || first == "split") continue;
    ManifestEntry e;
    e.id = first;
    std::string split, vol, msk;
    if (!(ls >> split >> vol >> msk)) throw std::runtime_error("malformed manifest line: " + line);
    e.split = parse_split(split);
    e.volume = dir / vol;
    e.mask = dir / msk;
    e.bbox = parse_bbox(ls);
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace fseg
