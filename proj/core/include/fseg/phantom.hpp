#pragma once

// Synthetic frustum ultrasound phantoms: a bright curved tube in speckled
// tissue, with voxel ground truth and a deliberately loose bounding box.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fseg/volume.hpp"

namespace fseg {

struct PhantomSpec {
  Shape3 shape{96, 32, 32};
  float radial_step_mm = 0.2695f;
  float azimuth_step_deg = 1.003f;
  float elevation_step_deg = 1.003f;
  // Probe apex to the first sample. A 40 mm offset puts the 3.3 mm tube a few
  // angular voxels wide, keeping it under 2% of the volume.
  float radial_start_mm = 40.0f;
  float intensity_max = 255.0f;

  float catheter_diameter_mm = 3.3f;
  // Centerline control points in (radial, azimuth, elevation) index space.
  std::vector<std::array<float, 3>> control_points;
  float tube_intensity_mean = 200.0f;
  float tube_intensity_sigma = 20.0f;

  float background_mean = 55.0f;
  float background_variation = 0.3f;  // amplitude of the low-frequency field, relative
  float speckle_correlation_vox = 0.6f;  // Gaussian sigma applied to the whole volume; 0 disables
  std::uint32_t tissue_count = 2;
  float tissue_intensity = 130.0f;
  float tissue_thickness_vox = 2.0f;

  std::uint32_t bbox_margin_vox = 4;
  std::uint64_t rng_seed = 0;
};

void validate(const PhantomSpec& spec);

struct Phantom {
  FrustumVolume volume;
  MaskVolume ground_truth;
  BoundingBox3 loose_bbox;
};

// Throws std::invalid_argument when the spec is invalid or the tube leaves the volume.
[[nodiscard]] Phantom generate_phantom(const PhantomSpec& spec);

// Catmull-Rom centerline sampled at roughly `step` voxel spacing.
[[nodiscard]] std::vector<std::array<double, 3>> tube_centerline(const std::vector<std::array<float, 3>>& control,
                                                                 double step = 0.25);

// Ellipsoidal per-axis tube radius (voxels) at a given depth index.
[[nodiscard]] std::array<double, 3> tube_radius_vox(const PhantomSpec& spec, double radial_index);

enum class Split { Train, Val, Test };
[[nodiscard]] const char* to_string(Split s);
[[nodiscard]] Split parse_split(const std::string& s);

struct SplitSizes {
  std::size_t train = 0;
  std::size_t val = 0;
  std::size_t test = 0;
  [[nodiscard]] std::size_t total() const { return train + val + test; }
  // 3/4 train, 1/12 val, 1/6 test (60 -> 45/5/10).
  static SplitSizes proportional(std::size_t count);
};

struct DatasetItem {
  std::string id;
  Split split = Split::Train;
  PhantomSpec spec;
  Phantom phantom;
};

struct Dataset {
  std::uint64_t master_seed = 0;
  std::vector<DatasetItem> items;

  [[nodiscard]] std::vector<const DatasetItem*> members(Split s) const;
};

// Per-member seed derived only from (master seed, index).
[[nodiscard]] std::uint64_t member_seed(std::uint64_t master_seed, std::size_t index);

// Random catheter-like centerline for `spec.shape` drawn from `seed`.
[[nodiscard]] std::vector<std::array<float, 3>> random_centerline(const PhantomSpec& spec, std::uint64_t seed);

// Each member gets its own seed, a jittered tube, and jittered intensities.
[[nodiscard]] Dataset generate_dataset(const PhantomSpec& base, std::size_t count, std::uint64_t seed,
                                       SplitSizes split);

// Writes <id>.frv, <id>.msk, <id>.bbox and manifest.txt into `dir`.
void write_dataset(const Dataset& ds, const std::filesystem::path& dir);

struct ManifestEntry {
  std::string id;
  Split split = Split::Train;
  std::filesystem::path volume;
  std::filesystem::path mask;
  BoundingBox3 bbox;
};

[[nodiscard]] std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
[[nodiscard]] BoundingBox3 read_bbox(const std::filesystem::path& path);
void write_bbox(const BoundingBox3& box, const std::filesystem::path& path);

}  // namespace fseg
