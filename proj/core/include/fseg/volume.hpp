#pragma once

// Dense 3D volumes and their binary container format.
//
// Axis order is (radial/depth, azimuth, elevation) for frustum volumes and
// (x, y, z) for Cartesian ones. Storage is row-major with the last axis
// fastest.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace fseg {

struct Shape3 {
  std::size_t d0 = 0;
  std::size_t d1 = 0;
  std::size_t d2 = 0;

  [[nodiscard]] constexpr std::size_t count() const { return d0 * d1 * d2; }
  [[nodiscard]] constexpr std::size_t operator[](int axis) const {
    return axis == 0 ? d0 : (axis == 1 ? d1 : d2);
  }
  friend constexpr bool operator==(const Shape3&, const Shape3&) = default;
};

std::string to_string(const Shape3& s);

template <typename T>
class Grid3 {
 public:
  Grid3() = default;
  explicit Grid3(Shape3 shape, T fill = T{}) : shape_(shape), data_(shape.count(), fill) {}
  Grid3(Shape3 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.count()) throw std::invalid_argument("Grid3: data size does not match shape");
  }

  [[nodiscard]] const Shape3& shape() const { return shape_; }
  [[nodiscard]] std::size_t size() const { return data_.size(); }
  [[nodiscard]] bool empty() const { return data_.empty(); }

  [[nodiscard]] std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
    return (i * shape_.d1 + j) * shape_.d2 + k;
  }
  T& operator()(std::size_t i, std::size_t j, std::size_t k) { return data_[index(i, j, k)]; }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const { return data_[index(i, j, k)]; }
  T& operator[](std::size_t n) { return data_[n]; }
  const T& operator[](std::size_t n) const { return data_[n]; }

  [[nodiscard]] std::span<T> values() { return data_; }
  [[nodiscard]] std::span<const T> values() const { return data_; }
  [[nodiscard]] std::vector<T>& storage() { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const { return data_; }

  friend bool operator==(const Grid3&, const Grid3&) = default;

 private:
  Shape3 shape_{};
  std::vector<T> data_;
};

using FloatGrid = Grid3<float>;
using ByteGrid = Grid3<std::uint8_t>;

struct FrustumVolume {
  FloatGrid data;
  float radial_step_mm = 1.0f;
  float azimuth_step_deg = 1.0f;
  float elevation_step_deg = 1.0f;
  float intensity_max = 255.0f;
  // Probe apex to first radial sample. Not part of the published geometry;
  // stored in header bytes 32..35 (zero by default).
  float radial_start_mm = 0.0f;

  [[nodiscard]] const Shape3& shape() const { return data.shape(); }
  friend bool operator==(const FrustumVolume&, const FrustumVolume&) = default;
};

struct CartesianVolume {
  FloatGrid data;
  std::array<float, 3> spacing_mm{1.0f, 1.0f, 1.0f};
  float intensity_max = 255.0f;
  // Physical position (mm) of voxel (0,0,0) in the probe frame. Stored in
  // header bytes 32..43.
  std::array<float, 3> origin_mm{0.0f, 0.0f, 0.0f};

  [[nodiscard]] const Shape3& shape() const { return data.shape(); }
  friend bool operator==(const CartesianVolume&, const CartesianVolume&) = default;
};

struct MaskVolume {
  ByteGrid data;
  std::array<float, 3> step{1.0f, 1.0f, 1.0f};

  MaskVolume() = default;
  explicit MaskVolume(Shape3 shape) : data(shape, 0) {}

  [[nodiscard]] const Shape3& shape() const { return data.shape(); }
  [[nodiscard]] std::size_t count_foreground() const;
  friend bool operator==(const MaskVolume&, const MaskVolume&) = default;
};

struct Index3 {
  std::uint32_t i = 0;
  std::uint32_t j = 0;
  std::uint32_t k = 0;
  [[nodiscard]] constexpr std::uint32_t operator[](int axis) const { return axis == 0 ? i : (axis == 1 ? j : k); }
  constexpr std::uint32_t& at(int axis) { return axis == 0 ? i : (axis == 1 ? j : k); }
  friend constexpr bool operator==(const Index3&, const Index3&) = default;
};

// Half-open box: start inclusive, end exclusive.
struct BoundingBox3 {
  Index3 start;
  Index3 end;

  [[nodiscard]] constexpr std::uint32_t extent(int axis) const { return end[axis] - start[axis]; }
  [[nodiscard]] constexpr Shape3 shape() const { return {extent(0), extent(1), extent(2)}; }
  [[nodiscard]] constexpr std::size_t volume() const {
    return std::size_t{extent(0)} * extent(1) * extent(2);
  }
  [[nodiscard]] bool valid() const;
  [[nodiscard]] bool within(const Shape3& s) const;
  [[nodiscard]] bool contains(std::size_t i, std::size_t j, std::size_t k) const {
    return i >= start.i && i < end.i && j >= start.j && j < end.j && k >= start.k && k < end.k;
  }
  friend constexpr bool operator==(const BoundingBox3&, const BoundingBox3&) = default;
};

[[nodiscard]] std::size_t overlap_volume(const BoundingBox3& a, const BoundingBox3& b);
[[nodiscard]] double iou(const BoundingBox3& a, const BoundingBox3& b);
// Grows the box by `margin` on every side and clamps it to `shape`.
[[nodiscard]] BoundingBox3 dilate(const BoundingBox3& box, std::uint32_t margin, const Shape3& shape);
// Tight box of the nonzero voxels; std::nullopt-like empty box (all zero) if none.
[[nodiscard]] BoundingBox3 tight_bbox(const MaskVolume& mask);
[[nodiscard]] MaskVolume box_mask(const BoundingBox3& box, const Shape3& shape);
std::string to_string(const BoundingBox3& b);

// Validation against the type invariants; throws std::invalid_argument.
void validate(const FrustumVolume& v);
void validate(const CartesianVolume& v);
void validate(const MaskVolume& v);

[[nodiscard]] FloatGrid normalize_01(const FrustumVolume& v);
[[nodiscard]] FloatGrid normalize_01(const CartesianVolume& v);

// --- binary container -------------------------------------------------------

enum class VolumeIoErrorKind { BadMagic, Truncated, NonFinite, OutOfRange, Unreadable, Unwritable, InvalidHeader };

class VolumeIoError : public std::runtime_error {
 public:
  VolumeIoError(VolumeIoErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] VolumeIoErrorKind kind() const { return kind_; }

 private:
  VolumeIoErrorKind kind_;
};

inline constexpr std::size_t kVolumeHeaderBytes = 64;

using AnyVolume = std::variant<FrustumVolume, CartesianVolume, MaskVolume>;

void save_volume(const FrustumVolume& v, const std::filesystem::path& path);
void save_volume(const CartesianVolume& v, const std::filesystem::path& path);
void save_volume(const MaskVolume& v, const std::filesystem::path& path);

[[nodiscard]] AnyVolume load_volume(const std::filesystem::path& path);
[[nodiscard]] FrustumVolume load_frustum(const std::filesystem::path& path);
[[nodiscard]] CartesianVolume load_cartesian(const std::filesystem::path& path);
[[nodiscard]] MaskVolume load_mask(const std::filesystem::path& path);

// Serialized bytes exactly as written by save_volume.
[[nodiscard]] std::vector<std::uint8_t> encode_volume(const FrustumVolume& v);
[[nodiscard]] std::vector<std::uint8_t> encode_volume(const CartesianVolume& v);
[[nodiscard]] std::vector<std::uint8_t> encode_volume(const MaskVolume& v);
[[nodiscard]] AnyVolume decode_volume(std::span<const std::uint8_t> bytes);

// Optional provenance sidecar: "key: value" lines next to the volume file.
void write_sidecar(const std::filesystem::path& volume_path,
                   const std::vector<std::pair<std::string, std::string>>& entries);

}  // namespace fseg
