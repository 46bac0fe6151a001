#include "fseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace fseg {

std::string to_string(const Shape3& s) {
  std::ostringstream os;
  os << s.d0 << "x" << s.d1 << "x" << s.d2;
  return os.str();
}

std::size_t MaskVolume::count_foreground() const {
  return static_cast<std::size_t>(std::count_if(data.storage().begin(), data.storage().end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

bool BoundingBox3::valid() const {
  return start.i < end.i && start.j < end.j && start.k < end.k;
}

bool BoundingBox3::within(const Shape3& s) const {
  return end.i <= s.d0 && end.j <= s.d1 && end.k <= s.d2;
}

std::size_t overlap_volume(const BoundingBox3& a, const BoundingBox3& b) {
  std::size_t v = 1;
  for (int ax = 0; ax < 3; ++ax) {
    const auto lo = std::max(a.start[ax], b.start[ax]);
    const auto hi = std::min(a.end[ax], b.end[ax]);
    if (hi <= lo) return 0;
    v *= hi - lo;
  }
  return v;
}

double iou(const BoundingBox3& a, const BoundingBox3& b) {
  const double inter = static_cast<double>(overlap_volume(a, b));
  const double uni = static_cast<double>(a.volume()) + static_cast<double>(b.volume()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

BoundingBox3 dilate(const BoundingBox3& box, std::uint32_t margin, const Shape3& shape) {
  BoundingBox3 out;
  for (int ax = 0; ax < 3; ++ax) {
    out.start.at(ax) = box.start[ax] > margin ? box.start[ax] - margin : 0;
    out.end.at(ax) = static_cast<std::uint32_t>(
        std::min<std::size_t>(std::size_t{box.end[ax]} + margin, shape[ax]));
  }
  return out;
}

BoundingBox3 tight_bbox(const MaskVolume& mask) {
  const auto& s = mask.shape();
  std::array<std::size_t, 3> lo{s.d0, s.d1, s.d2};
  std::array<std::size_t, 3> hi{0, 0, 0};
  bool any = false;
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k) {
        if (!mask.data(i, j, k)) continue;
        any = true;
        lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
        hi = {std::max(hi[0], i + 1), std::max(hi[1], j + 1), std::max(hi[2], k + 1)};
      }
  if (!any) return {};
  BoundingBox3 b;
  for (int ax = 0; ax < 3; ++ax) {
    b.start.at(ax) = static_cast<std::uint32_t>(lo[ax]);
    b.end.at(ax) = static_cast<std::uint32_t>(hi[ax]);
  }
  return b;
}

MaskVolume box_mask(const BoundingBox3& box, const Shape3& shape) {
  MaskVolume m(shape);
  for (std::size_t i = box.start.i; i < std::min<std::size_t>(box.end.i, shape.d0); ++i)
    for (std::size_t j = box.start.j; j < std::min<std::size_t>(box.end.j, shape.d1); ++j)
      for (std::size_t k = box.start.k; k < std::min<std::size_t>(box.end.k, shape.d2); ++k) m.data(i, j, k) = 1;
  return m;
}

std::string to_string(const BoundingBox3& b) {
  std::ostringstream os;
  os << "[" << b.start.i << "," << b.end.i << ")x[" << b.start.j << "," << b.end.j << ")x[" << b.start.k << ","
     << b.end.k << ")";
  return os.str();
}

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void validate_intensities(const FloatGrid& g, float intensity_max) {
  require(g.shape().d0 >= 1 && g.shape().d1 >= 1 && g.shape().d2 >= 1, "volume: every dimension must be >= 1");
  require(std::isfinite(intensity_max) && intensity_max > 0.0f, "volume: intensity_max must be positive");
  for (float v : g.values()) {
    require(std::isfinite(v), "volume: non-finite voxel value");
    require(v >= 0.0f && v <= intensity_max, "volume: voxel value outside [0, intensity_max]");
  }
}

FloatGrid scaled(const FloatGrid& g, float intensity_max) {
  FloatGrid out(g.shape());
  const float inv = 1.0f / intensity_max;
  for (std::size_t n = 0; n < g.size(); ++n) out[n] = std::clamp(g[n] * inv, 0.0f, 1.0f);
  return out;
}

}  // namespace

void validate(const FrustumVolume& v) {
  require(v.radial_step_mm > 0.0f && v.azimuth_step_deg > 0.0f && v.elevation_step_deg > 0.0f,
          "frustum volume: steps must be positive");
  require(std::isfinite(v.radial_start_mm) && v.radial_start_mm >= 0.0f, "frustum volume: radial start must be >= 0");
  validate_intensities(v.data, v.intensity_max);
}

void validate(const CartesianVolume& v) {
  for (float s : v.spacing_mm) require(s > 0.0f && std::isfinite(s), "cartesian volume: spacings must be positive");
  validate_intensities(v.data, v.intensity_max);
}

void validate(const MaskVolume& v) {
  for (auto x : v.data.values()) require(x <= 1, "mask volume: values must be 0 or 1");
}

FloatGrid normalize_01(const FrustumVolume& v) { return scaled(v.data, v.intensity_max); }
FloatGrid normalize_01(const CartesianVolume& v) { return scaled(v.data, v.intensity_max); }

// --- container ---------------------------------------------------------------

namespace {

constexpr char kFrustumMagic[4] = {'F', 'R', 'V', '1'};
constexpr char kCartesianMagic[4] = {'C', 'R', 'V', '1'};
constexpr char kMaskMagic[4] = {'M', 'S', 'K', '1'};

void put_u32(std::uint8_t* dst, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) dst[b] = static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu);
}
void put_f32(std::uint8_t* dst, float v) { put_u32(dst, std::bit_cast<std::uint32_t>(v)); }
std::uint32_t get_u32(const std::uint8_t* src) {
  std::uint32_t v = 0;
  for (int b = 0; b < 4; ++b) v |= std::uint32_t{src[b]} << (8 * b);
  return v;
}
float get_f32(const std::uint8_t* src) { return std::bit_cast<float>(get_u32(src)); }

std::vector<std::uint8_t> make_header(const char (&magic)[4], const Shape3& s, const std::array<float, 3>& steps,
                                      float intensity_max) {
  std::vector<std::uint8_t> out(kVolumeHeaderBytes, 0);
  std::memcpy(out.data(), magic, 4);
  for (int ax = 0; ax < 3; ++ax) {
    if (s[ax] > 0xffffffffu) throw VolumeIoError(VolumeIoErrorKind::InvalidHeader, "volume dimension exceeds u32");
    put_u32(out.data() + 4 + 4 * ax, static_cast<std::uint32_t>(s[ax]));
    put_f32(out.data() + 16 + 4 * ax, steps[ax]);
  }
  put_f32(out.data() + 28, intensity_max);
  return out;
}

void append_f32_payload(std::vector<std::uint8_t>& out, const FloatGrid& g) {
  const std::size_t base = out.size();
  out.resize(base + 4 * g.size());
  for (std::size_t n = 0; n < g.size(); ++n) put_f32(out.data() + base + 4 * n, g[n]);
}

void reject_non_finite(const FloatGrid& g) {
  for (float v : g.values())
    if (!std::isfinite(v)) throw VolumeIoError(VolumeIoErrorKind::NonFinite, "refusing to write non-finite voxel");
}

void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw VolumeIoError(VolumeIoErrorKind::Unwritable, "cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw VolumeIoError(VolumeIoErrorKind::Unwritable, "write failed: " + path.string());
}

FloatGrid read_f32_payload(std::span<const std::uint8_t> bytes, const Shape3& s, float intensity_max) {
  const std::size_t need = 4 * s.count();
  if (bytes.size() - kVolumeHeaderBytes < need)
    throw VolumeIoError(VolumeIoErrorKind::Truncated, "payload shorter than declared dimensions");
  FloatGrid g(s);
  const std::uint8_t* p = bytes.data() + kVolumeHeaderBytes;
  for (std::size_t n = 0; n < g.size(); ++n) {
    const float v = get_f32(p + 4 * n);
    if (!std::isfinite(v)) throw VolumeIoError(VolumeIoErrorKind::NonFinite, "non-finite voxel in payload");
    if (v < 0.0f || v > intensity_max)
      throw VolumeIoError(VolumeIoErrorKind::OutOfRange, "voxel value outside [0, intensity_max]");
    g[n] = v;
  }
  return g;
}

}  // namespace

std::vector<std::uint8_t> encode_volume(const FrustumVolume& v) {
  reject_non_finite(v.data);
  validate(v);
  auto out = make_header(kFrustumMagic, v.shape(), {v.radial_step_mm, v.azimuth_step_deg, v.elevation_step_deg},
                         v.intensity_max);
  put_f32(out.data() + 32, v.radial_start_mm);
  append_f32_payload(out, v.data);
  return out;
}

std::vector<std::uint8_t> encode_volume(const CartesianVolume& v) {
  reject_non_finite(v.data);
  validate(v);
  auto out = make_header(kCartesianMagic, v.shape(), v.spacing_mm, v.intensity_max);
  for (int ax = 0; ax < 3; ++ax) put_f32(out.data() + 32 + 4 * ax, v.origin_mm[ax]);
  append_f32_payload(out, v.data);
  return out;
}

std::vector<std::uint8_t> encode_volume(const MaskVolume& v) {
  validate(v);
  auto out = make_header(kMaskMagic, v.shape(), v.step, 1.0f);
  out.insert(out.end(), v.data.storage().begin(), v.data.storage().end());
  return out;
}

AnyVolume decode_volume(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw VolumeIoError(VolumeIoErrorKind::BadMagic, "file too short for a magic tag");
  const bool is_frustum = std::memcmp(bytes.data(), kFrustumMagic, 4) == 0;
  const bool is_cart = std::memcmp(bytes.data(), kCartesianMagic, 4) == 0;
  const bool is_mask = std::memcmp(bytes.data(), kMaskMagic, 4) == 0;
  if (!is_frustum && !is_cart && !is_mask) throw VolumeIoError(VolumeIoErrorKind::BadMagic, "unrecognized magic tag");
  if (bytes.size() < kVolumeHeaderBytes) throw VolumeIoError(VolumeIoErrorKind::Truncated, "header truncated");

  const Shape3 s{get_u32(bytes.data() + 4), get_u32(bytes.data() + 8), get_u32(bytes.data() + 12)};
  const std::array<float, 3> steps{get_f32(bytes.data() + 16), get_f32(bytes.data() + 20), get_f32(bytes.data() + 24)};
  const float imax = get_f32(bytes.data() + 28);
  if (s.count() == 0) throw VolumeIoError(VolumeIoErrorKind::InvalidHeader, "zero dimension in header");
  for (float st : steps)
    if (!(st > 0.0f) || !std::isfinite(st))
      throw VolumeIoError(VolumeIoErrorKind::InvalidHeader, "non-positive step in header");
  if (!(imax > 0.0f) || !std::isfinite(imax))
    throw VolumeIoError(VolumeIoErrorKind::InvalidHeader, "non-positive intensity_max in header");

  if (is_mask) {
    if (bytes.size() - kVolumeHeaderBytes < s.count())
      throw VolumeIoError(VolumeIoErrorKind::Truncated, "mask payload shorter than declared dimensions");
    MaskVolume m(s);
    m.step = steps;
    std::copy_n(bytes.data() + kVolumeHeaderBytes, s.count(), m.data.storage().begin());
    for (auto x : m.data.values())
      if (x > 1) throw VolumeIoError(VolumeIoErrorKind::OutOfRange, "mask value other than 0/1");
    return m;
  }
  if (is_frustum) {
    FrustumVolume v;
    v.data = read_f32_payload(bytes, s, imax);
    v.radial_step_mm = steps[0];
    v.azimuth_step_deg = steps[1];
    v.elevation_step_deg = steps[2];
    v.intensity_max = imax;
    v.radial_start_mm = get_f32(bytes.data() + 32);
    return v;
  }
  CartesianVolume v;
  v.data = read_f32_payload(bytes, s, imax);
  v.spacing_mm = steps;
  v.intensity_max = imax;
  for (int ax = 0; ax < 3; ++ax) v.origin_mm[ax] = get_f32(bytes.data() + 32 + 4 * ax);
  return v;
}

void save_volume(const FrustumVolume& v, const std::filesystem::path& path) { write_bytes(path, encode_volume(v)); }
void save_volume(const CartesianVolume& v, const std::filesystem::path& path) { write_bytes(path, encode_volume(v)); }
void save_volume(const MaskVolume& v, const std::filesystem::path& path) { write_bytes(path, encode_volume(v)); }

AnyVolume load_volume(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw VolumeIoError(VolumeIoErrorKind::Unreadable, "cannot open: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_volume(bytes);
}

namespace {
template <typename V>
V load_as(const std::filesystem::path& path, const char* what) {
  auto any = load_volume(path);
  if (auto* v = std::get_if<V>(&any)) return std::move(*v);
  throw VolumeIoError(VolumeIoErrorKind::BadMagic, path.string() + " is not a " + what + " volume");
}
}  // namespace

FrustumVolume load_frustum(const std::filesystem::path& path) { return load_as<FrustumVolume>(path, "frustum"); }
CartesianVolume load_cartesian(const std::filesystem::path& path) {
  return load_as<CartesianVolume>(path, "cartesian");
}
MaskVolume load_mask(const std::filesystem::path& path) { return load_as<MaskVolume>(path, "mask"); }

void write_sidecar(const std::filesystem::path& volume_path,
                   const std::vector<std::pair<std::string, std::string>>& entries) {
  auto p = volume_path;
  p += ".meta";
  std::ofstream f(p);
  if (!f) throw VolumeIoError(VolumeIoErrorKind::Unwritable, "cannot open for writing: " + p.string());
  for (const auto& [k, v] : entries) f << k << ": " << v << "\n";
}

}  // namespace fseg
