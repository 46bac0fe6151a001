#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "fseg/volume.hpp"

using namespace fseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fseg_test_volume";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<std::uint8_t> read_all(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

FrustumVolume random_frustum(std::mt19937_64& rng, Shape3 s) {
  std::uniform_real_distribution<float> u(0.0f, 255.0f);
  FrustumVolume v;
  v.data = FloatGrid(s);
  for (auto& x : v.data.values()) x = u(rng);
  v.radial_step_mm = 0.2695f;
  v.azimuth_step_deg = 1.003f;
  v.elevation_step_deg = 1.003f;
  v.radial_start_mm = 12.5f;
  return v;
}

}  // namespace

TEST_CASE("save/load round trip is bit exact over random shapes") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 32);
  for (int t = 0; t < 12; ++t) {
    const Shape3 s{dim(rng), dim(rng), dim(rng)};
    const auto v = random_frustum(rng, s);
    const auto p = scratch("rt.frv");
    save_volume(v, p);
    const auto back = load_frustum(p);
    CHECK(back == v);

    CartesianVolume c;
    c.data = v.data;
    c.spacing_mm = {0.2f, 0.25f, 0.3f};
    c.origin_mm = {-1.5f, 2.0f, 40.0f};
    save_volume(c, scratch("rt.cvl"));
    CHECK(load_cartesian(scratch("rt.cvl")) == c);

    MaskVolume m(s);
    m.step = {0.2695f, 1.003f, 1.003f};
    for (auto& x : m.data.values()) x = static_cast<std::uint8_t>(rng() & 1u);
    save_volume(m, scratch("rt.msk"));
    CHECK(load_mask(scratch("rt.msk")) == m);
  }
}

TEST_CASE("header carries the published steps exactly") {
  std::mt19937_64 rng(2);
  const auto v = random_frustum(rng, {6, 5, 4});
  const auto bytes = encode_volume(v);
  const auto back = std::get<FrustumVolume>(decode_volume(bytes));
  CHECK(back.radial_step_mm == 0.2695f);
  CHECK(back.azimuth_step_deg == 1.003f);
  CHECK(back.elevation_step_deg == 1.003f);
  CHECK(back.shape() == Shape3{6, 5, 4});
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "FRV1");
}

TEST_CASE("zero 8^3 volume is a 64-byte header plus 2048 payload bytes, written deterministically") {
  FrustumVolume v;
  v.data = FloatGrid({8, 8, 8}, 0.0f);
  const auto a = scratch("z1.frv"), b = scratch("z2.frv");
  save_volume(v, a);
  save_volume(v, b);
  CHECK(fs::file_size(a) == 64 + 2048);
  CHECK(read_all(a) == read_all(b));
}

TEST_CASE("malformed files raise distinct I/O errors") {
  std::mt19937_64 rng(3);
  auto bytes = encode_volume(random_frustum(rng, {4, 4, 4}));

  auto kind_of = [](std::span<const std::uint8_t> b) {
    try {
      (void)decode_volume(b);
    } catch (const VolumeIoError& e) {
      return e.kind();
    }
    FAIL("expected a VolumeIoError");
    return VolumeIoErrorKind::Unreadable;
  };

  auto truncated = bytes;
  truncated.resize(bytes.size() - 4);
  CHECK(kind_of(truncated) == VolumeIoErrorKind::Truncated);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of(bad_magic) == VolumeIoErrorKind::BadMagic);

  auto nan_payload = bytes;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan_payload.data() + kVolumeHeaderBytes, &nan, 4);
  CHECK(kind_of(nan_payload) == VolumeIoErrorKind::NonFinite);

  CHECK_THROWS_AS((void)load_volume(scratch("does_not_exist.frv")), VolumeIoError);
}

TEST_CASE("NaN data is rejected before anything is written") {
  FrustumVolume v;
  v.data = FloatGrid({2, 2, 2}, 1.0f);
  v.data[3] = std::numeric_limits<float>::quiet_NaN();
  const auto p = scratch("nan.frv");
  fs::remove(p);
  CHECK_THROWS_AS(save_volume(v, p), VolumeIoError);
  CHECK_FALSE(fs::exists(p));
}

TEST_CASE("normalize_01 divides by intensity_max") {
  FrustumVolume v;
  v.data = FloatGrid({3, 3, 3}, 255.0f);
  const auto ones = normalize_01(v);
  for (float x : ones.values()) CHECK(x == 1.0f);
  v.data = FloatGrid({3, 3, 3}, 0.0f);
  const auto zeros = normalize_01(v);
  for (float x : zeros.values()) CHECK(x == 0.0f);
  v.data[0] = 128.0f;
  CHECK(normalize_01(v)[0] == doctest::Approx(128.0 / 255.0).epsilon(1e-7));
}

TEST_CASE("normalize_01 is invariant to joint scaling of data and intensity_max") {
  std::mt19937_64 rng(4);
  auto v = random_frustum(rng, {5, 6, 7});
  auto w = v;
  for (auto& x : w.data.values()) x *= 4.0f;
  w.intensity_max = 4.0f * v.intensity_max;
  const auto a = normalize_01(v), b = normalize_01(w);
  for (std::size_t n = 0; n < a.size(); ++n) CHECK(a[n] == doctest::Approx(b[n]).epsilon(1e-6));
  const auto arg = [](const FloatGrid& g) {
    return std::max_element(g.values().begin(), g.values().end()) - g.values().begin();
  };
  CHECK(arg(a) == arg(v.data));
  for (float x : a.values()) {
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
}

TEST_CASE("validation rejects invariant violations") {
  FrustumVolume v;
  v.data = FloatGrid({2, 2, 2}, 10.0f);
  CHECK_NOTHROW(validate(v));
  v.radial_step_mm = 0.0f;
  CHECK_THROWS_AS(validate(v), std::invalid_argument);
  v.radial_step_mm = 1.0f;
  v.data[0] = 300.0f;
  CHECK_THROWS_AS(validate(v), std::invalid_argument);
  MaskVolume m({2, 2, 2});
  m.data[1] = 2;
  CHECK_THROWS_AS(validate(m), std::invalid_argument);
}

TEST_CASE("bounding box helpers") {
  const BoundingBox3 a{{2, 2, 2}, {6, 6, 6}};
  const BoundingBox3 b{{4, 4, 4}, {8, 8, 8}};
  CHECK(a.volume() == 64);
  CHECK(overlap_volume(a, b) == 8);
  CHECK(iou(a, b) == doctest::Approx(8.0 / 120.0));
  CHECK(iou(a, a) == 1.0);

  const Shape3 s{10, 10, 10};
  CHECK(dilate(a, 3, s) == BoundingBox3{{0, 0, 0}, {9, 9, 9}});

  MaskVolume m(s);
  m.data(3, 4, 5) = 1;
  m.data(6, 2, 5) = 1;
  CHECK(tight_bbox(m) == BoundingBox3{{3, 2, 5}, {7, 5, 6}});
  CHECK(box_mask(a, s).count_foreground() == 64);
  CHECK(tight_bbox(box_mask(a, s)) == a);
}
