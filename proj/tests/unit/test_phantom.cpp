#include <doctest.h>

#include <filesystem>
#include <set>

#include "fseg/hash.hpp"
#include "fseg/phantom.hpp"

using namespace fseg;
namespace fs = std::filesystem;

namespace {

PhantomSpec straight_spec() {
  PhantomSpec s;
  s.control_points = {{48, 3, 16}, {48, 12, 16}, {48, 20, 16}, {48, 28, 16}};
  s.rng_seed = 9;
  return s;
}

std::uint64_t volume_hash(const FrustumVolume& v) {
  const auto b = encode_volume(v);
  return fnv1a64(std::span<const std::uint8_t>(b));
}

double mean_where(const FrustumVolume& v, const MaskVolume& m, bool inside) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.data.size(); ++i)
    if ((m.data[i] != 0) == inside) {
      sum += v.data[i];
      ++n;
    }
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_CASE("generation is deterministic per seed") {
  const auto a = generate_phantom(straight_spec());
  const auto b = generate_phantom(straight_spec());
  CHECK(a.volume == b.volume);
  CHECK(a.ground_truth == b.ground_truth);
  CHECK(a.loose_bbox == b.loose_bbox);
  auto other = straight_spec();
  other.rng_seed = 10;
  CHECK_FALSE(generate_phantom(other).volume == a.volume);
}

TEST_CASE("zero margin gives the tight box; default margin contains the ground truth") {
  auto s = straight_spec();
  s.bbox_margin_vox = 0;
  const auto p = generate_phantom(s);
  CHECK(p.loose_bbox == tight_bbox(p.ground_truth));

  const auto q = generate_phantom(straight_spec());
  CHECK(q.loose_bbox == dilate(tight_bbox(q.ground_truth), 4, q.volume.shape()));
}

TEST_CASE("3.3 mm tube spans about 12 radial voxels") {
  const auto s = straight_spec();
  CHECK(2.0 * tube_radius_vox(s, 48)[0] == doctest::Approx(3.3 / 0.2695).epsilon(1e-6));
  const auto p = generate_phantom(s);
  std::size_t lo = s.shape.d0, hi = 0;
  for (std::size_t i = 0; i < s.shape.d0; ++i)
    if (p.ground_truth.data(i, 16, 16)) {
      lo = std::min(lo, i);
      hi = std::max(hi, i);
    }
  const double extent = static_cast<double>(hi - lo + 1);
  CHECK(extent >= 11.0);
  CHECK(extent <= 14.0);
}

TEST_CASE("a control point outside the volume is rejected") {
  auto s = straight_spec();
  s.control_points.back() = {48, 40, 16};
  CHECK_THROWS_AS((void)generate_phantom(s), std::invalid_argument);
  s.control_points = {{48, 3, 16}};
  CHECK_THROWS_AS((void)generate_phantom(s), std::invalid_argument);
}

TEST_CASE("dataset splits, per-member seeds and invariants") {
  PhantomSpec base;
  const auto ds = generate_dataset(base, 60, 123, {45, 5, 10});
  REQUIRE(ds.items.size() == 60);
  CHECK(ds.members(Split::Train).size() == 45);
  CHECK(ds.members(Split::Val).size() == 5);
  CHECK(ds.members(Split::Test).size() == 10);

  std::set<std::uint64_t> hashes;
  for (const auto& it : ds.items) {
    const auto& p = it.phantom;
    // Ground truth lies inside the loose box.
    for (std::size_t i = 0; i < p.volume.shape().d0; ++i)
      for (std::size_t j = 0; j < p.volume.shape().d1; ++j)
        for (std::size_t k = 0; k < p.volume.shape().d2; ++k)
          if (p.ground_truth.data(i, j, k)) REQUIRE(p.loose_bbox.contains(i, j, k));
    const double occupancy =
        static_cast<double>(p.ground_truth.count_foreground()) / static_cast<double>(p.volume.shape().count());
    CHECK(occupancy > 0.0);
    CHECK(occupancy <= 0.02);
    CHECK(mean_where(p.volume, p.ground_truth, true) > mean_where(p.volume, p.ground_truth, false) + 50.0);
    CHECK_NOTHROW(validate(p.volume));
    hashes.insert(volume_hash(p.volume));
  }
  CHECK(hashes.size() == 60);

  const auto other = generate_dataset(base, 60, 124, {45, 5, 10});
  for (const auto& it : other.items) CHECK(hashes.count(volume_hash(it.phantom.volume)) == 0);

  const auto again = generate_dataset(base, 60, 123, {45, 5, 10});
  for (std::size_t n = 0; n < 60; ++n) CHECK(again.items[n].phantom.volume == ds.items[n].phantom.volume);
}

TEST_CASE("member seeds depend only on the master seed and index") {
  PhantomSpec base;
  const auto small = generate_dataset(base, 3, 77, {2, 0, 1});
  const auto large = generate_dataset(base, 6, 77, {4, 1, 1});
  for (std::size_t n = 0; n < 3; ++n) {
    CHECK(member_seed(77, n) == member_seed(77, n));
    CHECK(small.items[n].phantom.volume == large.items[n].phantom.volume);
  }
  CHECK(member_seed(77, 0) != member_seed(77, 1));
  CHECK(member_seed(77, 0) != member_seed(78, 0));
}

TEST_CASE("single-member dataset and written manifest round trip") {
  PhantomSpec base;
  const auto ds = generate_dataset(base, 1, 5, {1, 0, 0});
  REQUIRE(ds.items.size() == 1);
  const auto dir = fs::temp_directory_path() / "fseg_test_phantom";
  fs::remove_all(dir);
  write_dataset(ds, dir);
  const auto entries = read_manifest(dir / "manifest.txt");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].id == ds.items[0].id);
  CHECK(entries[0].split == Split::Train);
  CHECK(entries[0].bbox == ds.items[0].phantom.loose_bbox);
  CHECK(load_frustum(entries[0].volume) == ds.items[0].phantom.volume);
  CHECK(load_mask(entries[0].mask) == ds.items[0].phantom.ground_truth);
  CHECK(read_bbox(dir / (entries[0].id + ".bbox")) == entries[0].bbox);
}

TEST_CASE("proportional split sizes") {
  const auto s = SplitSizes::proportional(60);
  CHECK(s.train == 45);
  CHECK(s.val == 5);
  CHECK(s.test == 10);
  CHECK(SplitSizes::proportional(1).total() == 1);
}
