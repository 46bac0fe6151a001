#include <doctest.h>

#include <cmath>
#include <random>

#include "fseg/metrics.hpp"

using namespace fseg;

namespace {

MaskVolume random_mask(Shape3 s, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution b(p);
  MaskVolume m(s);
  for (auto& x : m.data.values()) x = b(rng) ? 1 : 0;
  return m;
}

}  // namespace

TEST_CASE("confusion, DSC and VS match brute-force counting on random 16^3 pairs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> density(0.0, 0.6);
  const Shape3 s{16, 16, 16};
  for (int t = 0; t < 200; ++t) {
    const auto pred = random_mask(s, density(rng), rng);
    const auto gt = random_mask(s, density(rng), rng);
    long tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 16; ++j)
        for (std::size_t k = 0; k < 16; ++k) {
          const int a = pred.data(i, j, k), b = gt.data(i, j, k);
          tp += a & b;
          fp += a & !b;
          fn += !a & b;
          tn += !a & !b;
        }
    const auto c = confusion(pred, gt);
    CHECK(c.tp == static_cast<std::uint64_t>(tp));
    CHECK(c.fp == static_cast<std::uint64_t>(fp));
    CHECK(c.fn == static_cast<std::uint64_t>(fn));
    CHECK(c.tn == static_cast<std::uint64_t>(tn));
    CHECK(c.total() == 4096);
    const double denom = 2.0 * tp + fp + fn;
    const double want_dsc = denom > 0 ? 2.0 * tp / denom : 1.0;
    const double want_vs = denom > 0 ? 1.0 - std::abs(static_cast<double>(fn - fp)) / denom : 1.0;
    CHECK(dsc(c) == want_dsc);
    CHECK(vs(c) == want_vs);
    CHECK(dsc(c) >= 0.0);
    CHECK(dsc(c) <= 1.0);
    CHECK(vs(c) >= 0.0);
    CHECK(vs(c) <= 1.0);

    // Symmetric in (pred, gt).
    const auto r = confusion(gt, pred);
    CHECK(dsc(r) == dsc(c));
    CHECK(vs(r) == vs(c));
    // VS is 1 exactly when the foreground counts agree.
    CHECK((vs(c) == 1.0) == (pred.count_foreground() == gt.count_foreground()));
  }
}

TEST_CASE("hand cases") {
  CHECK(dsc({10, 5, 5, 0}) == doctest::Approx(0.6667).epsilon(1e-4));
  CHECK(vs({10, 8, 2, 0}) == doctest::Approx(0.8).epsilon(1e-4));
  CHECK(vs({10, 5, 5, 0}) == 1.0);
  CHECK(dsc({0, 3, 4, 10}) == 0.0);
  CHECK(vs({0, 3, 0, 10}) == 0.0);
}

TEST_CASE("empty versus empty scores 1") {
  const MaskVolume a({4, 4, 4});
  const auto c = confusion(a, a);
  CHECK(c.tn == 64);
  CHECK(dsc(c) == 1.0);
  CHECK(vs(c) == 1.0);
}

TEST_CASE("shape mismatch throws") {
  CHECK_THROWS_AS((void)confusion(MaskVolume({4, 4, 4}), MaskVolume({4, 4, 5})), std::invalid_argument);
}

TEST_CASE("summary uses the population standard deviation") {
  const auto r = summarize({{"a", 0.5, 1.0}, {"b", 0.7, 0.6}, {"c", 0.9, 0.8}}, {{"mode", "weak"}});
  CHECK(r.mean_dsc == doctest::Approx(0.7));
  CHECK(r.std_dsc == doctest::Approx(std::sqrt(0.08 / 3.0)));
  CHECK(r.mean_vs == doctest::Approx(0.8));
  CHECK(r.std_vs == doctest::Approx(std::sqrt(0.08 / 3.0)));

  const auto one = summarize({{"x", 0.4, 0.9}});
  CHECK(one.std_dsc == 0.0);
  CHECK(one.mean_vs == 0.9);

  const auto none = summarize({});
  CHECK(none.mean_dsc == 0.0);
}

TEST_CASE("report formats") {
  const auto r = summarize({{"a", 0.5, 1.0}, {"b", 1.0, 0.5}}, {{"mode", "weak"}});
  CHECK(format_csv(r) ==
        "id,dsc,vs\n"
        "a,0.500000,1.000000\n"
        "b,1.000000,0.500000\n"
        "mean,0.750000,0.750000\n"
        "std,0.250000,0.250000\n");
  const auto table = format_table(r);
  CHECK(table.find("# mode = weak") != std::string::npos);
  CHECK(table.find("DSC (%)") != std::string::npos);
  CHECK(table.find("75.0+-25.0") != std::string::npos);
  CHECK(table.find("100.0") != std::string::npos);
}
