// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset. Exit status is 0 only when every selected
// criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "crf_oracle.hpp"
#include "fseg/densecrf.hpp"
#include "fseg/flops.hpp"
#include "fseg/frangi.hpp"
#include "fseg/geometry.hpp"
#include "fseg/layers.hpp"
#include "fseg/metrics.hpp"
#include "fseg/network.hpp"
#include "fseg/phantom.hpp"
#include "fseg/weaksup.hpp"
#include "full_graph.hpp"
#include "gradcheck.hpp"

using namespace fseg;
using fseg::testing::dot;
using fseg::testing::fd_check;
using fseg::testing::random_tensor;
using fseg::testing::random_vector;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> lines;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok    " : "FAIL  ") + what);
  }
  void note(const std::string& what) { lines.push_back("info  " + what); }
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * std::abs(target); }

// --- 1 -----------------------------------------------------------------------

Outcome gradients() {
  constexpr double kTol = fseg::testing::kFdTolerance;
  Outcome o;
  std::mt19937_64 rng(101);
  double worst = 0.0;
  auto record = [&](const std::string& name, double rel) {
    worst = std::max(worst, rel);
    if (rel > kTol) o.check(false, fmt("%s rel %.2e", name.c_str(), rel));
  };

  for (std::size_t stride : {1u, 2u})
    for (std::size_t k : {1u, 3u}) {
      nn::ConvWeights<double> p(2, 3, k, stride);
      p.w = random_vector(p.w.size(), rng);
      p.b = random_vector(p.b.size(), rng);
      auto x = random_tensor(2, 16, 16, 16, rng);
      const auto y0 = nn::conv3d(x, p);
      Tensor<double> r(y0.c, y0.d, y0.h, y0.w);
      r.v = random_vector(r.size(), rng);
      auto loss = [&] { return dot(nn::conv3d(x, p).v, r.v); };
      nn::ConvWeights<double> g(2, 3, k, stride);
      const auto dx = nn::conv3d_backward(x, r, p, g);
      const auto tag = fmt("conv k%zu s%zu", k, stride);
      record(tag + " x", fd_check(x.v, dx.v, loss, 300, rng).rel_error);
      record(tag + " w", fd_check(p.w, g.w, loss, 0, rng).rel_error);
      record(tag + " b", fd_check(p.b, g.b, loss, 0, rng).rel_error);
    }

  {
    nn::GroupNormWeights<double> p(4, 2);
    p.gamma = random_vector(4, rng, 0.5, 1.5);
    p.beta = random_vector(4, rng);
    auto x = random_tensor(4, 16, 16, 16, rng);
    nn::GroupNormCache<double> cache;
    (void)nn::group_norm(x, p, cache);
    Tensor<double> r(4, 16, 16, 16);
    r.v = random_vector(r.size(), rng);
    auto loss = [&] {
      nn::GroupNormCache<double> c;
      return dot(nn::group_norm(x, p, c).v, r.v);
    };
    nn::GroupNormWeights<double> g(4, 2);
    g.gamma.assign(4, 0.0);
    const auto dx = nn::group_norm_backward(r, p, cache, g);
    record("group norm x", fd_check(x.v, dx.v, loss, 300, rng).rel_error);
    record("group norm gamma", fd_check(p.gamma, g.gamma, loss, 0, rng).rel_error);
    record("group norm beta", fd_check(p.beta, g.beta, loss, 0, rng).rel_error);
  }

  {
    Tensor<double> r(2, 16, 16, 16);
    r.v = random_vector(r.size(), rng);
    auto x = random_tensor(2, 16, 16, 16, rng);
    for (auto& e : x.v) e += e >= 0 ? 0.05 : -0.05;  // away from the kink
    auto relu_loss = [&] { return dot(nn::relu(x).v, r.v); };
    record("relu", fd_check(x.v, nn::relu_backward(nn::relu(x), r).v, relu_loss, 300, rng).rel_error);

    auto xs = random_tensor(2, 16, 16, 16, rng, -3.0, 3.0);
    auto sig_loss = [&] { return dot(nn::sigmoid(xs).v, r.v); };
    record("sigmoid", fd_check(xs.v, nn::sigmoid_backward(nn::sigmoid(xs), r).v, sig_loss, 300, rng).rel_error);

    Tensor<double> xp(2, 16, 16, 16);
    xp.v.resize(xp.size());
    for (std::size_t n = 0; n < xp.size(); ++n) xp.v[n] = 0.01 * static_cast<double>(n);
    std::shuffle(xp.v.begin(), xp.v.end(), rng);
    std::vector<std::uint32_t> arg;
    (void)nn::maxpool2(xp, arg);
    Tensor<double> rp(2, 8, 8, 8);
    rp.v = random_vector(rp.size(), rng);
    auto pool_loss = [&] {
      std::vector<std::uint32_t> a;
      return dot(nn::maxpool2(xp, a).v, rp.v);
    };
    record("maxpool", fd_check(xp.v, nn::maxpool2_backward(rp, arg, xp).v, pool_loss, 300, rng).rel_error);
  }

  {
    auto x = random_tensor(3, 16, 16, 16, rng);
    const BoundingBox3 region{{2, 3, 4}, {9, 15, 8}};
    const auto rg = random_vector(3, rng);
    Tensor<double> dgap(3, 16, 16, 16);
    nn::gap_backward(rg, region, dgap);
    auto gap_loss = [&] { return dot(nn::gap(x, region), rg); };
    record("gap", fd_check(x.v, dgap.v, gap_loss, 300, rng).rel_error);

    auto in = random_vector(5, rng), w = random_vector(10, rng), b = random_vector(2, rng);
    const auto rl = random_vector(2, rng);
    std::vector<double> dw(10, 0.0), db(2, 0.0);
    const auto din = nn::linear_backward(in, rl, w, dw, db);
    auto lin_loss = [&] { return dot(nn::linear(in, w, b), rl); };
    record("linear x", fd_check(in, din, lin_loss, 0, rng).rel_error);
    record("linear w", fd_check(w, dw, lin_loss, 0, rng).rel_error);
    record("linear b", fd_check(b, db, lin_loss, 0, rng).rel_error);

    auto x2 = random_tensor(2, 16, 16, 16, rng);
    Tensor<double> rc(5, 16, 16, 16);
    rc.v = random_vector(rc.size(), rng);
    Tensor<double> da, db2;
    nn::concat_backward(rc, 3, da, db2);
    auto cat_loss = [&] { return dot(nn::concat(x, x2).v, rc.v); };
    record("concat a", fd_check(x.v, da.v, cat_loss, 200, rng).rel_error);
    record("concat b", fd_check(x2.v, db2.v, cat_loss, 200, rng).rel_error);

    Tensor<double> rcrop(3, region.extent(0), region.extent(1), region.extent(2));
    rcrop.v = random_vector(rcrop.size(), rng);
    Tensor<double> dcrop(3, 16, 16, 16);
    nn::crop_backward(rcrop, region, dcrop);
    auto crop_loss = [&] { return dot(nn::crop(x, region).v, rcrop.v); };
    record("crop", fd_check(x.v, dcrop.v, crop_loss, 300, rng).rel_error);

    Tensor<double> ru(3, 64, 64, 64);
    ru.v = random_vector(ru.size(), rng);
    auto up_loss = [&] { return dot(nn::upsample_trilinear(x, 4).v, ru.v); };
    record("upsample", fd_check(x.v, nn::upsample_trilinear_backward(ru, 4).v, up_loss, 200, rng).rel_error);
  }

  {
    std::uniform_real_distribution<double> u(0.05, 0.95);
    Tensor<double> p(1, 16, 16, 16), t(1, 16, 16, 16);
    for (auto& v : p.v) v = u(rng);
    for (auto& v : t.v) v = rng() % 3 == 0 ? 1.0 : 0.0;
    Tensor<double> d;
    (void)loss_loc(p, t, 10.0, &d);
    record("weighted BCE", fd_check(p.v, d.v, [&] { return loss_loc(p, t, 10.0); }, 300, rng).rel_error);
    (void)loss_seg(p, t, &d);
    record("Dice + BCE", fd_check(p.v, d.v, [&] { return loss_seg(p, t); }, 300, rng).rel_error);
    std::vector<double> logits{0.7, -0.4};
    std::array<double, 2> dl{};
    (void)loss_cls<double>({logits[0], logits[1]}, 1, &dl);
    record("softmax CE",
           fd_check(logits, {dl[0], dl[1]}, [&] { return loss_cls<double>({logits[0], logits[1]}, 1); }, 0, rng)
               .rel_error);
  }
  o.check(worst <= kTol, fmt("per-operation checks, worst rel %.2e <= %.0e (step %.0e)", worst, kTol,
                             fseg::testing::kFdStep));

  // Two-layer toy graph: conv -> group norm -> sigmoid -> strided conv.
  {
    nn::ConvWeights<double> c1(1, 4, 3, 1), c2(4, 2, 3, 2);
    c1.w = random_vector(c1.w.size(), rng, -0.5, 0.5);
    c1.b = random_vector(c1.b.size(), rng);
    c2.w = random_vector(c2.w.size(), rng, -0.5, 0.5);
    c2.b = random_vector(c2.b.size(), rng);
    nn::GroupNormWeights<double> gn(4, 2);
    gn.gamma = random_vector(4, rng, 0.5, 1.5);
    gn.beta = random_vector(4, rng);
    auto x = random_tensor(1, 16, 16, 16, rng);
    Tensor<double> r(2, 8, 8, 8);
    r.v = random_vector(r.size(), rng);
    auto forward = [&] {
      nn::GroupNormCache<double> c;
      return dot(nn::conv3d(nn::sigmoid(nn::group_norm(nn::conv3d(x, c1), gn, c)), c2).v, r.v);
    };
    const auto h1 = nn::conv3d(x, c1);
    nn::GroupNormCache<double> cache;
    const auto h2 = nn::group_norm(h1, gn, cache);
    const auto h3 = nn::sigmoid(h2);
    nn::ConvWeights<double> g1(1, 4, 3, 1), g2(4, 2, 3, 2);
    nn::GroupNormWeights<double> ggn(4, 2);
    ggn.gamma.assign(4, 0.0);
    const auto d3 = nn::conv3d_backward(h3, r, c2, g2);
    const auto d2 = nn::sigmoid_backward(h3, d3);
    const auto d1 = nn::group_norm_backward(d2, gn, cache, ggn);
    const auto dx = nn::conv3d_backward(x, d1, c1, g1);
    double toy = 0.0;
    toy = std::max(toy, fd_check(x.v, dx.v, forward, 300, rng).rel_error);
    toy = std::max(toy, fd_check(c1.w, g1.w, forward, 0, rng).rel_error);
    toy = std::max(toy, fd_check(c1.b, g1.b, forward, 0, rng).rel_error);
    toy = std::max(toy, fd_check(gn.gamma, ggn.gamma, forward, 0, rng).rel_error);
    toy = std::max(toy, fd_check(gn.beta, ggn.beta, forward, 0, rng).rel_error);
    toy = std::max(toy, fd_check(c2.w, g2.w, forward, 200, rng).rel_error);
    toy = std::max(toy, fd_check(c2.b, g2.b, forward, 0, rng).rel_error);
    o.check(toy <= kTol, fmt("two-layer toy graph, worst rel %.2e", toy));
  }

  // Whole network, every parameter tensor. Many ReLUs sit downstream of each
  // weight, so a 1e-3 step crosses kinks; logged with a 1e-6 step.
  {
    NetworkConfig cfg;
    cfg.block_channels = {4, 8, 8, 8, 8};
    cfg.decoder_channels = 4;
    cfg.norm_groups = 4;
    cfg.rng_seed = 5;
    Network<double> net(cfg);
    auto x = random_tensor(1, 16, 16, 16, rng, 0.0, 1.0);
    fseg::testing::FullGraphLoss L;
    L.region = {{0, 1, 1}, {3, 4, 3}};
    L.roi = {{2, 3, 1}, {13, 16, 10}};
    L.r_cls = {0.3, -0.7};
    L.r_loc = random_vector(64, rng);
    L.r_dec = random_vector(L.roi.volume(), rng);
    net.zero_grad();
    L.backward(net, x);
    std::vector<std::vector<double>*> params;
    std::vector<const std::vector<double>*> grads;
    net.weights().visit([&](const std::string&, std::vector<double>& v) { params.push_back(&v); });
    net.grads().visit([&](const std::string&, const std::vector<double>& v) { grads.push_back(&v); });
    double full = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p)
      full = std::max(full, fd_check(*params[p], *grads[p], [&] { return L(net, x); }, 6, rng, 1e-6).rel_error);
    o.note(fmt("full network (%zu parameter tensors, step 1e-6): worst rel %.2e", params.size(), full));
  }
  return o;
}

// --- 2 -----------------------------------------------------------------------

Outcome metric_oracles() {
  Outcome o;
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> density(0.0, 0.6);
  int exact = 0;
  for (int t = 0; t < 200; ++t) {
    MaskVolume a({16, 16, 16}), b({16, 16, 16});
    std::bernoulli_distribution pa(density(rng)), pb(density(rng));
    for (auto& x : a.data.values()) x = pa(rng);
    for (auto& x : b.data.values()) x = pb(rng);
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t n = 0; n < a.data.size(); ++n) {
      tp += a.data[n] && b.data[n];
      fp += a.data[n] && !b.data[n];
      fn += !a.data[n] && b.data[n];
    }
    const double denom = 2.0 * tp + fp + fn;
    const double want_dsc = denom > 0 ? 2.0 * tp / denom : 1.0;
    const double want_vs = denom > 0 ? 1.0 - std::abs(static_cast<double>(fn - fp)) / denom : 1.0;
    const auto c = confusion(a, b);
    exact += dsc(c) == want_dsc && vs(c) == want_vs;
  }
  o.check(exact == 200, fmt("brute-force agreement on %d / 200 random 16^3 pairs", exact));
  const double d = dsc({10, 5, 5, 0}), v = vs({10, 8, 2, 0});
  o.check(std::round(d * 1e4) == 6667, fmt("tp=10 fp=5 fn=5: DSC %.4f (want 0.6667)", d));
  o.check(std::round(v * 1e4) == 8000, fmt("tp=10 fp=8 fn=2: VS %.4f (want 0.8000)", v));
  return o;
}

// --- 3 -----------------------------------------------------------------------

Outcome crf_oracle() {
  Outcome o;
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<float> w(0.0f, 1.5f), th(0.5f, 4.0f), beta(5.0f, 60.0f), un(0.05f, 3.0f),
      px(0.0f, 255.0f);
  const Shape3 s{6, 6, 6};
  double worst = 0.0;
  int monotone = 0;
  for (int t = 0; t < 20; ++t) {
    CrfParams p;
    p.w_smooth = w(rng);
    p.w_bilateral = w(rng);
    p.theta_gamma_vox = th(rng);
    p.theta_alpha_vox = th(rng);
    p.theta_beta_intensity = beta(rng);
    p.iterations = 5;
    p.window_radius_vox = 5;  // every pair of a 6^3 grid
    Unary u{FloatGrid(s), FloatGrid(s)};
    FloatGrid img(s);
    for (std::size_t n = 0; n < s.count(); ++n) {
      u.background[n] = un(rng);
      u.foreground[n] = un(rng);
      img[n] = px(rng);
    }
    const auto got = mean_field(u, img, p);
    const auto want = fseg::testing::all_pairs_mean_field(u, img, p, got.iterations_run);
    for (std::size_t n = 0; n < s.count(); ++n)
      worst = std::max(worst, std::abs(static_cast<double>(got.q_foreground[n]) - want[n]));
    monotone += std::is_sorted(got.residuals.rbegin(), got.residuals.rend());
  }
  o.check(worst <= 1e-5, fmt("20 random 6^3 instances, 5 iterations: max |dQ| %.2e <= 1e-5", worst));
  o.note(fmt("residuals non-increasing in %d / 20 instances (not asserted)", monotone));
  return o;
}

// --- 4 -----------------------------------------------------------------------

FloatGrid cylinder(std::size_t n, double radius, int axis) {
  FloatGrid g({n, n, n}, 0.0f);
  const double c = static_cast<double>(n) / 2.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < n; ++k) {
        const double p[3] = {static_cast<double>(i), static_cast<double>(j), static_cast<double>(k)};
        double r2 = 0.0;
        for (int ax = 0; ax < 3; ++ax)
          if (ax != axis) r2 += (p[ax] - c) * (p[ax] - c);
        if (r2 <= radius * radius) g(i, j, k) = 1.0f;
      }
  return g;
}

Outcome frangi_sanity() {
  Outcome o;
  const auto flat = vesselness(FloatGrid({32, 32, 32}, 0.6f));
  o.check(std::all_of(flat.values().begin(), flat.values().end(), [](float x) { return x == 0.0f; }),
          "constant volume gives an identically zero response");

  const std::size_t n = 64;
  const auto g = cylinder(n, 3.0, 2);
  const auto v = vesselness(g);
  double centre = 0.0, far = 0.0;
  std::size_t nc = 0, nf = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 8; k < n - 8; ++k) {
        const double r = std::hypot(static_cast<double>(i) - 32.0, static_cast<double>(j) - 32.0);
        if (r < 0.5) {
          centre += v(i, j, k);
          ++nc;
        } else if (r > 9.0) {
          far += v(i, j, k);
          ++nf;
        }
      }
  centre /= static_cast<double>(nc);
  far /= static_cast<double>(nf);
  o.check(centre > 0.0 && centre >= 5.0 * far,
          fmt("cylinder r=3 in 64^3: centreline mean %.4f, far-field mean %.2e (ratio %s)", centre, far,
              far > 0.0 ? fmt("%.1f", centre / far).c_str() : "inf"));

  FloatGrid p({n, n, n});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c) p(a, b, c) = g(b, c, a);
  const auto vp = vesselness(p);
  double diff = 0.0, norm = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t c = 0; c < n; ++c) {
        const double d = vp(a, b, c) - v(b, c, a);
        diff += d * d;
        norm += static_cast<double>(v(b, c, a)) * v(b, c, a);
      }
  const double rms = std::sqrt(diff / norm);
  o.check(rms <= 0.05, fmt("axis-permutation equivariance: relative RMS %.4f <= 0.05", rms));
  return o;
}

// --- 5 -----------------------------------------------------------------------

Outcome scan_conversion() {
  Outcome o;
  const Shape3 frustum{360, 96, 96};
  const auto g = ProbeGeometry::for_shape(frustum, 0.0f, 0.2695f, 1.003f, 1.003f);
  const auto grid = plan_cartesian_grid(g, frustum.d0, 0.2f);
  const std::array<std::size_t, 3> want{360, 360, 336};
  std::array<std::size_t, 3> got{grid.shape.d0, grid.shape.d1, grid.shape.d2};
  o.note(fmt("360x96x96 at 0.2695 mm / 1.003 deg, apex at the first sample, 0.2 mm grid: %zu x %zu x %zu (x, y, z)",
             got[0], got[1], got[2]));
  // The axis order of 360x360x336 is not stated; compare sorted extents.
  auto sorted_got = got, sorted_want = want;
  std::sort(sorted_got.begin(), sorted_got.end());
  std::sort(sorted_want.begin(), sorted_want.end());
  bool axes_ok = true;
  std::string detail;
  for (int ax = 0; ax < 3; ++ax) {
    const double rel = static_cast<double>(sorted_got[ax]) / static_cast<double>(sorted_want[ax]) - 1.0;
    axes_ok = axes_ok && std::abs(rel) <= 0.05;
    detail += fmt("%s%zu vs %zu (%+.0f%%)", ax ? ", " : "", sorted_got[ax], sorted_want[ax], 100.0 * rel);
  }
  o.check(axes_ok, "Cartesian extents within 5% per axis: " + detail);
  const double depth_mm = 359 * 0.2695;
  o.note(fmt("beam depth alone spans %.1f mm = %.0f voxels at 0.2 mm, beyond any 360-voxel axis", depth_mm,
             depth_mm / 0.2));

  const double ratio = static_cast<double>(grid.shape.count()) / static_cast<double>(frustum.count());
  o.check(std::abs(ratio - 7.0) <= 1.0, fmt("Cartesian / frustum voxel ratio %.1f (want 7 +- 1)", ratio));
  o.note(fmt("360x360x336 / 360x96x96 itself is %.2f", 360.0 * 360.0 * 336.0 / frustum.count()));

  // Round trip on the phantom geometry with a smooth field.
  const PhantomSpec spec;
  const auto pg = ProbeGeometry::for_shape(spec.shape, spec.radial_start_mm, spec.radial_step_mm,
                                           spec.azimuth_step_deg, spec.elevation_step_deg);
  FrustumVolume v;
  v.data = FloatGrid(spec.shape);
  v.radial_start_mm = spec.radial_start_mm;
  v.radial_step_mm = spec.radial_step_mm;
  v.azimuth_step_deg = spec.azimuth_step_deg;
  v.elevation_step_deg = spec.elevation_step_deg;
  const auto& s = spec.shape;
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k)
        v.data(i, j, k) = static_cast<float>(128.0 + 50.0 * std::sin(i / 9.0) * std::cos(j / 6.0) +
                                             30.0 * std::sin(k / 7.0 + 0.3));
  const auto c = frustum_to_cartesian(v, pg, spec.radial_step_mm);
  const auto back = cartesian_to_frustum(c.volume, pg, s);
  double sum = 0.0;
  std::size_t count = 0;
  auto interior = [](std::size_t i, std::size_t n) { return i >= n / 10 && i < n - n / 10; };
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k)
        if (interior(i, s.d0) && interior(j, s.d1) && interior(k, s.d2)) {
          sum += std::abs(back.volume.data(i, j, k) - v.data(i, j, k));
          ++count;
        }
  const double mad = sum / static_cast<double>(count);
  o.check(mad <= 10.0, fmt("smooth round trip on %s phantom geometry: interior mean |d| %.2f <= 10 of 255",
                           to_string(s).c_str(), mad));
  return o;
}

// --- 6 -----------------------------------------------------------------------

Outcome equation_cases() {
  Outcome o;
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<float> u01(0.0f, 1.0f), px(0.0f, 255.0f);
  const Shape3 s{16, 16, 16};
  FrustumVolume img;
  img.data = FloatGrid(s);
  for (auto& x : img.data.values()) x = px(rng);
  FloatGrid rv(s), rc(s);
  for (auto& x : rv.values()) x = u01(rng);
  for (auto& x : rc.values()) x = u01(rng);
  const FloatGrid ones(s, 1.0f), zeros(s, 0.0f);

  const auto id = build_probability_map(ones, ones, img);
  bool identity = true;
  for (std::size_t n = 0; n < id.size(); ++n) identity = identity && id[n] == img.data[n] / img.intensity_max;
  o.check(identity, "probability map with unit vesselness and CAM equals the normalized image");
  bool annihilate = true;
  for (const auto& z : {build_probability_map(zeros, rc, img), build_probability_map(rv, zeros, img)})
    for (float x : z.values()) annihilate = annihilate && x == 0.0f;
  FrustumVolume black = img;
  for (auto& x : black.data.values()) x = 0.0f;
  const auto zb = build_probability_map(rv, rc, black);
  for (float x : zb.values()) annihilate = annihilate && x == 0.0f;
  o.check(annihilate, "a zero factor annihilates the probability map");

  PseudoLabelParams p;
  p.eta = 1.0f;
  const BoundingBox3 box{{3, 3, 3}, {13, 13, 13}};
  const auto u0 = build_probability_map(rv, rc, img);
  FloatGrid ut(s);
  for (auto& x : ut.values()) x = u01(rng);
  MaskVolume y1(s), y2(s);
  for (std::size_t n = 0; n < y1.data.size(); ++n) {
    y1.data[n] = rng() % 2;
    y2.data[n] = 1 - y1.data[n];
  }
  auto a = initial_pseudo_label(u0, img, box, p);
  auto b = a;
  update_pseudo_label(a, ut, y1, img, p, 1);
  update_pseudo_label(b, ut, y2, img, p, 1);
  o.check(a.u_prev == b.u_prev && a.y_current == b.y_current,
          "eta = 1: updates with complementary predictions are bit-identical");

  const auto bundle = make_bundle(0.3125f, 1.75f, 0.0625f);
  o.check(bundle.l_joint == bundle.l_cls + bundle.l_loc + bundle.l_seg &&
              bundle.l_joint == 0.3125f + 1.75f + 0.0625f,
          "joint loss is the exact sum of its terms");
  return o;
}

// --- 7 -----------------------------------------------------------------------

Outcome flops() {
  Outcome o;
  const auto hand = conv_macs(8, 16, 3, {32, 32, 32}) * 2;
  o.check(hand == 2ull * 27 * 8 * 16 * 32 * 32 * 32, fmt("single 3^3 conv 8->16 on 32^3: %llu FLOPs (hand count)",
                                                          static_cast<unsigned long long>(hand)));

  const double d = 3.3;  // catheter diameter, mm
  auto scenario = [&](bool cart, bool roi) {
    NetworkConfig nc = NetworkConfig::paper_profile();
    FlopsOptions fo;
    Shape3 shape{360, 96, 96};
    std::array<double, 3> cross{};
    if (cart) {
      for (auto& c : nc.block_channels) c /= 2;
      nc.decoder_channels /= 2;
      fo.total_stride = 8;
      shape = {360, 360, 336};
      cross = {d / 0.2, d / 0.2, d / 0.2};
    } else {
      const double mid_depth = 0.5 * 360 * 0.2695;
      const double angular = d / mid_depth * 180.0 / std::numbers::pi / 1.003;
      cross = {d / 0.2695, angular, angular};
    }
    std::optional<std::vector<BoundingBox3>> rois;
    if (roi) rois = nominal_catheter_rois(shape, 1, cross, 2);
    return count_flops(nc, shape, rois, fo);
  };
  const auto whole = scenario(false, false), roi = scenario(false, true);
  const auto cwhole = scenario(true, false), croi = scenario(true, true);
  for (const auto& a : whole.assumptions) o.note("assumption: " + a);
  o.note("assumption: ROI mode decodes 2 boxes around a 3.3 mm catheter crossing the azimuth axis");
  o.note("assumption: Cartesian variant halves every filter count and uses total stride 8");
  o.note(fmt("frustum encoder %.1f, head %.2f, decoder %.1f (whole) / %.1f (ROI) GFLOPs",
             whole.encoder_flops * 1e-9, whole.head_flops * 1e-9, whole.decoder_flops * 1e-9,
             roi.decoder_flops * 1e-9));
  o.check(within(whole.gflops(), 5.2, 0.30), fmt("frustum whole %.1f GFLOPs (want 5.2 +- 30%%)", whole.gflops()));
  o.check(within(roi.gflops(), 1.8, 0.30), fmt("frustum ROI %.1f GFLOPs (want 1.8 +- 30%%)", roi.gflops()));
  const double ratio = whole.gflops() / roi.gflops();
  o.check(within(ratio, 2.9, 0.20), fmt("frustum whole / ROI %.2f (want 2.9 +- 20%%)", ratio));
  o.check(within(cwhole.gflops(), 68.2, 0.50), fmt("Cartesian whole %.1f GFLOPs (want 68.2 +- 50%%)", cwhole.gflops()));
  o.check(within(croi.gflops(), 23.9, 0.50), fmt("Cartesian ROI %.1f GFLOPs (want 23.9 +- 50%%)", croi.gflops()));
  o.note(fmt("reported Cartesian / frustum whole is 13.1x; measured %.1fx", cwhole.gflops() / whole.gflops()));
  return o;
}

// --- 8 -----------------------------------------------------------------------

Outcome desk_surrogate() {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const PhantomSpec spec;
  const auto ds = generate_dataset(spec, 35, 42, {20, 5, 10});
  std::vector<TrainSample> train_set, val_set, test_set;
  for (const auto& it : ds.items) {
    TrainSample t{it.id, it.phantom.volume, it.phantom.loose_bbox, it.phantom.ground_truth};
    (it.split == Split::Train ? train_set : it.split == Split::Val ? val_set : test_set).push_back(std::move(t));
  }
  TrainConfig cfg;
  cfg.lr = 1e-3f;
  cfg.phase1_epochs = 12;
  cfg.phase2_epochs = 6;
  cfg.phase3_min = cfg.phase3_max = 10;
  cfg.update_period = 2;
  cfg.seed = 7;
  NetworkConfig nc;
  nc.rng_seed = 7;
  o.note(fmt("%zu / %zu / %zu phantoms at %s, compact profile, %s", train_set.size(), val_set.size(),
             test_set.size(), to_string(spec.shape).c_str(), describe(cfg).c_str()));

  // Phase 1 trains only the classifier and does not see the labels, so the
  // three label modes share it.
  const auto phase1 = train_phase1(train_set, cfg, nc);
  std::map<LabelMode, double> score;
  for (const auto mode : {LabelMode::Weak, LabelMode::Supervised, LabelMode::BboxAsLabel}) {
    cfg.label_mode = mode;
    const auto r = train(train_set, val_set, cfg, nc, &phase1);
    std::vector<VolumeScore> rows;
    for (const auto& t : test_set) {
      const auto out = infer(r.network, t.volume, {cfg.m_rois_test, cfg.tau_loc, 0.5f});
      const auto c = confusion(out.mask, *t.ground_truth);
      rows.push_back({t.id, dsc(c), vs(c)});
    }
    const auto rep = summarize(rows);
    score[mode] = rep.mean_dsc;
    o.note(fmt("%-10s test DSC %.3f +- %.3f, VS %.3f +- %.3f (best epoch %u, val %.3f%s)", to_string(mode),
               rep.mean_dsc, rep.std_dsc, rep.mean_vs, rep.std_vs, r.best_epoch, r.best_val_dice,
               r.diverged ? ", diverged" : ""));
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  const double weak = score[LabelMode::Weak], sup = score[LabelMode::Supervised], bbox = score[LabelMode::BboxAsLabel];
  o.check(weak >= 0.50, fmt("weak pipeline test DSC %.3f >= 0.50", weak));
  o.check(sup >= weak, fmt("supervised %.3f >= weak %.3f", sup, weak));
  o.check(bbox < weak && bbox < sup, fmt("bbox-as-label %.3f strictly lowest", bbox));
  o.check(minutes <= 30.0, fmt("runtime %.1f min <= 30", minutes));
  return o;
}

// --- 9 -----------------------------------------------------------------------

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == fseg::cli::kManifestName) continue;
    std::ifstream f(e.path(), std::ios::binary);
    out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(f), {}};
  }
  return out;
}

Outcome determinism() {
  Outcome o;
  const auto base = fs::temp_directory_path() / "fseg_acceptance_determinism";
  fs::remove_all(base);
  auto pipeline = [&](const fs::path& root) {
    const auto ds = (root / "ds").string();
    const std::vector<std::vector<std::string>> steps{
        {"phantom", "--split", "3,1,2", "--seed", "21", "--out-dir", ds},
        {"convert", "--input", ds + "/phantom_000.frv", "--direction", "f2c", "--out-dir", (root / "cv").string()},
        {"frangi", "--input", ds + "/phantom_000.frv", "--out-dir", (root / "fr").string()},
        {"train", "--data", ds, "--phase1-epochs", "2", "--phase2-epochs", "1", "--phase3-min", "2", "--phase3-max",
         "2", "--update-period", "1", "--lr", "1e-3", "--seed", "9", "--save-labels", "--out-dir",
         (root / "train").string()},
        {"infer", "--checkpoint", (root / "train" / "checkpoint.nwt").string(), "--data", ds, "--out-dir",
         (root / "pred").string()},
        {"eval", "--pred-dir", (root / "pred").string(), "--data", ds, "--out-dir", (root / "eval").string()},
        {"flops", "--profile", "paper", "--out-dir", (root / "flops").string()},
    };
    for (const auto& args : steps) {
      std::ostringstream out, err;
      const int code = fseg::cli::run(args, out, err);
      if (code != 0) {
        o.check(false, fmt("%s exited %d: %s", args[0].c_str(), code, err.str().c_str()));
        return std::map<std::string, std::string>{};
      }
    }
    return tree_bytes(root);
  };
  // Identical command lines: run, snapshot, wipe, run again in the same place.
  const auto a = pipeline(base);
  fs::remove_all(base);
  const auto b = pipeline(base);
  std::size_t same = 0;
  std::string first_diff;
  for (const auto& [name, bytes] : a) {
    const auto it = b.find(name);
    if (it != b.end() && it->second == bytes) ++same;
    else if (first_diff.empty()) first_diff = name;
  }
  const bool ok = !a.empty() && a.size() == b.size() && same == a.size();
  o.check(ok, fmt("phantom, convert, frangi, train, infer, eval, flops repeated: %zu / %zu output files identical%s",
                  same, a.size(), first_diff.empty() ? "" : (" (first difference: " + first_diff + ")").c_str()));
  bool has_ckpt = a.count("train/checkpoint.nwt") && a.count("pred/phantom_004.msk") && a.count("eval/eval.csv");
  o.check(has_ckpt, "comparison covers the checkpoint, predicted masks and the evaluation report");
  fs::remove_all(base);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},  {"metric oracles", metric_oracles},
      {"CRF oracle equivalence", crf_oracle}, {"Frangi sanity", frangi_sanity},
      {"scan-conversion fidelity", scan_conversion}, {"degenerate equation cases", equation_cases},
      {"FLOPs", flops}, {"desk-scale end-to-end surrogate", desk_surrogate},
      {"determinism", determinism},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int n = std::atoi(argv[a]);
    if (n < 1 || n > static_cast<int>(criteria.size())) {
      std::fprintf(stderr, "usage: %s [criterion 1-%zu ...]\n", argv[0], criteria.size());
      return 2;
    }
    selected[n - 1] = true;
  }
  std::vector<std::string> summary;
  bool all = true;
  for (std::size_t c = 0; c < criteria.size(); ++c) {
    if (!selected[c]) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[c].second();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& l : o.lines) std::printf("  [%zu] %s\n", c + 1, l.c_str());
    const auto line = fmt("%s %zu %s (%.1f s)", o.pass ? "PASS" : "FAIL", c + 1, criteria[c].first.c_str(), secs);
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    summary.push_back(line);
    all = all && o.pass;
  }
  std::printf("\nsummary\n");
  for (const auto& l : summary) std::printf("%s\n", l.c_str());
  return all ? 0 : 1;
}
