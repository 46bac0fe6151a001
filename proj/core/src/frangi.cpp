#include "fseg/frangi.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace fseg {

namespace {

constexpr double kRatioEps = 1e-12;
constexpr double kDegenerateL3 = 1e-9;

// Half-sample symmetric reflection: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
std::ptrdiff_t reflect(std::ptrdiff_t x, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * n;
  std::ptrdiff_t m = x % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

std::vector<double> gaussian_kernel(float sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int t = -radius; t <= radius; ++t) {
    k[t + radius] = std::exp(-0.5 * t * t / (static_cast<double>(sigma) * sigma));
    sum += k[t + radius];
  }
  for (auto& v : k) v /= sum;
  return k;
}

FloatGrid convolve_axis(const FloatGrid& in, const std::vector<double>& kernel, int axis) {
  const auto& s = in.shape();
  FloatGrid out(s);
  const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(s[axis]);
  std::vector<double> line(static_cast<std::size_t>(n));
  const std::size_t outer_a = axis == 0 ? s.d1 : s.d0;
  const std::size_t outer_b = axis == 2 ? s.d1 : s.d2;
  for (std::size_t a = 0; a < outer_a; ++a)
    for (std::size_t b = 0; b < outer_b; ++b) {
      auto at = [&](std::size_t t) -> std::size_t {
        if (axis == 0) return in.index(t, a, b);
        if (axis == 1) return in.index(a, t, b);
        return in.index(a, b, t);
      };
      for (std::ptrdiff_t t = 0; t < n; ++t) line[t] = in[at(static_cast<std::size_t>(t))];
      for (std::ptrdiff_t t = 0; t < n; ++t) {
        double acc = 0.0;
        for (std::ptrdiff_t q = -radius; q <= radius; ++q) acc += kernel[q + radius] * line[reflect(t + q, n)];
        out[at(static_cast<std::size_t>(t))] = static_cast<float>(acc);
      }
    }
  return out;
}

}  // namespace

void validate(const VesselnessParams& p) {
  if (p.scales.empty()) throw std::invalid_argument("vesselness: at least one scale is required");
  for (float s : p.scales)
    if (!(s > 0.0f)) throw std::invalid_argument("vesselness: scales must be positive");
  if (!(p.alpha > 0.0f) || !(p.beta > 0.0f)) throw std::invalid_argument("vesselness: alpha and beta must be positive");
  if (p.c && !(*p.c > 0.0f)) throw std::invalid_argument("vesselness: c must be positive");
}

FloatGrid gaussian_smooth(const FloatGrid& vol, float sigma) {
  if (!(sigma > 0.0f)) throw std::invalid_argument("gaussian_smooth: sigma must be positive");
  const auto kernel = gaussian_kernel(sigma);
  return convolve_axis(convolve_axis(convolve_axis(vol, kernel, 0), kernel, 1), kernel, 2);
}

std::array<double, 3> symmetric_eigenvalues(const std::array<double, 6>& m) {
  const double a = m[0], b = m[1], c = m[2], d = m[3], e = m[4], f = m[5];
  const double p1 = d * d + e * e + f * f;
  std::array<double, 3> ev{};
  if (p1 == 0.0) {
    ev = {a, b, c};
  } else {
    // Trigonometric solution of the characteristic cubic.
    const double q = (a + b + c) / 3.0;
    const double p2 = (a - q) * (a - q) + (b - q) * (b - q) + (c - q) * (c - q) + 2.0 * p1;
    const double p = std::sqrt(p2 / 6.0);
    const double ba = (a - q) / p, bb = (b - q) / p, bc = (c - q) / p, bd = d / p, be = e / p, bf = f / p;
    const double det = ba * (bb * bc - bf * bf) - bd * (bd * bc - bf * be) + be * (bd * bf - bb * be);
    const double r = std::clamp(det / 2.0, -1.0, 1.0);
    const double phi = std::acos(r) / 3.0;
    const double e1 = q + 2.0 * p * std::cos(phi);
    const double e3 = q + 2.0 * p * std::cos(phi + 2.0 * std::numbers::pi / 3.0);
    ev = {e1, 3.0 * q - e1 - e3, e3};
  }
  std::sort(ev.begin(), ev.end(), [](double x, double y) { return std::abs(x) < std::abs(y); });
  return ev;
}

HessianEigenvalues hessian_eigen(const FloatGrid& vol, float sigma) {
  const FloatGrid g = gaussian_smooth(vol, sigma);
  const auto& s = g.shape();
  const auto n0 = static_cast<std::ptrdiff_t>(s.d0), n1 = static_cast<std::ptrdiff_t>(s.d1),
             n2 = static_cast<std::ptrdiff_t>(s.d2);
  HessianEigenvalues out{FloatGrid(s), FloatGrid(s), FloatGrid(s)};
  const double norm = static_cast<double>(sigma) * sigma;
  auto v = [&](std::ptrdiff_t i, std::ptrdiff_t j, std::ptrdiff_t k) -> double {
    return g(static_cast<std::size_t>(reflect(i, n0)), static_cast<std::size_t>(reflect(j, n1)),
             static_cast<std::size_t>(reflect(k, n2)));
  };
  for (std::ptrdiff_t i = 0; i < n0; ++i)
    for (std::ptrdiff_t j = 0; j < n1; ++j)
      for (std::ptrdiff_t k = 0; k < n2; ++k) {
        const double c = v(i, j, k);
        const double hxx = v(i + 1, j, k) - 2.0 * c + v(i - 1, j, k);
        const double hyy = v(i, j + 1, k) - 2.0 * c + v(i, j - 1, k);
        const double hzz = v(i, j, k + 1) - 2.0 * c + v(i, j, k - 1);
        const double hxy = 0.25 * (v(i + 1, j + 1, k) - v(i + 1, j - 1, k) - v(i - 1, j + 1, k) + v(i - 1, j - 1, k));
        const double hxz = 0.25 * (v(i + 1, j, k + 1) - v(i + 1, j, k - 1) - v(i - 1, j, k + 1) + v(i - 1, j, k - 1));
        const double hyz = 0.25 * (v(i, j + 1, k + 1) - v(i, j + 1, k - 1) - v(i, j - 1, k + 1) + v(i, j - 1, k - 1));
        const auto ev = symmetric_eigenvalues({hxx * norm, hyy * norm, hzz * norm, hxy * norm, hxz * norm, hyz * norm});
        const auto idx = g.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j), static_cast<std::size_t>(k));
        out.l1[idx] = static_cast<float>(ev[0]);
        out.l2[idx] = static_cast<float>(ev[1]);
        out.l3[idx] = static_cast<float>(ev[2]);
      }
  return out;
}

FloatGrid vesselness(const FloatGrid& vol, const VesselnessParams& params) {
  validate(params);
  FloatGrid best(vol.shape(), 0.0f);
  const double two_a2 = 2.0 * params.alpha * params.alpha;
  const double two_b2 = 2.0 * params.beta * params.beta;
  for (float sigma : params.scales) {
    const HessianEigenvalues h = hessian_eigen(vol, sigma);
    double c = params.c ? *params.c : 0.0;
    if (!params.c) {
      double max_norm = 0.0;
      for (std::size_t n = 0; n < vol.size(); ++n) {
        const double l1 = h.l1[n], l2 = h.l2[n], l3 = h.l3[n];
        max_norm = std::max(max_norm, std::sqrt(l1 * l1 + l2 * l2 + l3 * l3));
      }
      c = 0.5 * max_norm;
    }
    if (!(c > 0.0)) continue;  // flat volume: no structure at this scale
    const double two_c2 = 2.0 * c * c;
    for (std::size_t n = 0; n < vol.size(); ++n) {
      const double l1 = h.l1[n], l2 = h.l2[n], l3 = h.l3[n];
      if (params.bright_on_dark ? (l2 > 0.0 || l3 > 0.0) : (l2 < 0.0 || l3 < 0.0)) continue;
      if (std::abs(l3) < kDegenerateL3) continue;
      const double ra = std::abs(l2) / (std::abs(l3) + kRatioEps);
      const double rb = std::abs(l1) / (std::sqrt(std::abs(l2 * l3)) + kRatioEps);
      const double s2 = l1 * l1 + l2 * l2 + l3 * l3;
      const double v = (1.0 - std::exp(-ra * ra / two_a2)) * std::exp(-rb * rb / two_b2) * (1.0 - std::exp(-s2 / two_c2));
      best[n] = std::max(best[n], static_cast<float>(std::clamp(v, 0.0, 1.0)));
    }
  }
  return best;
}

}  // namespace fseg
