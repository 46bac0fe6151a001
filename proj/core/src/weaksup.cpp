#include "fseg/weaksup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fseg/metrics.hpp"

namespace fseg {

namespace {

void require_same(const Shape3& a, const Shape3& b, const char* what) {
  if (!(a == b)) throw std::invalid_argument(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

FloatGrid crop_grid(const FloatGrid& g, const BoundingBox3& box) {
  FloatGrid out(box.shape());
  for (std::uint32_t i = box.start.i; i < box.end.i; ++i)
    for (std::uint32_t j = box.start.j; j < box.end.j; ++j)
      for (std::uint32_t k = box.start.k; k < box.end.k; ++k)
        out(i - box.start.i, j - box.start.j, k - box.start.k) = g(i, j, k);
  return out;
}

}  // namespace

// --- probability map and pseudo labels --------------------------------------

FloatGrid build_probability_map(const FloatGrid& vesselness, const FloatGrid& cam, const FrustumVolume& image) {
  require_same(vesselness.shape(), image.shape(), "build_probability_map");
  require_same(cam.shape(), image.shape(), "build_probability_map");
  if (!(image.intensity_max > 0.0f)) throw std::invalid_argument("build_probability_map: intensity_max must be > 0");
  FloatGrid u(image.shape());
  for (std::size_t n = 0; n < u.size(); ++n) {
    const float v = vesselness[n];
    const float c = cam[n];
    const float i = image.data[n] / image.intensity_max;
    if (!(v >= 0.0f && v <= 1.0f) || !(c >= 0.0f && c <= 1.0f) || !(i >= 0.0f && i <= 1.0f))
      throw std::invalid_argument("build_probability_map: factor outside [0,1]");
    u[n] = v * c * i;
  }
  return u;
}

void validate(const PseudoLabelParams& p) {
  if (!(p.tau_u > 0.0f && p.tau_u < 1.0f)) throw std::invalid_argument("pseudo labels: tau_u must be in (0,1)");
  if (!(p.eta >= 0.0f && p.eta <= 1.0f)) throw std::invalid_argument("pseudo labels: eta must be in [0,1]");
  validate(p.crf);
}

RefinedLabel refine_in_box(const FloatGrid& prob, const FrustumVolume& image, const BoundingBox3& bbox, float tau_u,
                           const CrfParams& crf) {
  const Shape3& shape = image.shape();
  require_same(prob.shape(), shape, "refine_in_box");
  if (!bbox.valid() || !bbox.within(shape)) throw std::invalid_argument("refine_in_box: bbox outside volume");
  // Voxels farther than the window radius from the bbox cannot influence it.
  const BoundingBox3 crop = dilate(bbox, crf.window_radius_vox, shape);
  FloatGrid p(crop.shape(), 0.0f);
  for (std::uint32_t i = bbox.start.i; i < bbox.end.i; ++i)
    for (std::uint32_t j = bbox.start.j; j < bbox.end.j; ++j)
      for (std::uint32_t k = bbox.start.k; k < bbox.end.k; ++k)
        p(i - crop.start.i, j - crop.start.j, k - crop.start.k) = prob(i, j, k);
  const auto res = mean_field(unary_from_probability(p, tau_u), crop_grid(image.data, crop), crf);

  RefinedLabel out{MaskVolume(shape), false};
  out.mask.step = {image.radial_step_mm, image.azimuth_step_deg, image.elevation_step_deg};
  std::size_t count = 0;
  for (std::uint32_t i = bbox.start.i; i < bbox.end.i; ++i)
    for (std::uint32_t j = bbox.start.j; j < bbox.end.j; ++j)
      for (std::uint32_t k = bbox.start.k; k < bbox.end.k; ++k) {
        const auto m = res.mask.data(i - crop.start.i, j - crop.start.j, k - crop.start.k);
        out.mask.data(i, j, k) = m;
        count += m;
      }
  if (count == 0) {
    out.fallback = true;
    for (std::uint32_t i = bbox.start.i; i < bbox.end.i; ++i)
      for (std::uint32_t j = bbox.start.j; j < bbox.end.j; ++j)
        for (std::uint32_t k = bbox.start.k; k < bbox.end.k; ++k)
          out.mask.data(i, j, k) = prob(i, j, k) >= tau_u ? 1 : 0;
  }
  return out;
}

PseudoLabelState initial_pseudo_label(const FloatGrid& u, const FrustumVolume& image, const BoundingBox3& bbox,
                                      const PseudoLabelParams& params) {
  validate(params);
  PseudoLabelState s;
  s.eta = params.eta;
  s.bbox = bbox;
  auto refined = refine_in_box(u, image, bbox, params.tau_u, params.crf);
  s.y_current = std::move(refined.mask);
  s.fallback = refined.fallback;
  s.u_prev = FloatGrid(u.shape(), 0.0f);
  for (std::uint32_t i = bbox.start.i; i < bbox.end.i; ++i)
    for (std::uint32_t j = bbox.start.j; j < bbox.end.j; ++j)
      for (std::uint32_t k = bbox.start.k; k < bbox.end.k; ++k) s.u_prev(i, j, k) = u(i, j, k);
  return s;
}

FloatGrid blend_probability(const FloatGrid& u_prev, const FloatGrid& u_t, const MaskVolume& y_hat, float eta) {
  require_same(u_prev.shape(), u_t.shape(), "blend_probability");
  require_same(u_prev.shape(), y_hat.shape(), "blend_probability");
  FloatGrid b(u_prev.shape());
  const float keep = 1.0f - eta;
  for (std::size_t n = 0; n < b.size(); ++n)
    b[n] = eta * u_prev[n] + keep * (y_hat.data[n] != 0 ? u_t[n] : 0.0f);
  return b;
}

const MaskVolume& update_pseudo_label(PseudoLabelState& state, const FloatGrid& u_t, const MaskVolume& y_hat,
                                      const FrustumVolume& image, const PseudoLabelParams& params,
                                      std::uint32_t epoch) {
  if (state.u_prev.empty()) throw std::logic_error("update_pseudo_label: state not initialized");
  require_same(u_t.shape(), image.shape(), "update_pseudo_label");
  auto b = blend_probability(state.u_prev, u_t, y_hat, state.eta);
  auto refined = refine_in_box(b, image, state.bbox, params.tau_u, params.crf);
  state.u_prev = std::move(b);
  state.y_current = std::move(refined.mask);
  state.fallback = refined.fallback;
  state.epoch_of_last_update = epoch;
  return state.y_current;
}

// --- region sampling --------------------------------------------------------

std::vector<SampledRegion> sample_regions(const BoundingBox3& bbox, const Shape3& shape, std::uint32_t n,
                                          std::mt19937_64& rng) {
  if (!bbox.valid() || !bbox.within(shape)) throw std::invalid_argument("sample_regions: bbox outside volume");
  if (n == 0) throw std::invalid_argument("sample_regions: n must be >= 1");
  std::array<std::uint32_t, 3> size{};
  for (int ax = 0; ax < 3; ++ax) {
    const auto ext = static_cast<std::uint32_t>(shape[ax]);
    size[static_cast<std::size_t>(ax)] = std::min(std::max(bbox.extent(ax), kMinRegionExtent), ext);
  }
  auto uniform = [&rng](std::int64_t lo, std::int64_t hi) {
    return static_cast<std::uint32_t>(std::uniform_int_distribution<std::int64_t>(lo, hi)(rng));
  };

  // Negative placements: per axis, a range of starts that keeps the region
  // entirely before or after the bbox.
  struct Slot {
    int axis;
    std::int64_t lo, hi;
  };
  std::vector<Slot> slots;
  for (int ax = 0; ax < 3; ++ax) {
    const std::int64_t s = size[static_cast<std::size_t>(ax)];
    const std::int64_t ext = static_cast<std::int64_t>(shape[ax]);
    if (bbox.start[ax] >= s) slots.push_back({ax, 0, bbox.start[ax] - s});
    if (ext - bbox.end[ax] >= s) slots.push_back({ax, bbox.end[ax], ext - s});
  }
  if (slots.empty()) throw std::invalid_argument("sample_regions: bbox leaves no room for a negative region");

  std::vector<SampledRegion> out;
  out.reserve(2 * std::size_t{n});
  for (std::uint32_t r = 0; r < n; ++r) {
    SampledRegion p{{}, true};
    for (int ax = 0; ax < 3; ++ax) {
      const std::int64_t s = size[static_cast<std::size_t>(ax)];
      const std::int64_t ext = static_cast<std::int64_t>(shape[ax]);
      const std::int64_t lo = std::max<std::int64_t>(0, std::int64_t{bbox.start[ax]} - s + 1);
      const std::int64_t hi = std::min<std::int64_t>(ext - s, std::int64_t{bbox.end[ax]} - 1);
      const std::int64_t centred = std::clamp<std::int64_t>(bbox.start[ax] + (bbox.extent(ax) - s) / 2, lo, hi);
      const std::int64_t jitter = std::max<std::int64_t>(1, s / 4);
      const auto start = uniform(std::max(lo, centred - jitter), std::min(hi, centred + jitter));
      p.box.start.at(ax) = start;
      p.box.end.at(ax) = start + static_cast<std::uint32_t>(s);
    }
    out.push_back(p);
  }
  for (std::uint32_t r = 0; r < n; ++r) {
    SampledRegion q{{}, false};
    const Slot& slot = slots[uniform(0, static_cast<std::int64_t>(slots.size()) - 1)];
    for (int ax = 0; ax < 3; ++ax) {
      const std::int64_t s = size[static_cast<std::size_t>(ax)];
      const auto start = ax == slot.axis ? uniform(slot.lo, slot.hi) : uniform(0, std::int64_t(shape[ax]) - s);
      q.box.start.at(ax) = start;
      q.box.end.at(ax) = start + static_cast<std::uint32_t>(s);
    }
    out.push_back(q);
  }
  return out;
}

// --- losses -----------------------------------------------------------------

template <typename T>
T loss_cls(const std::array<T, 2>& logits, std::size_t label, std::array<T, 2>* dlogits) {
  if (label > 1) throw std::invalid_argument("loss_cls: label must be 0 or 1");
  const double a = logits[0], b = logits[1];
  const double m = std::max(a, b);
  const double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
  if (dlogits != nullptr) {
    (*dlogits)[0] = static_cast<T>(std::exp(a - lse) - (label == 0 ? 1.0 : 0.0));
    (*dlogits)[1] = static_cast<T>(std::exp(b - lse) - (label == 1 ? 1.0 : 0.0));
  }
  return static_cast<T>(lse - (label == 0 ? a : b));
}

namespace {

template <typename T>
void check_loss_shapes(const Tensor<T>& prob, const Tensor<T>& target, const char* what) {
  if (!prob.same_shape(target)) throw std::invalid_argument(std::string(what) + ": shape mismatch");
  if (prob.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
}

// Clamped probability and the derivative of the clamp.
inline std::pair<double, double> clamped(double p) {
  if (p < kProbClamp) return {kProbClamp, 0.0};
  if (p > 1.0 - kProbClamp) return {1.0 - kProbClamp, 0.0};
  return {p, 1.0};
}

}  // namespace

template <typename T>
T loss_loc(const Tensor<T>& prob, const Tensor<T>& target, T pos_weight, Tensor<T>* dprob) {
  check_loss_shapes(prob, target, "loss_loc");
  const double w = pos_weight;
  const double inv_n = 1.0 / static_cast<double>(prob.size());
  if (dprob != nullptr) *dprob = Tensor<T>(prob.c, prob.d, prob.h, prob.w);
  double sum = 0.0;
  for (std::size_t n = 0; n < prob.size(); ++n) {
    const auto [p, live] = clamped(prob.v[n]);
    const double t = target.v[n];
    sum -= w * t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    if (dprob != nullptr) dprob->v[n] = static_cast<T>(-live * (w * t / p - (1.0 - t) / (1.0 - p)) * inv_n);
  }
  return static_cast<T>(sum * inv_n);
}

template <typename T>
T loss_seg(const Tensor<T>& prob, const Tensor<T>& target, Tensor<T>* dprob) {
  check_loss_shapes(prob, target, "loss_seg");
  const double inv_n = 1.0 / static_cast<double>(prob.size());
  double spt = 0.0, sp = 0.0, st = 0.0, bce = 0.0;
  for (std::size_t n = 0; n < prob.size(); ++n) {
    const double p = prob.v[n], t = target.v[n];
    spt += p * t;
    sp += p;
    st += t;
    const double pc = clamped(p).first;
    bce -= t * std::log(pc) + (1.0 - t) * std::log(1.0 - pc);
  }
  const double num = 2.0 * spt + kDiceSmooth;
  const double den = sp + st + kDiceSmooth;
  if (dprob != nullptr) {
    *dprob = Tensor<T>(prob.c, prob.d, prob.h, prob.w);
    for (std::size_t n = 0; n < prob.size(); ++n) {
      const double t = target.v[n];
      const auto [p, live] = clamped(prob.v[n]);
      const double ddice = (2.0 * t * den - num) / (den * den);
      const double dbce = -live * (t / p - (1.0 - t) / (1.0 - p)) * inv_n;
      dprob->v[n] = static_cast<T>(-ddice + dbce);
    }
  }
  return static_cast<T>(1.0 - num / den + bce * inv_n);
}

#define FSEG_INSTANTIATE_LOSSES(T)                                                          \
  template T loss_cls<T>(const std::array<T, 2>&, std::size_t, std::array<T, 2>*);         \
  template T loss_loc<T>(const Tensor<T>&, const Tensor<T>&, T, Tensor<T>*);                \
  template T loss_seg<T>(const Tensor<T>&, const Tensor<T>&, Tensor<T>*);

FSEG_INSTANTIATE_LOSSES(float)
FSEG_INSTANTIATE_LOSSES(double)
#undef FSEG_INSTANTIATE_LOSSES

LossBundle make_bundle(float l_cls, float l_loc, float l_seg) {
  LossBundle b{l_cls, l_loc, l_seg, l_cls + l_loc + l_seg};
  const bool finite = std::isfinite(b.l_joint);
  if (finite && (b.l_cls < 0.0f || b.l_loc < 0.0f || b.l_seg < 0.0f))
    throw std::logic_error("loss bundle: negative component");
  if (finite && b.l_joint != b.l_cls + b.l_loc + b.l_seg) throw std::logic_error("loss bundle: not additive");
  return b;
}

Tensor<float> pool_mask4(const MaskVolume& mask) {
  const Shape3& s = mask.shape();
  const Shape3 f = feature_shape(s);
  Tensor<float> out(1, f, 0.0f);
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k)
        if (mask.data(i, j, k) != 0) out(0, i / kTotalStride, j / kTotalStride, k / kTotalStride) = 1.0f;
  return out;
}

// --- optimizer --------------------------------------------------------------

Amsgrad::Amsgrad(const Weights<float>& shape_like, AmsgradParams p) : p_(p) {
  if (!(p.lr > 0.0f)) throw std::invalid_argument("Amsgrad: lr must be > 0");
  shape_like.visit([&](const std::string&, const std::vector<float>& v) {
    m_.emplace_back(v.size(), 0.0f);
    v_.emplace_back(v.size(), 0.0f);
    vmax_.emplace_back(v.size(), 0.0f);
  });
}

void Amsgrad::step(Weights<float>& w, const Weights<float>& g) {
  ++t_;
  const double bc1 = 1.0 - std::pow(static_cast<double>(p_.beta1), static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(static_cast<double>(p_.beta2), static_cast<double>(t_));
  const auto step_size = static_cast<float>(p_.lr / bc1);
  const auto sqrt_bc2 = static_cast<float>(std::sqrt(bc2));
  std::vector<const std::vector<float>*> grads;
  g.visit([&](const std::string&, const std::vector<float>& v) { grads.push_back(&v); });
  std::size_t idx = 0;
  w.visit([&](const std::string&, std::vector<float>& param) {
    const auto& gr = *grads.at(idx);
    auto& m = m_.at(idx);
    auto& v = v_[idx];
    auto& vmax = vmax_[idx];
    ++idx;
    if (gr.size() != param.size() || m.size() != param.size())
      throw std::invalid_argument("Amsgrad: parameter shapes changed");
    for (std::size_t n = 0; n < param.size(); ++n) {
      m[n] = p_.beta1 * m[n] + (1.0f - p_.beta1) * gr[n];
      v[n] = p_.beta2 * v[n] + (1.0f - p_.beta2) * gr[n] * gr[n];
      vmax[n] = std::max(vmax[n], v[n]);
      param[n] -= step_size * m[n] / (std::sqrt(vmax[n]) / sqrt_bc2 + p_.eps);
    }
  });
}

// --- inference --------------------------------------------------------------

Tensor<float> network_input(const FrustumVolume& v) {
  return tensor_from_grid<float>(v.data, 1.0 / static_cast<double>(v.intensity_max));
}

InferResult decode_rois(const Network<float>& net, const Encoding<float>& enc, const std::vector<BoundingBox3>& rois,
                        float threshold) {
  const Shape3& shape = enc.input_shape;
  InferResult r;
  r.prob = FloatGrid(shape, 0.0f);
  r.mask = MaskVolume(shape);
  r.rois = rois;
  for (const auto& roi : rois) {
    const auto dec = net.decode_roi(enc, roi);
    for (std::uint32_t i = roi.start.i; i < roi.end.i; ++i)
      for (std::uint32_t j = roi.start.j; j < roi.end.j; ++j)
        for (std::uint32_t k = roi.start.k; k < roi.end.k; ++k) {
          float& p = r.prob(i, j, k);
          p = std::max(p, dec.prob(0, i - roi.start.i, j - roi.start.j, k - roi.start.k));
        }
  }
  for (std::size_t n = 0; n < r.prob.size(); ++n) r.mask.data[n] = r.prob[n] >= threshold ? 1 : 0;
  return r;
}

InferResult infer_encoded(const Network<float>& net, const Encoding<float>& enc, const InferConfig& cfg) {
  const Shape3& shape = enc.input_shape;
  auto rois = extract_rois(grid_from_channel(net.localize(enc.b5())), cfg.tau_loc, cfg.m_rois, shape);
  const bool fallback = rois.empty();
  if (fallback)
    rois.push_back({{0, 0, 0},
                    {static_cast<std::uint32_t>(shape.d0), static_cast<std::uint32_t>(shape.d1),
                     static_cast<std::uint32_t>(shape.d2)}});
  auto r = decode_rois(net, enc, rois, cfg.threshold);
  r.whole_volume_fallback = fallback;
  return r;
}

InferResult infer(const Network<float>& net, const FrustumVolume& volume, const InferConfig& cfg) {
  auto r = infer_encoded(net, net.encode(network_input(volume)), cfg);
  r.mask.step = {volume.radial_step_mm, volume.azimuth_step_deg, volume.elevation_step_deg};
  return r;
}

}  // namespace fseg
