#include "fseg/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>

namespace fseg {

NetworkConfig NetworkConfig::paper_profile() {
  NetworkConfig c;
  c.block_channels = {64, 64, 128, 256, 512};
  c.decoder_channels = 64;
  return c;
}

void validate(const NetworkConfig& cfg) {
  if (cfg.norm_groups == 0) throw std::invalid_argument("network: norm_groups must be >= 1");
  for (auto c : cfg.block_channels) {
    if (c == 0) throw std::invalid_argument("network: block channels must be positive");
    if (c % cfg.norm_groups != 0) throw std::invalid_argument("network: block channels must divide into norm groups");
  }
  if (cfg.decoder_channels == 0) throw std::invalid_argument("network: decoder_channels must be positive");
}

std::string describe(const NetworkConfig& cfg) {
  std::ostringstream os;
  os << "channels=" << cfg.block_channels[0];
  for (std::size_t i = 1; i < 5; ++i) os << ',' << cfg.block_channels[i];
  os << " decoder=" << cfg.decoder_channels << " groups=" << cfg.norm_groups << " seed=" << cfg.rng_seed;
  return os.str();
}

template <typename T>
Weights<T> Weights<T>::shaped(const NetworkConfig& cfg) {
  validate(cfg);
  Weights<T> w;
  const auto& ch = cfg.block_channels;
  std::size_t in = 1;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t out = ch[i];
    w.blocks[i].conv1 = nn::ConvWeights<T>(in, out, 3, i == 1 ? 2 : 1);
    w.blocks[i].norm1 = nn::GroupNormWeights<T>(out, cfg.norm_groups);
    w.blocks[i].conv2 = nn::ConvWeights<T>(out, out, 3, 1);
    w.blocks[i].norm2 = nn::GroupNormWeights<T>(out, cfg.norm_groups);
    in = out;
  }
  const std::size_t c1 = ch[0], c3 = ch[2], c5 = ch[4], dc = cfg.decoder_channels;
  w.fc_w.assign(2 * c5, T{});
  w.fc_b.assign(2, T{});
  w.loc = nn::ConvWeights<T>(c5, 1, 1);
  w.dec5 = nn::ConvWeights<T>(c5, dc, 3);
  w.dec3 = nn::ConvWeights<T>(dc + c3, dc, 3);
  w.dec_up = nn::ConvWeights<T>(dc, dc, 3);
  w.dec1 = nn::ConvWeights<T>(dc + c1, dc, 3);
  w.dec_out = nn::ConvWeights<T>(dc, 1, 1);
  return w;
}

template <typename T>
std::size_t Weights<T>::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const std::vector<T>& v) { n += v.size(); });
  return n;
}

template <typename T>
PyramidGrad<T> zero_pyramid_grad(const Encoding<T>& enc) {
  PyramidGrad<T> g;
  const auto& b1 = enc.b1();
  const auto& b3 = enc.b3();
  const auto& b5 = enc.b5();
  g.b1 = Tensor<T>(b1.c, b1.d, b1.h, b1.w);
  g.b3 = Tensor<T>(b3.c, b3.d, b3.h, b3.w);
  g.b5 = Tensor<T>(b5.c, b5.d, b5.h, b5.w);
  return g;
}

Shape3 feature_shape(const Shape3& input) {
  auto f = [](std::size_t n) { return (n + kTotalStride - 1) / kTotalStride; };
  return {f(input.d0), f(input.d1), f(input.d2)};
}

BoundingBox3 align_roi(const BoundingBox3& roi, const Shape3& input) {
  if (!roi.valid() || !roi.within(input)) throw std::invalid_argument("align_roi: roi outside input");
  BoundingBox3 a;
  const auto S = static_cast<std::uint32_t>(kTotalStride);
  for (int ax = 0; ax < 3; ++ax) {
    const auto n = static_cast<std::uint32_t>(input[ax]);
    if (n < S) throw std::invalid_argument("align_roi: input extent below stride");
    const std::uint32_t s = std::min(roi.start[ax], n - S) / S * S;
    std::uint32_t e = (roi.end[ax] + S - 1) / S * S;
    e = std::min(std::max(e, s + S), n);
    a.start.at(ax) = s;
    a.end.at(ax) = e;
  }
  return a;
}

BoundingBox3 feature_box(const BoundingBox3& aligned) {
  BoundingBox3 f;
  const auto S = static_cast<std::uint32_t>(kTotalStride);
  for (int ax = 0; ax < 3; ++ax) {
    f.start.at(ax) = aligned.start[ax] / S;
    f.end.at(ax) = (aligned.end[ax] + S - 1) / S;
  }
  return f;
}

BoundingBox3 region_to_feature(const BoundingBox3& region, const Shape3& input) {
  if (!region.valid() || !region.within(input)) throw std::invalid_argument("region_to_feature: region outside input");
  const Shape3 fs = feature_shape(input);
  BoundingBox3 f;
  const auto S = static_cast<std::uint32_t>(kTotalStride);
  for (int ax = 0; ax < 3; ++ax) {
    f.start.at(ax) = std::min(region.start[ax] / S, static_cast<std::uint32_t>(fs[ax] - 1));
    f.end.at(ax) = std::max(f.start[ax] + 1, std::min((region.end[ax] + S - 1) / S, static_cast<std::uint32_t>(fs[ax])));
  }
  return f;
}

template <typename T>
Network<T>::Network(const NetworkConfig& cfg) : cfg_(cfg), w_(Weights<T>::shaped(cfg)), g_(Weights<T>::shaped(cfg)) {
  std::mt19937_64 rng(cfg.rng_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto fill = [&](std::vector<T>& v, double stddev) {
    for (auto& e : v) e = static_cast<T>(normal(rng) * stddev);
  };
  auto he = [&](nn::ConvWeights<T>& c) {
    fill(c.w, std::sqrt(2.0 / static_cast<double>(c.cin * c.k * c.k * c.k)));
  };
  for (auto& b : w_.blocks) {
    he(b.conv1);
    he(b.conv2);
  }
  const double c5 = cfg.block_channels[4];
  fill(w_.fc_w, std::sqrt(1.0 / c5));
  fill(w_.loc.w, std::sqrt(1.0 / c5));
  he(w_.dec5);
  he(w_.dec3);
  he(w_.dec_up);
  he(w_.dec1);
  fill(w_.dec_out.w, std::sqrt(1.0 / static_cast<double>(cfg.decoder_channels)));
}

template <typename T>
void Network<T>::zero_grad() {
  g_.visit([](const std::string&, std::vector<T>& v) { std::fill(v.begin(), v.end(), T{}); });
}

template <typename T>
Encoding<T> Network<T>::encode(const Tensor<T>& input) const {
  if (input.c != 1) throw std::invalid_argument("encode: input must have one channel");
  if (input.d < kMinInputExtent || input.h < kMinInputExtent || input.w < kMinInputExtent)
    throw std::invalid_argument("encode: every input axis must be >= 16");
  Encoding<T> enc;
  enc.input_shape = input.spatial_shape();
  const Tensor<T>* prev = &input;
  for (std::size_t i = 0; i < 5; ++i) {
    const auto& bw = w_.blocks[i];
    auto& t = enc.blocks[i];
    t.input = (i == 1) ? nn::maxpool2(*prev, t.pool_argmax) : *prev;
    t.a1 = nn::relu(nn::group_norm(nn::conv3d(t.input, bw.conv1), bw.norm1, t.norm1));
    auto s = nn::group_norm(nn::conv3d(t.a1, bw.conv2), bw.norm2, t.norm2);
    t.skip_from_input = bw.conv1.cin == bw.conv1.cout && bw.conv1.stride == 1;
    nn::add_inplace(s, t.skip_from_input ? t.input : t.a1);
    t.out = nn::relu(s);
    prev = &t.out;
  }
  return enc;
}

template <typename T>
void Network<T>::encode_backward(const Encoding<T>& enc, const PyramidGrad<T>& grad) {
  if (enc.empty()) throw std::logic_error("encode_backward: no forward pass cached");
  Tensor<T> dout(enc.b5().c, enc.b5().d, enc.b5().h, enc.b5().w);
  for (std::size_t step = 0; step < 5; ++step) {
    const std::size_t i = 4 - step;
    const Tensor<T>* ext = i == 4 ? &grad.b5 : (i == 2 ? &grad.b3 : (i == 0 ? &grad.b1 : nullptr));
    if (ext != nullptr && !ext->empty()) nn::add_inplace(dout, *ext);
    const auto& t = enc.blocks[i];
    const auto& bw = w_.blocks[i];
    auto& bg = g_.blocks[i];
    const auto ds = nn::relu_backward(t.out, dout);
    const auto dz2 = nn::group_norm_backward(ds, bw.norm2, t.norm2, bg.norm2);
    auto da1 = nn::conv3d_backward(t.a1, dz2, bw.conv2, bg.conv2);
    if (!t.skip_from_input) nn::add_inplace(da1, ds);
    const auto dz1 = nn::group_norm_backward(nn::relu_backward(t.a1, da1), bw.norm1, t.norm1, bg.norm1);
    auto dx = nn::conv3d_backward(t.input, dz1, bw.conv1, bg.conv1);
    if (t.skip_from_input) nn::add_inplace(dx, ds);
    if (i == 0) break;
    dout = (i == 1) ? nn::maxpool2_backward(dx, t.pool_argmax, enc.blocks[0].out) : std::move(dx);
  }
}

template <typename T>
std::array<T, 2> Network<T>::classify_region(const Tensor<T>& b5, const BoundingBox3& region) const {
  if (region.volume() == 0) throw std::invalid_argument("classify_region: empty region");
  const auto logits = nn::linear(nn::gap(b5, region), w_.fc_w, w_.fc_b);
  return {logits[0], logits[1]};
}

template <typename T>
void Network<T>::classify_region_backward(const Tensor<T>& b5, const BoundingBox3& region,
                                          const std::array<T, 2>& dlogits, Tensor<T>& d_b5) {
  const auto pooled = nn::gap(b5, region);
  const auto dpooled = nn::linear_backward(pooled, std::vector<T>{dlogits[0], dlogits[1]}, w_.fc_w, g_.fc_w, g_.fc_b);
  nn::gap_backward(dpooled, region, d_b5);
}

template <typename T>
Tensor<T> Network<T>::localize(const Tensor<T>& b5) const {
  return nn::sigmoid(nn::conv3d(b5, w_.loc));
}

template <typename T>
void Network<T>::localize_backward(const Tensor<T>& b5, const Tensor<T>& prob, const Tensor<T>& dprob,
                                   Tensor<T>& d_b5) {
  nn::add_inplace(d_b5, nn::conv3d_backward(b5, nn::sigmoid_backward(prob, dprob), w_.loc, g_.loc));
}

namespace {

BoundingBox3 relative_box(const BoundingBox3& inner, const BoundingBox3& outer) {
  BoundingBox3 r;
  for (int ax = 0; ax < 3; ++ax) {
    r.start.at(ax) = inner.start[ax] - outer.start[ax];
    r.end.at(ax) = inner.end[ax] - outer.start[ax];
  }
  return r;
}

BoundingBox3 origin_box(const Shape3& s) {
  return {{0, 0, 0},
          {static_cast<std::uint32_t>(s.d0), static_cast<std::uint32_t>(s.d1), static_cast<std::uint32_t>(s.d2)}};
}

}  // namespace

template <typename T>
RoiDecoding<T> Network<T>::decode_roi(const Encoding<T>& enc, const BoundingBox3& roi) const {
  if (enc.empty()) throw std::logic_error("decode_roi: no encoding");
  RoiDecoding<T> r;
  r.roi = roi;
  r.aligned = align_roi(roi, enc.input_shape);
  r.feature = feature_box(r.aligned);
  r.f5 = nn::crop(enc.b5(), r.feature);
  r.a = nn::relu(nn::conv3d(r.f5, w_.dec5));
  // B3 and B5 share the stride-4 grid, so the first "upsampling" is the identity.
  r.cat3 = nn::concat(r.a, nn::crop(enc.b3(), r.feature));
  r.b = nn::relu(nn::conv3d(r.cat3, w_.dec3));
  const auto up = nn::upsample_trilinear(r.b, kTotalStride);
  r.upsampled = up.spatial_shape();
  r.u = nn::crop(up, origin_box(r.aligned.shape()));
  r.c = nn::relu(nn::conv3d(r.u, w_.dec_up));
  r.cat1 = nn::concat(r.c, nn::crop(enc.b1(), r.aligned));
  r.e = nn::relu(nn::conv3d(r.cat1, w_.dec1));
  r.p = nn::sigmoid(nn::conv3d(r.e, w_.dec_out));
  r.prob = nn::crop(r.p, relative_box(roi, r.aligned));
  return r;
}

template <typename T>
void Network<T>::decode_roi_backward(const Encoding<T>& enc, const RoiDecoding<T>& r, const Tensor<T>& dprob,
                                     PyramidGrad<T>& grad) {
  if (r.p.empty()) throw std::logic_error("decode_roi_backward: no decode cached");
  Tensor<T> dp(1, r.p.d, r.p.h, r.p.w);
  nn::crop_backward(dprob, relative_box(r.roi, r.aligned), dp);
  const auto de = nn::conv3d_backward(r.e, nn::sigmoid_backward(r.p, dp), w_.dec_out, g_.dec_out);
  const auto dcat1 = nn::conv3d_backward(r.cat1, nn::relu_backward(r.e, de), w_.dec1, g_.dec1);
  Tensor<T> dc, df1;
  nn::concat_backward(dcat1, r.c.c, dc, df1);
  const auto du = nn::conv3d_backward(r.u, nn::relu_backward(r.c, dc), w_.dec_up, g_.dec_up);
  Tensor<T> dup(du.c, r.upsampled);
  nn::crop_backward(du, origin_box(r.aligned.shape()), dup);
  const auto db = nn::upsample_trilinear_backward(dup, kTotalStride);
  const auto dcat3 = nn::conv3d_backward(r.cat3, nn::relu_backward(r.b, db), w_.dec3, g_.dec3);
  Tensor<T> da, df3;
  nn::concat_backward(dcat3, r.a.c, da, df3);
  const auto df5 = nn::conv3d_backward(r.f5, nn::relu_backward(r.a, da), w_.dec5, g_.dec5);
  if (grad.b5.empty()) grad = zero_pyramid_grad(enc);
  nn::crop_backward(df5, r.feature, grad.b5);
  nn::crop_backward(df3, r.feature, grad.b3);
  nn::crop_backward(df1, r.aligned, grad.b1);
}

template <typename T>
CamMap compute_cam(const Tensor<T>& b5, const std::vector<T>& fc_w, std::size_t cls) {
  if (cls > 1 || fc_w.size() != 2 * b5.c) throw std::invalid_argument("compute_cam: fc weights do not match B5");
  CamMap cam{FloatGrid(b5.spatial_shape())};
  const std::size_t S = b5.spatial();
  std::vector<double> acc(S, 0.0);
  for (std::size_t ch = 0; ch < b5.c; ++ch) {
    const double w = static_cast<double>(fc_w[cls * b5.c + ch]);
    const T* f = b5.channel(ch);
    for (std::size_t n = 0; n < S; ++n) acc[n] += w * static_cast<double>(f[n]);
  }
  const auto [lo, hi] = std::minmax_element(acc.begin(), acc.end());
  const double range = S ? *hi - *lo : 0.0;
  if (!(range > 0.0)) return cam;
  for (std::size_t n = 0; n < S; ++n) cam.data[n] = static_cast<float>((acc[n] - *lo) / range);
  return cam;
}

FloatGrid upsample_cam(const CamMap& cam, const Shape3& input) {
  const auto up = nn::upsample_trilinear(tensor_from_grid<float>(cam.data), kTotalStride);
  if (up.d < input.d0 || up.h < input.d1 || up.w < input.d2)
    throw std::invalid_argument("upsample_cam: CAM smaller than input / 4");
  FloatGrid out(input);
  for (std::size_t i = 0; i < input.d0; ++i)
    for (std::size_t j = 0; j < input.d1; ++j)
      for (std::size_t k = 0; k < input.d2; ++k) out(i, j, k) = std::clamp(up(0, i, j, k), 0.0f, 1.0f);
  return out;
}

Components connected_components(const ByteGrid& mask) {
  const auto& s = mask.shape();
  Components cc{Grid3<std::uint32_t>(s, 0), 0};
  std::vector<std::size_t> stack;
  const auto n0 = static_cast<std::ptrdiff_t>(s.d0), n1 = static_cast<std::ptrdiff_t>(s.d1),
             n2 = static_cast<std::ptrdiff_t>(s.d2);
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || cc.labels[seed]) continue;
    const std::uint32_t label = ++cc.count;
    cc.labels[seed] = label;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      const auto i = static_cast<std::ptrdiff_t>(v / (s.d1 * s.d2));
      const auto j = static_cast<std::ptrdiff_t>((v / s.d2) % s.d1);
      const auto k = static_cast<std::ptrdiff_t>(v % s.d2);
      for (std::ptrdiff_t di = -1; di <= 1; ++di)
        for (std::ptrdiff_t dj = -1; dj <= 1; ++dj)
          for (std::ptrdiff_t dk = -1; dk <= 1; ++dk) {
            const std::ptrdiff_t a = i + di, b = j + dj, c = k + dk;
            if (a < 0 || a >= n0 || b < 0 || b >= n1 || c < 0 || c >= n2) continue;
            const std::size_t u = mask.index(static_cast<std::size_t>(a), static_cast<std::size_t>(b),
                                             static_cast<std::size_t>(c));
            if (mask[u] && !cc.labels[u]) {
              cc.labels[u] = label;
              stack.push_back(u);
            }
          }
    }
  }
  return cc;
}

std::vector<BoundingBox3> extract_rois(const FloatGrid& loc_map, float tau_loc, std::uint32_t max_rois,
                                       const Shape3& input, std::uint32_t margin) {
  if (!(feature_shape(input) == loc_map.shape()))
    throw std::invalid_argument("extract_rois: localization map is not the stride-4 grid of the input");
  ByteGrid above(loc_map.shape(), 0);
  for (std::size_t n = 0; n < loc_map.size(); ++n) above[n] = loc_map[n] >= tau_loc ? 1 : 0;
  const auto cc = connected_components(above);
  struct Comp {
    double mass = 0.0;
    BoundingBox3 box{{~0u, ~0u, ~0u}, {0, 0, 0}};
    std::uint32_t label = 0;
  };
  std::vector<Comp> comps(cc.count);
  const auto& s = loc_map.shape();
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k) {
        const std::uint32_t l = cc.labels(i, j, k);
        if (!l) continue;
        auto& c = comps[l - 1];
        c.label = l;
        c.mass += loc_map(i, j, k);
        const std::array<std::uint32_t, 3> p{static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(j),
                                             static_cast<std::uint32_t>(k)};
        for (int ax = 0; ax < 3; ++ax) {
          c.box.start.at(ax) = std::min(c.box.start[ax], p[static_cast<std::size_t>(ax)]);
          c.box.end.at(ax) = std::max(c.box.end[ax], p[static_cast<std::size_t>(ax)] + 1);
        }
      }
  std::stable_sort(comps.begin(), comps.end(), [](const Comp& a, const Comp& b) { return a.mass > b.mass; });
  std::vector<BoundingBox3> out;
  const auto S = static_cast<std::uint32_t>(kTotalStride);
  for (const auto& c : comps) {
    if (out.size() >= max_rois) break;
    BoundingBox3 b;
    for (int ax = 0; ax < 3; ++ax) {
      b.start.at(ax) = c.box.start[ax] * S;
      b.end.at(ax) = std::min(c.box.end[ax] * S, static_cast<std::uint32_t>(input[ax]));
    }
    out.push_back(dilate(b, margin, input));
  }
  return out;
}

// ---- checkpoint ----

namespace {

constexpr char kCheckpointMagic[4] = {'N', 'W', 'T', '1'};

struct ByteWriter {
  std::vector<std::uint8_t> out;
  void u32(std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((v >> (8 * b)) & 0xffu));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
};

struct ByteReader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (in.size() - pos < n) throw CheckpointError("checkpoint truncated");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{in[pos++]} << (8 * b);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t{in[pos++]} << (8 * b);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in.data() + pos), n);
    pos += n;
    return s;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net) {
  ByteWriter w;
  w.bytes(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  const auto& cfg = net.config();
  for (auto c : cfg.block_channels) w.u32(c);
  w.u32(cfg.decoder_channels);
  w.u32(cfg.norm_groups);
  w.u64(cfg.rng_seed);
  std::uint32_t count = 0;
  net.weights().visit([&](const std::string&, const std::vector<float>&) { ++count; });
  w.u32(count);
  net.weights().visit([&](const std::string& name, const std::vector<float>& v) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u64(v.size());
    for (float x : v) {
      if (!std::isfinite(x)) throw CheckpointError("non-finite parameter in " + name);
      w.f32(x);
    }
  });
  return std::move(w.out);
}

Network<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r{bytes};
  if (r.str(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError("bad checkpoint magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  NetworkConfig cfg;
  for (auto& c : cfg.block_channels) c = r.u32();
  cfg.decoder_channels = r.u32();
  cfg.norm_groups = r.u32();
  cfg.rng_seed = r.u64();
  try {
    validate(cfg);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  Network<float> net(cfg);
  std::uint32_t expected = 0;
  net.weights().visit([&](const std::string&, const std::vector<float>&) { ++expected; });
  if (r.u32() != expected) throw CheckpointError("checkpoint parameter count mismatch");
  net.weights().visit([&](const std::string& name, std::vector<float>& v) {
    const auto len = r.u32();
    const auto got = r.str(len);
    if (got != name) throw CheckpointError("checkpoint parameter '" + got + "' where '" + name + "' expected");
    if (r.u64() != v.size()) throw CheckpointError("checkpoint size mismatch for " + name);
    for (auto& x : v) {
      x = r.f32();
      if (!std::isfinite(x)) throw CheckpointError("non-finite parameter in " + name);
    }
  });
  if (r.pos != bytes.size()) throw CheckpointError("trailing bytes after checkpoint");
  return net;
}

void save_checkpoint(const Network<float>& net, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(net);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path.string());
}

Network<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template struct Weights<float>;
template struct Weights<double>;
template class Network<float>;
template class Network<double>;
template PyramidGrad<float> zero_pyramid_grad(const Encoding<float>&);
template PyramidGrad<double> zero_pyramid_grad(const Encoding<double>&);
template CamMap compute_cam(const Tensor<float>&, const std::vector<float>&, std::size_t);
template CamMap compute_cam(const Tensor<double>&, const std::vector<double>&, std::size_t);

}  // namespace fseg
