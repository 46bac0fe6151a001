#include "fseg/flops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "fseg/layers.hpp"

namespace fseg {

std::uint64_t conv_macs(std::size_t cin, std::size_t cout, std::size_t kernel, const Shape3& out) {
  return std::uint64_t{kernel} * kernel * kernel * cin * cout * out.count();
}

FlopsReport summarize_flops(std::vector<FlopsLayer> layers) {
  FlopsReport r;
  r.layers = std::move(layers);
  for (const auto& l : r.layers) {
    if (l.stage == "encoder") r.encoder_flops += l.flops();
    else if (l.stage == "head") r.head_flops += l.flops();
    else r.decoder_flops += l.flops();
  }
  r.total_flops = r.encoder_flops + r.head_flops + r.decoder_flops;
  return r;
}

namespace {

Shape3 conv_out(const Shape3& in, std::size_t k, std::size_t stride) {
  return {nn::conv_out_extent(in.d0, k, stride), nn::conv_out_extent(in.d1, k, stride),
          nn::conv_out_extent(in.d2, k, stride)};
}

Shape3 pool_out(const Shape3& in) { return {(in.d0 + 1) / 2, (in.d1 + 1) / 2, (in.d2 + 1) / 2}; }

FlopsLayer conv_layer(std::string name, std::string stage, std::size_t cin, std::size_t cout, std::size_t k,
                      const Shape3& out) {
  return {std::move(name), std::move(stage), cin, cout, k, out, conv_macs(cin, cout, k, out)};
}

// Aligned box extents for a stride `S` feature grid (mirrors align_roi).
std::pair<Shape3, Shape3> roi_extents(const BoundingBox3& roi, const Shape3& input, std::size_t S) {
  std::array<std::size_t, 3> full{}, feat{};
  for (int ax = 0; ax < 3; ++ax) {
    const std::size_t n = input[ax];
    const std::size_t s = std::min<std::size_t>(roi.start[ax], n - S) / S * S;
    std::size_t e = (roi.end[ax] + S - 1) / S * S;
    e = std::min(std::max(e, s + S), n);
    full[static_cast<std::size_t>(ax)] = e - s;
    feat[static_cast<std::size_t>(ax)] = (e + S - 1) / S - s / S;
  }
  return {{full[0], full[1], full[2]}, {feat[0], feat[1], feat[2]}};
}

}  // namespace

FlopsReport count_flops(const NetworkConfig& cfg, const Shape3& input,
                        const std::optional<std::vector<BoundingBox3>>& rois, const FlopsOptions& opt) {
  validate(cfg);
  if (opt.total_stride != 4 && opt.total_stride != 8)
    throw std::invalid_argument("count_flops: total_stride must be 4 or 8");
  for (int ax = 0; ax < 3; ++ax)
    if (input[ax] < kMinInputExtent) throw std::invalid_argument("count_flops: every input axis must be >= 16");
  const auto& ch = cfg.block_channels;
  std::vector<FlopsLayer> layers;
  Shape3 s = input;
  Shape3 b1, b3;
  std::size_t in = 1;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string p = "block" + std::to_string(i + 1);
    std::size_t stride = 1;
    if (i == 1) {
      s = pool_out(s);
      stride = 2;
    }
    if (i == 2 && opt.total_stride == 8) stride = 2;
    s = conv_out(s, 3, stride);
    layers.push_back(conv_layer(p + ".conv1", "encoder", in, ch[i], 3, s));
    layers.push_back(conv_layer(p + ".conv2", "encoder", ch[i], ch[i], 3, s));
    in = ch[i];
    if (i == 0) b1 = s;
    if (i == 2) b3 = s;
  }
  const Shape3 b5 = s;
  layers.push_back(conv_layer("loc", "head", ch[4], 1, 1, b5));

  const std::size_t dc = cfg.decoder_channels;
  std::vector<std::pair<Shape3, Shape3>> extents;
  const BoundingBox3 whole{{0, 0, 0},
                           {static_cast<std::uint32_t>(input.d0), static_cast<std::uint32_t>(input.d1),
                            static_cast<std::uint32_t>(input.d2)}};
  if (rois) {
    for (const auto& r : *rois) {
      if (!r.valid() || !r.within(input)) throw std::invalid_argument("count_flops: roi outside input");
      extents.push_back(roi_extents(r, input, opt.total_stride));
    }
  } else {
    extents.push_back(roi_extents(whole, input, opt.total_stride));
  }
  for (std::size_t n = 0; n < extents.size(); ++n) {
    const auto& [full, feat] = extents[n];
    const std::string p = rois ? "roi" + std::to_string(n) + "." : std::string("whole.");
    layers.push_back(conv_layer(p + "dec5", "decoder", ch[4], dc, 3, feat));
    layers.push_back(conv_layer(p + "dec3", "decoder", dc + ch[2], dc, 3, feat));
    layers.push_back(conv_layer(p + "dec_up", "decoder", dc, dc, 3, full));
    layers.push_back(conv_layer(p + "dec1", "decoder", dc + ch[0], dc, 3, full));
    layers.push_back(conv_layer(p + "dec_out", "decoder", dc, 1, 1, full));
  }
  auto report = summarize_flops(std::move(layers));
  auto& a = report.assumptions;
  a.push_back("FLOPs = 2 x multiply-adds of conv layers; bias, group norm, ReLU, pooling, upsampling not counted");
  a.push_back("encoder: 5 residual blocks of two 3x3x3 convs; block 1 at full resolution; block 2 = maxpool2 + "
              "stride-2 conv (total stride " + std::to_string(opt.total_stride) + ")");
  a.push_back("classifier FC is training-only and excluded; localization head = 1x1x1 conv on block 5");
  a.push_back("decoder per region: 3x3x3 conv on B5 -> " + std::to_string(dc) + ", concat B3 + 3x3x3 conv, x" +
              std::to_string(opt.total_stride) + " trilinear, 3x3x3 conv, concat B1 + 3x3x3 conv, 1x1x1 conv");
  a.push_back(rois ? "decoder evaluated on " + std::to_string(rois->size()) + " ROI(s) aligned to the stride grid"
                   : std::string("decoder evaluated on the whole volume"));
  a.push_back("input " + to_string(input) + ", B1 " + to_string(b1) + ", B3 " + to_string(b3) + ", B5 " +
              to_string(b5) + ", " + describe(cfg));
  return report;
}

std::vector<BoundingBox3> nominal_catheter_rois(const Shape3& input, int span_axis,
                                                const std::array<double, 3>& cross_extent_vox, std::uint32_t count,
                                                std::uint32_t margin) {
  if (span_axis < 0 || span_axis > 2 || count == 0) throw std::invalid_argument("nominal_catheter_rois: bad arguments");
  std::vector<BoundingBox3> out;
  const auto n_span = static_cast<std::uint32_t>(input[span_axis]);
  for (std::uint32_t c = 0; c < count; ++c) {
    BoundingBox3 b;
    for (int ax = 0; ax < 3; ++ax) {
      const auto n = static_cast<std::uint32_t>(input[ax]);
      if (ax == span_axis) {
        b.start.at(ax) = n_span * c / count;
        b.end.at(ax) = n_span * (c + 1) / count;
      } else {
        const auto ext = std::min<std::uint32_t>(
            n, static_cast<std::uint32_t>(std::ceil(cross_extent_vox[static_cast<std::size_t>(ax)])));
        b.start.at(ax) = (n - ext) / 2;
        b.end.at(ax) = b.start[ax] + std::max<std::uint32_t>(ext, 1);
      }
    }
    out.push_back(dilate(b, margin, input));
  }
  return out;
}

std::string format_flops(const FlopsReport& r, bool per_layer) {
  std::ostringstream os;
  char buf[200];
  if (per_layer) {
    std::snprintf(buf, sizeof buf, "%-22s %-8s %6s %6s %3s %-16s %14s\n", "layer", "stage", "cin", "cout", "k",
                  "output", "GFLOPs");
    os << buf;
    for (const auto& l : r.layers) {
      std::snprintf(buf, sizeof buf, "%-22s %-8s %6zu %6zu %3zu %-16s %14.4f\n", l.name.c_str(), l.stage.c_str(),
                    l.cin, l.cout, l.kernel, to_string(l.out).c_str(), static_cast<double>(l.flops()) * 1e-9);
      os << buf;
    }
  }
  std::snprintf(buf, sizeof buf, "encoder %.4f GFLOPs, head %.4f GFLOPs, decoder %.4f GFLOPs, total %.4f GFLOPs\n",
                static_cast<double>(r.encoder_flops) * 1e-9, static_cast<double>(r.head_flops) * 1e-9,
                static_cast<double>(r.decoder_flops) * 1e-9, r.gflops());
  os << buf;
  for (const auto& a : r.assumptions) os << "assumption: " << a << "\n";
  return os.str();
}

}  // namespace fseg
