#pragma once

// Static multiply-add accounting for the inference path (encoder,
// localization head, ROI decoder). FLOPs = 2 x multiply-adds of the conv
// layers; the region classifier FC, bias, normalization, activations,
// pooling and interpolation are not counted.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fseg/network.hpp"
#include "fseg/volume.hpp"

namespace fseg {

struct FlopsLayer {
  std::string name;
  std::string stage;  // "encoder", "head" or "decoder"
  std::size_t cin = 0;
  std::size_t cout = 0;
  std::size_t kernel = 0;
  Shape3 out;
  std::uint64_t macs = 0;
  [[nodiscard]] std::uint64_t flops() const { return 2 * macs; }
};

struct FlopsReport {
  std::vector<FlopsLayer> layers;
  std::uint64_t encoder_flops = 0;
  std::uint64_t head_flops = 0;
  std::uint64_t decoder_flops = 0;
  std::uint64_t total_flops = 0;
  std::vector<std::string> assumptions;

  [[nodiscard]] double gflops() const { return static_cast<double>(total_flops) * 1e-9; }
};

[[nodiscard]] std::uint64_t conv_macs(std::size_t cin, std::size_t cout, std::size_t kernel, const Shape3& out);
// Sums per-stage totals of an arbitrary layer list.
[[nodiscard]] FlopsReport summarize_flops(std::vector<FlopsLayer> layers);

struct FlopsOptions {
  // Total encoder stride; 8 models the halved-filter Cartesian variant by
  // making block 3's first conv stride 2 as well.
  std::size_t total_stride = kTotalStride;
};

// `rois` absent: decoder over the whole volume. Present: decoder over each
// ROI after the same alignment the network applies.
[[nodiscard]] FlopsReport count_flops(const NetworkConfig& cfg, const Shape3& input,
                                      const std::optional<std::vector<BoundingBox3>>& rois = std::nullopt,
                                      const FlopsOptions& opt = {});

// `count` boxes for a catheter running along `span_axis` through the volume
// centre with the given cross-section extents (voxels) on the other axes;
// the span is split evenly between the boxes, each dilated by `margin`.
[[nodiscard]] std::vector<BoundingBox3> nominal_catheter_rois(const Shape3& input, int span_axis,
                                                              const std::array<double, 3>& cross_extent_vox,
                                                              std::uint32_t count, std::uint32_t margin = kRoiMargin);

std::string format_flops(const FlopsReport& r, bool per_layer = true);

}  // namespace fseg
