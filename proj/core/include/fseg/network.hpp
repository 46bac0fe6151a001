#pragma once

// Compact 3D CNN: five-block residual encoder (total stride 4, all of it in
// block 2), a region classifier whose FC weights produce CAMs, a 1x1x1
// localization head and an ROI decoder fed by blocks 1, 3 and 5.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fseg/layers.hpp"
#include "fseg/tensor.hpp"
#include "fseg/volume.hpp"

namespace fseg {

inline constexpr std::size_t kTotalStride = 4;
inline constexpr std::size_t kMinInputExtent = 16;
inline constexpr std::size_t kBackgroundClass = 0;
inline constexpr std::size_t kCatheterClass = 1;
inline constexpr std::uint32_t kRoiMargin = 8;

struct NetworkConfig {
  std::array<std::uint32_t, 5> block_channels{8, 16, 32, 64, 64};
  std::uint32_t decoder_channels = 8;
  std::uint32_t norm_groups = 4;
  std::uint64_t rng_seed = 0;

  // 64,64,128,256,512 with a 64-channel decoder. Used for FLOPs only.
  [[nodiscard]] static NetworkConfig paper_profile();
  friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

void validate(const NetworkConfig& cfg);
std::string describe(const NetworkConfig& cfg);

template <typename T>
struct BlockWeights {
  nn::ConvWeights<T> conv1;
  nn::GroupNormWeights<T> norm1;
  nn::ConvWeights<T> conv2;
  nn::GroupNormWeights<T> norm2;
};

template <typename T>
struct Weights {
  std::array<BlockWeights<T>, 5> blocks;
  std::vector<T> fc_w;  // [2][C5]
  std::vector<T> fc_b;  // [2]
  nn::ConvWeights<T> loc;
  nn::ConvWeights<T> dec5;    // B5 crop -> decoder channels
  nn::ConvWeights<T> dec3;    // concat(dec, B3 crop) -> decoder channels
  nn::ConvWeights<T> dec_up;  // after x4 upsampling
  nn::ConvWeights<T> dec1;    // concat(dec, B1 crop) -> decoder channels
  nn::ConvWeights<T> dec_out; // 1x1x1 -> 1

  // Zero-valued weights with the shapes implied by `cfg`.
  [[nodiscard]] static Weights shaped(const NetworkConfig& cfg);

  // f(name, std::vector<T>&) over every parameter tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }
  [[nodiscard]] std::size_t parameter_count() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& s, F& f) {
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      const std::string p = "block" + std::to_string(i + 1) + ".";
      f(p + "conv1.weight", s.blocks[i].conv1.w);
      f(p + "conv1.bias", s.blocks[i].conv1.b);
      f(p + "norm1.gamma", s.blocks[i].norm1.gamma);
      f(p + "norm1.beta", s.blocks[i].norm1.beta);
      f(p + "conv2.weight", s.blocks[i].conv2.w);
      f(p + "conv2.bias", s.blocks[i].conv2.b);
      f(p + "norm2.gamma", s.blocks[i].norm2.gamma);
      f(p + "norm2.beta", s.blocks[i].norm2.beta);
    }
    f(std::string("fc.weight"), s.fc_w);
    f(std::string("fc.bias"), s.fc_b);
    f(std::string("loc.weight"), s.loc.w);
    f(std::string("loc.bias"), s.loc.b);
    f(std::string("dec5.weight"), s.dec5.w);
    f(std::string("dec5.bias"), s.dec5.b);
    f(std::string("dec3.weight"), s.dec3.w);
    f(std::string("dec3.bias"), s.dec3.b);
    f(std::string("dec_up.weight"), s.dec_up.w);
    f(std::string("dec_up.bias"), s.dec_up.b);
    f(std::string("dec1.weight"), s.dec1.w);
    f(std::string("dec1.bias"), s.dec1.b);
    f(std::string("dec_out.weight"), s.dec_out.w);
    f(std::string("dec_out.bias"), s.dec_out.b);
  }
};

template <typename T>
struct BlockTape {
  Tensor<T> input;  // conv1 input (after pooling in block 2)
  std::vector<std::uint32_t> pool_argmax;
  nn::GroupNormCache<T> norm1;
  Tensor<T> a1;
  nn::GroupNormCache<T> norm2;
  Tensor<T> out;
  bool skip_from_input = false;
};

// Forward state of the encoder; B1, B3 and B5 are the block outputs.
template <typename T>
struct Encoding {
  Shape3 input_shape;
  std::array<BlockTape<T>, 5> blocks;

  [[nodiscard]] const Tensor<T>& b1() const { return blocks[0].out; }
  [[nodiscard]] const Tensor<T>& b3() const { return blocks[2].out; }
  [[nodiscard]] const Tensor<T>& b5() const { return blocks[4].out; }
  [[nodiscard]] bool empty() const { return blocks[4].out.empty(); }
};

// Upstream gradients for the three pyramid levels.
template <typename T>
struct PyramidGrad {
  Tensor<T> b1, b3, b5;
};

template <typename T>
PyramidGrad<T> zero_pyramid_grad(const Encoding<T>& enc);

// Forward state of one ROI decode. `prob` covers exactly the requested ROI.
template <typename T>
struct RoiDecoding {
  BoundingBox3 roi;      // requested, input coordinates
  BoundingBox3 aligned;  // start multiple of 4, at least 4 per axis
  BoundingBox3 feature;  // stride-4 coordinates
  Tensor<T> f5, cat3, a, b, u, c, cat1, e, p;
  Shape3 upsampled;
  Tensor<T> prob;
};

// Smallest box containing `roi` whose start is a multiple of 4 and whose
// extent is at least 4 per axis, clamped to `input`.
[[nodiscard]] BoundingBox3 align_roi(const BoundingBox3& roi, const Shape3& input);
// Stride-4 box covering an aligned input box.
[[nodiscard]] BoundingBox3 feature_box(const BoundingBox3& aligned);
// Stride-4 box covering an arbitrary input-resolution region (at least one voxel).
[[nodiscard]] BoundingBox3 region_to_feature(const BoundingBox3& region, const Shape3& input);
[[nodiscard]] Shape3 feature_shape(const Shape3& input);

template <typename T>
class Network {
 public:
  explicit Network(const NetworkConfig& cfg);

  [[nodiscard]] const NetworkConfig& config() const { return cfg_; }
  [[nodiscard]] Weights<T>& weights() { return w_; }
  [[nodiscard]] const Weights<T>& weights() const { return w_; }
  [[nodiscard]] Weights<T>& grads() { return g_; }
  [[nodiscard]] const Weights<T>& grads() const { return g_; }
  void zero_grad();

  // Input: one channel, every axis >= 16.
  [[nodiscard]] Encoding<T> encode(const Tensor<T>& input) const;
  void encode_backward(const Encoding<T>& enc, const PyramidGrad<T>& grad);

  // Logits of FC(GAP(B5 over `region`)), region in feature coordinates.
  [[nodiscard]] std::array<T, 2> classify_region(const Tensor<T>& b5, const BoundingBox3& region) const;
  void classify_region_backward(const Tensor<T>& b5, const BoundingBox3& region, const std::array<T, 2>& dlogits,
                                Tensor<T>& d_b5);

  // sigmoid(1x1x1 conv of B5), one channel at stride 4.
  [[nodiscard]] Tensor<T> localize(const Tensor<T>& b5) const;
  void localize_backward(const Tensor<T>& b5, const Tensor<T>& prob, const Tensor<T>& dprob, Tensor<T>& d_b5);

  [[nodiscard]] RoiDecoding<T> decode_roi(const Encoding<T>& enc, const BoundingBox3& roi) const;
  void decode_roi_backward(const Encoding<T>& enc, const RoiDecoding<T>& dec, const Tensor<T>& dprob,
                           PyramidGrad<T>& grad);

 private:
  NetworkConfig cfg_;
  Weights<T> w_;
  Weights<T> g_;
};

struct CamMap {
  FloatGrid data;  // stride-4 resolution, values in [0,1]
};

// CAM = sum_i w_{cls,i} F_i, min-max normalized; a constant map becomes zeros.
template <typename T>
[[nodiscard]] CamMap compute_cam(const Tensor<T>& b5, const std::vector<T>& fc_w, std::size_t cls = kCatheterClass);
// Trilinear x4 to full resolution, cropped to `input`, clamped to [0,1].
[[nodiscard]] FloatGrid upsample_cam(const CamMap& cam, const Shape3& input);

// Threshold, 26-connected grouping, stride-4 boxes scaled to input
// coordinates, dilated by `margin`, clamped; top `max_rois` by summed
// probability. Empty when nothing passes the threshold.
[[nodiscard]] std::vector<BoundingBox3> extract_rois(const FloatGrid& loc_map, float tau_loc, std::uint32_t max_rois,
                                                     const Shape3& input, std::uint32_t margin = kRoiMargin);

// 26-connected components of a binary grid; labels start at 1, 0 = background.
struct Components {
  Grid3<std::uint32_t> labels;
  std::uint32_t count = 0;
};
[[nodiscard]] Components connected_components(const ByteGrid& mask);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

[[nodiscard]] std::vector<std::uint8_t> encode_checkpoint(const Network<float>& net);
[[nodiscard]] Network<float> decode_checkpoint(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const Network<float>& net, const std::filesystem::path& path);
[[nodiscard]] Network<float> load_checkpoint(const std::filesystem::path& path);

// Element-wise copy between precisions (same config).
template <typename To, typename From>
void copy_weights(const Network<From>& src, Network<To>& dst) {
  std::vector<const std::vector<From>*> s;
  src.weights().visit([&](const std::string&, const std::vector<From>& v) { s.push_back(&v); });
  std::size_t i = 0;
  dst.weights().visit([&](const std::string&, std::vector<To>& v) {
    const auto& from = *s.at(i++);
    v.assign(from.begin(), from.end());
  });
}

}  // namespace fseg
