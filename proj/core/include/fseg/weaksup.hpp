#pragma once

// Weak supervision from loose bounding boxes: probability-map fusion,
// CRF-refined pseudo labels with a moving-average update, region sampling,
// losses, the three-phase training schedule and ROI inference.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fseg/densecrf.hpp"
#include "fseg/frangi.hpp"
#include "fseg/network.hpp"
#include "fseg/volume.hpp"

namespace fseg {

// --- probability map and pseudo labels --------------------------------------

// U = V * CAM * I / intensity_max, elementwise. Throws on shape mismatch.
[[nodiscard]] FloatGrid build_probability_map(const FloatGrid& vesselness, const FloatGrid& cam,
                                              const FrustumVolume& image);

struct PseudoLabelParams {
  float tau_u = 0.01f;
  float eta = 0.8f;
  CrfParams crf;
};

void validate(const PseudoLabelParams& p);

struct PseudoLabelState {
  FloatGrid u_prev;
  MaskVolume y_current;
  float eta = 0.8f;
  std::uint32_t epoch_of_last_update = 0;
  BoundingBox3 bbox;
  bool fallback = false;  // last refresh skipped the CRF
};

// U zeroed outside the bbox, thresholded into a unary, refined by the CRF on
// the bbox plus a window-radius halo, then clipped to the bbox. An empty CRF
// result falls back to the plain threshold and sets `fallback`.
[[nodiscard]] PseudoLabelState initial_pseudo_label(const FloatGrid& u, const FrustumVolume& image,
                                                    const BoundingBox3& bbox, const PseudoLabelParams& params);

// B = eta * U_prev + (1 - eta) * (y_hat * U_t), refined like the initial label.
[[nodiscard]] FloatGrid blend_probability(const FloatGrid& u_prev, const FloatGrid& u_t, const MaskVolume& y_hat,
                                          float eta);
const MaskVolume& update_pseudo_label(PseudoLabelState& state, const FloatGrid& u_t, const MaskVolume& y_hat,
                                      const FrustumVolume& image, const PseudoLabelParams& params,
                                      std::uint32_t epoch);

// CRF step shared by both label paths; exposed for tests.
struct RefinedLabel {
  MaskVolume mask;
  bool fallback = false;
};
[[nodiscard]] RefinedLabel refine_in_box(const FloatGrid& prob, const FrustumVolume& image, const BoundingBox3& bbox,
                                         float tau_u, const CrfParams& crf);

// --- region sampling --------------------------------------------------------

struct SampledRegion {
  BoundingBox3 box;
  bool positive = false;
};

// N positives overlapping the bbox then N negatives disjoint from it, all of
// the bbox size clamped to [8, extent] per axis. Throws std::invalid_argument
// when no negative fits.
[[nodiscard]] std::vector<SampledRegion> sample_regions(const BoundingBox3& bbox, const Shape3& shape,
                                                        std::uint32_t n, std::mt19937_64& rng);

inline constexpr std::uint32_t kMinRegionExtent = 8;

// --- losses -----------------------------------------------------------------

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceSmooth = 1.0;

// Softmax cross entropy over two classes.
template <typename T>
[[nodiscard]] T loss_cls(const std::array<T, 2>& logits, std::size_t label, std::array<T, 2>* dlogits = nullptr);
// Mean BCE with positives weighted by `pos_weight`.
template <typename T>
[[nodiscard]] T loss_loc(const Tensor<T>& prob, const Tensor<T>& target, T pos_weight, Tensor<T>* dprob = nullptr);
// (1 - soft Dice) + mean BCE.
template <typename T>
[[nodiscard]] T loss_seg(const Tensor<T>& prob, const Tensor<T>& target, Tensor<T>* dprob = nullptr);

struct LossBundle {
  float l_cls = 0.0f;
  float l_loc = 0.0f;
  float l_seg = 0.0f;
  float l_joint = 0.0f;
};

// Fills l_joint and checks additivity; throws std::logic_error if violated.
[[nodiscard]] LossBundle make_bundle(float l_cls, float l_loc, float l_seg);

// Stride-4 max pooling of a mask (ceil mode) as a one-channel tensor.
[[nodiscard]] Tensor<float> pool_mask4(const MaskVolume& mask);

// --- optimizer --------------------------------------------------------------

struct AmsgradParams {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Adam with the running maximum of the second moment in the denominator.
class Amsgrad {
 public:
  Amsgrad(const Weights<float>& shape_like, AmsgradParams p);
  void step(Weights<float>& w, const Weights<float>& g);
  [[nodiscard]] std::uint64_t steps() const { return t_; }

 private:
  AmsgradParams p_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_, vmax_;
};

// --- training ---------------------------------------------------------------

enum class LabelMode { Weak, Supervised, BboxAsLabel };
[[nodiscard]] const char* to_string(LabelMode m);
[[nodiscard]] LabelMode parse_label_mode(const std::string& s);

struct TrainConfig {
  std::uint32_t n_regions = 16;
  std::uint32_t m_rois_train = 10;
  std::uint32_t m_rois_test = 2;
  float pos_weight = 10.0f;
  float lr = 1e-4f;
  std::uint32_t phase1_epochs = 100;
  std::uint32_t phase2_epochs = 30;
  std::uint32_t phase3_min = 20;
  std::uint32_t phase3_max = 50;
  std::uint32_t update_period = 4;
  float tau_loc = 0.5f;
  float plateau_delta = 0.005f;
  std::uint32_t plateau_window = 8;
  std::uint32_t bbox_jitter_vox = 4;
  PseudoLabelParams pseudo;
  VesselnessParams frangi;
  LabelMode label_mode = LabelMode::Weak;
  std::uint64_t seed = 0;
};

void validate(const TrainConfig& c);
[[nodiscard]] std::string describe(const TrainConfig& c);

struct TrainSample {
  std::string id;
  FrustumVolume volume;
  BoundingBox3 bbox;
  std::optional<MaskVolume> ground_truth;  // required for Supervised labels and for validation
};

struct EpochRecord {
  std::string phase;
  std::uint32_t epoch = 0;  // 1-based within the phase
  LossBundle loss;          // mean over volumes
  std::optional<double> val_dice;
  std::optional<double> pseudo_dice;  // mean Dice of current pseudo labels vs ground truth, where known
};

// State after phase 1; the same snapshot can seed several phase-2/3 runs.
struct Phase1Result {
  Weights<float> weights;
  std::vector<EpochRecord> history;
};

struct TrainResult {
  Network<float> network;  // best validation snapshot (last weights when there is no validation set)
  std::vector<EpochRecord> history;
  std::uint32_t best_epoch = 0;
  double best_val_dice = -1.0;
  std::vector<std::string> fallback_ids;  // volumes whose pseudo label skipped the CRF
  std::vector<PseudoLabelState> labels;  // final per-volume labels (weak mode)
  std::optional<double> initial_pseudo_dice;
  bool diverged = false;
  std::string abort_reason;
};

class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Throws TrainingDiverged on a non-finite loss.
[[nodiscard]] Phase1Result train_phase1(const std::vector<TrainSample>& train, const TrainConfig& cfg,
                                        const NetworkConfig& net_cfg, const ProgressFn& progress = {});

// Phases 2 and 3 from a phase-1 snapshot; runs phase 1 itself when `phase1`
// is null. Divergence stops training and is reported in the result.
[[nodiscard]] TrainResult train(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val,
                                const TrainConfig& cfg, const NetworkConfig& net_cfg,
                                const Phase1Result* phase1 = nullptr, const ProgressFn& progress = {});

[[nodiscard]] std::string format_history(const std::vector<EpochRecord>& history);

// --- inference --------------------------------------------------------------

struct InferConfig {
  std::uint32_t m_rois = 2;
  float tau_loc = 0.5f;
  float threshold = 0.5f;
};

struct InferResult {
  MaskVolume mask;
  FloatGrid prob;  // per-voxel max over decoded ROIs, zero elsewhere
  std::vector<BoundingBox3> rois;
  bool whole_volume_fallback = false;
};

[[nodiscard]] Tensor<float> network_input(const FrustumVolume& v);
[[nodiscard]] InferResult infer(const Network<float>& net, const FrustumVolume& volume, const InferConfig& cfg = {});
// Decodes each ROI, stitches by per-voxel max and thresholds; no fallback.
[[nodiscard]] InferResult decode_rois(const Network<float>& net, const Encoding<float>& enc,
                                      const std::vector<BoundingBox3>& rois, float threshold = 0.5f);
// Same as infer, reusing an existing encoding of the volume.
[[nodiscard]] InferResult infer_encoded(const Network<float>& net, const Encoding<float>& enc,
                                        const InferConfig& cfg = {});

}  // namespace fseg
