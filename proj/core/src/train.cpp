#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "fseg/metrics.hpp"
#include "fseg/weaksup.hpp"

namespace fseg {

const char* to_string(LabelMode m) {
  switch (m) {
    case LabelMode::Weak: return "weak";
    case LabelMode::Supervised: return "supervised";
    case LabelMode::BboxAsLabel: return "bbox";
  }
  return "?";
}

LabelMode parse_label_mode(const std::string& s) {
  if (s == "weak") return LabelMode::Weak;
  if (s == "supervised") return LabelMode::Supervised;
  if (s == "bbox") return LabelMode::BboxAsLabel;
  throw std::invalid_argument("unknown label mode '" + s + "' (weak, supervised, bbox)");
}

void validate(const TrainConfig& c) {
  if (c.n_regions == 0 || c.m_rois_train == 0 || c.m_rois_test == 0 || c.phase1_epochs == 0 ||
      c.phase2_epochs == 0 || c.phase3_min == 0 || c.phase3_max == 0 || c.update_period == 0 ||
      c.plateau_window == 0)
    throw std::invalid_argument("train config: all counts must be >= 1");
  if (c.phase3_min > c.phase3_max) throw std::invalid_argument("train config: phase3_min exceeds phase3_max");
  if (!(c.lr > 0.0f)) throw std::invalid_argument("train config: lr must be > 0");
  if (!(c.pos_weight > 0.0f)) throw std::invalid_argument("train config: pos_weight must be > 0");
  if (!(c.tau_loc > 0.0f && c.tau_loc < 1.0f)) throw std::invalid_argument("train config: tau_loc must be in (0,1)");
  validate(c.pseudo);
  validate(c.frangi);
}

std::string describe(const TrainConfig& c) {
  std::ostringstream os;
  os << "label_mode=" << to_string(c.label_mode) << " seed=" << c.seed << " N=" << c.n_regions
     << " M_train=" << c.m_rois_train << " M_test=" << c.m_rois_test << " pos_weight=" << c.pos_weight
     << " lr=" << c.lr << " epochs=" << c.phase1_epochs << "/" << c.phase2_epochs << "/" << c.phase3_min << "-"
     << c.phase3_max << " update_period=" << c.update_period << " tau_loc=" << c.tau_loc
     << " plateau=" << c.plateau_delta << "/" << c.plateau_window << " bbox_jitter=" << c.bbox_jitter_vox
     << " tau_u=" << c.pseudo.tau_u << " eta=" << c.pseudo.eta << " crf=(" << c.pseudo.crf.w_smooth << ","
     << c.pseudo.crf.theta_gamma_vox << "," << c.pseudo.crf.w_bilateral << "," << c.pseudo.crf.theta_alpha_vox << ","
     << c.pseudo.crf.theta_beta_intensity << ",it" << c.pseudo.crf.iterations << ",r"
     << c.pseudo.crf.window_radius_vox << ")";
  os << " frangi=(";
  for (std::size_t i = 0; i < c.frangi.scales.size(); ++i) os << (i ? "," : "") << c.frangi.scales[i];
  os << ";a" << c.frangi.alpha << ";b" << c.frangi.beta << ")";
  return os.str();
}

namespace {

enum class Phase { One = 1, Two = 2, Three = 3 };

const char* phase_name(Phase p) {
  return p == Phase::One ? "phase1" : (p == Phase::Two ? "phase2" : "phase3");
}

Tensor<float> crop_mask(const MaskVolume& m, const BoundingBox3& box) {
  Tensor<float> t(1, box.shape(), 0.0f);
  for (std::uint32_t i = box.start.i; i < box.end.i; ++i)
    for (std::uint32_t j = box.start.j; j < box.end.j; ++j)
      for (std::uint32_t k = box.start.k; k < box.end.k; ++k)
        t(0, i - box.start.i, j - box.start.j, k - box.start.k) = m.data(i, j, k) != 0 ? 1.0f : 0.0f;
  return t;
}

void check_inside_bbox(const MaskVolume& m, const BoundingBox3& bbox, const std::string& id) {
  const Shape3& s = m.shape();
  for (std::size_t i = 0; i < s.d0; ++i)
    for (std::size_t j = 0; j < s.d1; ++j)
      for (std::size_t k = 0; k < s.d2; ++k)
        if (m.data(i, j, k) != 0 && !bbox.contains(i, j, k))
          throw std::logic_error("pseudo label of " + id + " leaves its bounding box");
}

BoundingBox3 shifted(const BoundingBox3& b, const Shape3& shape, std::uint32_t jitter, std::mt19937_64& rng) {
  BoundingBox3 out;
  std::uniform_int_distribution<std::int64_t> d(-static_cast<std::int64_t>(jitter), jitter);
  for (int ax = 0; ax < 3; ++ax) {
    const std::int64_t ext = b.extent(ax);
    const std::int64_t n = static_cast<std::int64_t>(shape[ax]);
    const std::int64_t s = std::clamp<std::int64_t>(std::int64_t{b.start[ax]} + d(rng), 0, n - ext);
    out.start.at(ax) = static_cast<std::uint32_t>(s);
    out.end.at(ax) = static_cast<std::uint32_t>(s + ext);
  }
  return out;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

class Trainer {
 public:
  Trainer(const std::vector<TrainSample>& samples, const TrainConfig& cfg, Network<float>& net)
      : samples_(samples), cfg_(cfg), net_(net), opt_(net.weights(), AmsgradParams{cfg.lr}) {
    for (const auto& s : samples) {
      validate(s.volume);
      if (!s.bbox.valid() || !s.bbox.within(s.volume.shape()))
        throw std::invalid_argument("train: bbox of " + s.id + " lies outside its volume");
      inputs_.push_back(network_input(s.volume));
    }
  }

  const Tensor<float>& input(std::size_t i) const { return inputs_[i]; }

  // One epoch over all samples in shuffled order; mean losses.
  LossBundle epoch(Phase phase, const std::vector<MaskVolume>* labels, std::mt19937_64& rng, std::uint32_t epoch) {
    double cls = 0.0, loc = 0.0, seg = 0.0;
    for (const std::size_t idx : shuffled_order(samples_.size(), rng)) {
      const auto b = step(idx, phase, labels ? &(*labels)[idx] : nullptr, rng);
      if (!std::isfinite(b.l_joint)) {
        throw TrainingDiverged(std::string("non-finite loss in ") + phase_name(phase) + " epoch " +
                               std::to_string(epoch) + " on " + samples_[idx].id);
      }
      cls += b.l_cls;
      loc += b.l_loc;
      seg += b.l_seg;
    }
    const double n = static_cast<double>(samples_.size());
    return make_bundle(static_cast<float>(cls / n), static_cast<float>(loc / n), static_cast<float>(seg / n));
  }

 private:
  LossBundle step(std::size_t idx, Phase phase, const MaskVolume* label, std::mt19937_64& rng) {
    const auto& s = samples_[idx];
    const Shape3& shape = s.volume.shape();
    net_.zero_grad();
    const auto enc = net_.encode(inputs_[idx]);
    auto grad = zero_pyramid_grad(enc);

    const auto regions = sample_regions(s.bbox, shape, cfg_.n_regions, rng);
    const float inv_regions = 1.0f / static_cast<float>(regions.size());
    double l_cls = 0.0;
    for (const auto& r : regions) {
      const auto fbox = region_to_feature(r.box, shape);
      std::array<float, 2> d{};
      l_cls += loss_cls(net_.classify_region(enc.b5(), fbox), r.positive ? kCatheterClass : kBackgroundClass, &d);
      d[0] *= inv_regions;
      d[1] *= inv_regions;
      net_.classify_region_backward(enc.b5(), fbox, d, grad.b5);
    }
    l_cls /= static_cast<double>(regions.size());

    double l_loc = 0.0, l_seg = 0.0;
    if (phase != Phase::One) {
      const auto prob = net_.localize(enc.b5());
      Tensor<float> dprob;
      l_loc = loss_loc(prob, pool_mask4(*label), cfg_.pos_weight, &dprob);
      net_.localize_backward(enc.b5(), prob, dprob, grad.b5);
      if (phase == Phase::Three) {
        auto rois = extract_rois(grid_from_channel(prob), cfg_.tau_loc, cfg_.m_rois_train, shape);
        // Early localization maps are unreliable: fill up with the bbox and jittered copies.
        if (rois.size() < cfg_.m_rois_train) rois.push_back(s.bbox);
        while (rois.size() < cfg_.m_rois_train) rois.push_back(shifted(s.bbox, shape, cfg_.bbox_jitter_vox, rng));
        const float inv_rois = 1.0f / static_cast<float>(rois.size());
        for (const auto& roi : rois) {
          const auto dec = net_.decode_roi(enc, roi);
          Tensor<float> dseg;
          l_seg += loss_seg(dec.prob, crop_mask(*label, roi), &dseg);
          for (auto& v : dseg.v) v *= inv_rois;
          net_.decode_roi_backward(enc, dec, dseg, grad);
        }
        l_seg /= static_cast<double>(rois.size());
      }
    }
    const auto bundle = make_bundle(static_cast<float>(l_cls), static_cast<float>(l_loc), static_cast<float>(l_seg));
    if (!std::isfinite(bundle.l_joint)) return bundle;
    net_.encode_backward(enc, grad);
    opt_.step(net_.weights(), net_.grads());
    return bundle;
  }

  const std::vector<TrainSample>& samples_;
  const TrainConfig& cfg_;
  Network<float>& net_;
  Amsgrad opt_;
  std::vector<Tensor<float>> inputs_;
};

std::optional<double> mean_dice(const std::vector<MaskVolume>& labels, const std::vector<TrainSample>& samples) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].ground_truth) continue;
    sum += dsc(confusion(labels[i], *samples[i].ground_truth));
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

double validation_dice(const Network<float>& net, const std::vector<TrainSample>& val, const TrainConfig& cfg) {
  double sum = 0.0;
  for (const auto& v : val) {
    if (!v.ground_truth) throw std::invalid_argument("train: validation volume " + v.id + " has no ground truth");
    const auto r = infer(net, v.volume, InferConfig{cfg.m_rois_test, cfg.tau_loc, 0.5f});
    sum += dsc(confusion(r.mask, *v.ground_truth));
  }
  return sum / static_cast<double>(val.size());
}

FloatGrid probability_map(const Network<float>& net, const Encoding<float>& enc, const FloatGrid& vesselness,
                          const FrustumVolume& volume) {
  const auto cam = upsample_cam(compute_cam(enc.b5(), net.weights().fc_w), volume.shape());
  return build_probability_map(vesselness, cam, volume);
}

}  // namespace

Phase1Result train_phase1(const std::vector<TrainSample>& train, const TrainConfig& cfg,
                          const NetworkConfig& net_cfg, const ProgressFn& progress) {
  validate(cfg);
  validate(net_cfg);
  if (train.empty()) throw std::invalid_argument("train: no training volumes");
  Network<float> net(net_cfg);
  Trainer trainer(train, cfg, net);
  std::seed_seq seq{cfg.seed, std::uint64_t{1}};
  std::mt19937_64 rng(seq);
  Phase1Result out;
  for (std::uint32_t e = 1; e <= cfg.phase1_epochs; ++e) {
    EpochRecord rec{"phase1", e, trainer.epoch(Phase::One, nullptr, rng, e), std::nullopt, std::nullopt};
    if (progress) progress(rec);
    out.history.push_back(rec);
  }
  out.weights = net.weights();
  return out;
}

TrainResult train(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val, const TrainConfig& cfg,
                  const NetworkConfig& net_cfg, const Phase1Result* phase1, const ProgressFn& progress) {
  validate(cfg);
  validate(net_cfg);
  if (train.empty()) throw std::invalid_argument("train: no training volumes");
  TrainResult result{Network<float>(net_cfg), {}, 0, -1.0, {}, {}, std::nullopt, false, {}};

  Phase1Result own;
  if (phase1 == nullptr) {
    try {
      own = train_phase1(train, cfg, net_cfg, progress);
    } catch (const TrainingDiverged& d) {
      result.diverged = true;
      result.abort_reason = d.what();
      return result;
    }
    phase1 = &own;
  }
  Network<float> net(net_cfg);
  net.weights() = phase1->weights;
  result.history = phase1->history;
  Trainer trainer(train, cfg, net);

  // Labels for phases 2 and 3.
  std::vector<MaskVolume> labels;
  std::vector<FloatGrid> vesselness;
  std::vector<PseudoLabelState>& states = result.labels;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto& s = train[i];
    switch (cfg.label_mode) {
      case LabelMode::Weak: {
        vesselness.push_back(fseg::vesselness(normalize_01(s.volume), cfg.frangi));
        const auto enc = net.encode(trainer.input(i));
        states.push_back(
            initial_pseudo_label(probability_map(net, enc, vesselness.back(), s.volume), s.volume, s.bbox, cfg.pseudo));
        if (states.back().fallback) result.fallback_ids.push_back(s.id);
        check_inside_bbox(states.back().y_current, s.bbox, s.id);
        labels.push_back(states.back().y_current);
        break;
      }
      case LabelMode::Supervised:
        if (!s.ground_truth) throw std::invalid_argument("train: supervised labels need ground truth for " + s.id);
        labels.push_back(*s.ground_truth);
        break;
      case LabelMode::BboxAsLabel:
        labels.push_back(box_mask(s.bbox, s.volume.shape()));
        break;
    }
  }
  result.initial_pseudo_dice = mean_dice(labels, train);

  std::seed_seq seq{cfg.seed, std::uint64_t{2}};
  std::mt19937_64 rng(seq);
  auto best = net.weights();
  std::vector<double> val_trace;
  try {
    for (std::uint32_t e = 1; e <= cfg.phase2_epochs; ++e) {
      EpochRecord rec{"phase2", e, trainer.epoch(Phase::Two, &labels, rng, e), std::nullopt, std::nullopt};
      if (e == 1) rec.pseudo_dice = result.initial_pseudo_dice;
      if (progress) progress(rec);
      result.history.push_back(rec);
    }
    for (std::uint32_t e = 1; e <= cfg.phase3_max; ++e) {
      EpochRecord rec{"phase3", e, trainer.epoch(Phase::Three, &labels, rng, e), std::nullopt, std::nullopt};
      if (cfg.label_mode == LabelMode::Weak && e % cfg.update_period == 0) {
        for (std::size_t i = 0; i < train.size(); ++i) {
          const auto enc = net.encode(trainer.input(i));
          const auto y_hat = infer_encoded(net, enc, InferConfig{cfg.m_rois_test, cfg.tau_loc, 0.5f}).mask;
          const auto u_t = probability_map(net, enc, vesselness[i], train[i].volume);
          update_pseudo_label(states[i], u_t, y_hat, train[i].volume, cfg.pseudo, e);
          check_inside_bbox(states[i].y_current, train[i].bbox, train[i].id);
          if (states[i].fallback &&
              std::find(result.fallback_ids.begin(), result.fallback_ids.end(), train[i].id) ==
                  result.fallback_ids.end())
            result.fallback_ids.push_back(train[i].id);
          labels[i] = states[i].y_current;
        }
        rec.pseudo_dice = mean_dice(labels, train);
      }
      if (!val.empty()) {
        const double d = validation_dice(net, val, cfg);
        rec.val_dice = d;
        val_trace.push_back(d);
        if (d > result.best_val_dice) {
          result.best_val_dice = d;
          result.best_epoch = e;
          best = net.weights();
        }
      }
      if (progress) progress(rec);
      result.history.push_back(rec);
      // Plateau: the last window failed to beat the best value before it by delta.
      if (e >= cfg.phase3_min && val_trace.size() > cfg.plateau_window) {
        const auto split = val_trace.end() - cfg.plateau_window;
        const double before = *std::max_element(val_trace.begin(), split);
        const double recent = *std::max_element(split, val_trace.end());
        if (recent - before < cfg.plateau_delta) break;
      }
    }
  } catch (const TrainingDiverged& d) {
    result.diverged = true;
    result.abort_reason = d.what();
  }
  if (val.empty()) {
    result.best_epoch = result.history.empty() ? 0 : result.history.back().epoch;
    best = net.weights();
  }
  result.network.weights() = best;
  return result;
}

std::string format_history(const std::vector<EpochRecord>& history) {
  std::ostringstream os;
  os << "phase,epoch,l_cls,l_loc,l_seg,l_joint,val_dice,pseudo_dice\n";
  char buf[160];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%s,%u,%.6f,%.6f,%.6f,%.6f,", r.phase.c_str(), r.epoch, r.loss.l_cls, r.loss.l_loc,
                  r.loss.l_seg, r.loss.l_joint);
    os << buf;
    if (r.val_dice) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.val_dice);
      os << buf;
    }
    os << ",";
    if (r.pseudo_dice) {
      std::snprintf(buf, sizeof buf, "%.6f", *r.pseudo_dice);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace fseg
