#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

#include "fseg/flops.hpp"
#include "fseg/frangi.hpp"
#include "fseg/geometry.hpp"
#include "fseg/hash.hpp"
#include "fseg/metrics.hpp"
#include "fseg/network.hpp"
#include "fseg/phantom.hpp"
#include "fseg/weaksup.hpp"

#ifndef FSEG_VERSION
#define FSEG_VERSION "0.0.0"
#endif

namespace fseg::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Hyperparameters whose defaults are published values; every other tunable
// is a placeholder and is listed as provisional in the manifest.
const std::set<std::string> kPublishedDefaults = {
    "n-regions",     "m-rois-train",  "m-rois-test", "pos-weight", "lr",          "phase1-epochs",
    "phase2-epochs", "phase3-min",    "phase3-max",  "update-period", "frangi-scales", "scales",
    "m-rois"};

struct Options {
  std::uint64_t seed = 0;
  std::string config;
  std::string out_dir = ".";

  // phantom
  std::vector<std::size_t> split{20, 5, 10};
  std::vector<std::size_t> shape{96, 32, 32};
  PhantomSpec phantom;

  // convert / frangi / infer inputs
  std::string input;
  std::string output;
  std::string direction;
  float spacing_mm = 0.2695f;
  std::string fan = "tan";
  std::string reference;

  // frangi
  VesselnessParams frangi;
  float frangi_c = 0.0f;
  bool dark_on_bright = false;

  // train
  std::string data;
  std::string mode = "weak";
  TrainConfig train;
  std::vector<std::uint32_t> channels{8, 16, 32, 64, 64};
  std::uint32_t decoder_channels = 8;
  std::uint32_t norm_groups = 4;
  bool save_labels = false;

  // infer / eval
  std::string checkpoint;
  std::vector<std::string> inputs;
  std::string split_name = "test";
  InferConfig infer;
  std::string pred_dir;
  std::vector<std::string> preds;
  std::vector<std::string> gts;

  // flops
  std::string profile = "compact";
  std::string domain = "frustum";
  std::string flops_mode = "roi";
  std::vector<std::size_t> flops_shape;
  std::uint32_t flops_rois = 2;
  int span_axis = 1;
  std::vector<double> cross_extent;
  bool per_layer = false;
};

// --- value formatting -------------------------------------------------------

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}
std::string shortest(float v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

json to_json(const std::string& s) { return s; }
json to_json(bool b) { return b; }
json to_json(float f) { return json::parse(shortest(f)); }
json to_json(double d) { return json::parse(shortest(d)); }
template <typename T>
  requires std::is_integral_v<T>
json to_json(T v) {
  return v;
}
template <typename T>
json to_json(const std::vector<T>& v) {
  json a = json::array();
  for (const auto& x : v) a.push_back(to_json(x));
  return a;
}

std::vector<std::string> split_commas(const std::vector<std::string>& in) {
  std::vector<std::string> out;
  for (const auto& s : in) {
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(part);
  }
  return out;
}

std::vector<std::string> json_tokens(const std::string& key, const json& v) {
  if (v.is_array()) {
    std::vector<std::string> out;
    for (const auto& x : v) {
      if (x.is_array() || x.is_object()) throw UsageError("config key '" + key + "': nested values are not allowed");
      auto t = json_tokens(key, x);
      out.insert(out.end(), t.begin(), t.end());
    }
    return out;
  }
  if (v.is_string()) return {v.get<std::string>()};
  if (v.is_boolean()) return {v.get<bool>() ? "true" : "false"};
  if (v.is_number()) return {v.dump()};
  throw UsageError("config key '" + key + "': unsupported value " + v.dump());
}

bool same_token(const std::string& a, const std::string& b) {
  if (a == b) return true;
  double x = 0.0, y = 0.0;
  const auto rx = std::from_chars(a.data(), a.data() + a.size(), x);
  const auto ry = std::from_chars(b.data(), b.data() + b.size(), y);
  return rx.ec == std::errc{} && rx.ptr == a.data() + a.size() && ry.ec == std::errc{} &&
         ry.ptr == b.data() + b.size() && x == y;
}

// --- application ------------------------------------------------------------

struct Registered {
  std::string name;
  std::function<json()> value;
  bool flag = false;
};

class Cli {
 public:
  Cli() { build(); }
  Cli(const Cli&) = delete;
  Cli& operator=(const Cli&) = delete;

  CLI::App app{"fseg: weakly supervised catheter segmentation in frustum ultrasound"};
  Options o;

  [[nodiscard]] CLI::App* active() const {
    auto subs = app.get_subcommands();
    return subs.empty() ? nullptr : subs.front();
  }
  [[nodiscard]] const std::vector<Registered>& registered(const CLI::App* sub) const { return reg_.at(sub); }
  // Checked after config values are merged, so a config file can supply them.
  void check_required() const {
    const auto* s = active();
    for (const auto& name : required_.count(s) ? required_.at(s) : std::vector<std::string>{})
      if (s->get_option("--" + name)->count() == 0) throw UsageError("--" + name + " is required");
  }
  [[nodiscard]] bool is_flag(const CLI::App* sub, const std::string& name) const {
    for (const auto& r : reg_.at(sub))
      if (r.name == name) return r.flag;
    return false;
  }

 private:
  std::map<const CLI::App*, std::vector<Registered>> reg_;
  std::map<const CLI::App*, std::vector<std::string>> required_;

  template <typename T>
  CLI::Option* req(CLI::App* s, const std::string& name, T& var, const std::string& desc) {
    required_[s].push_back(name);
    return opt(s, name, var, desc);
  }

  template <typename T>
  CLI::Option* opt(CLI::App* s, const std::string& name, T& var, const std::string& desc) {
    reg_[s].push_back({name, [&var] { return to_json(var); }, false});
    auto* o = s->add_option("--" + name, var, desc);
    if constexpr (requires { var.begin(); } && !std::is_same_v<T, std::string>) o->delimiter(',');
    return o;
  }
  CLI::Option* flag(CLI::App* s, const std::string& name, bool& var, const std::string& desc) {
    reg_[s].push_back({name, [&var] { return to_json(var); }, true});
    return s->add_flag("--" + name, var, desc);
  }

  CLI::App* sub(const std::string& name, const std::string& desc) {
    auto* s = app.add_subcommand(name, desc);
    opt(s, "seed", o.seed, "RNG seed");
    s->add_option("--config", o.config, "JSON object of flag values (keys are flag names without dashes)")
        ->check(CLI::ExistingFile);
    s->add_option("--out-dir", o.out_dir, "output directory (created if missing)");
    return s;
  }

  void build();
};

void Cli::build() {
  app.require_subcommand(1);
  app.set_version_flag("--version", FSEG_VERSION);

  {
    auto* s = sub("phantom", "generate a seeded phantom dataset");
    opt(s, "split", o.split, "train,val,test counts")->expected(3);
    opt(s, "shape", o.shape, "frustum shape radial,azimuth,elevation")->expected(3);
    opt(s, "radial-start-mm", o.phantom.radial_start_mm, "probe apex to first sample (mm)");
    opt(s, "radial-step-mm", o.phantom.radial_step_mm, "radial sample spacing (mm)");
    opt(s, "azimuth-step-deg", o.phantom.azimuth_step_deg, "azimuth line spacing (degrees)");
    opt(s, "elevation-step-deg", o.phantom.elevation_step_deg, "elevation line spacing (degrees)");
    opt(s, "catheter-diameter-mm", o.phantom.catheter_diameter_mm, "tube diameter (mm)");
    opt(s, "bbox-margin", o.phantom.bbox_margin_vox, "loose bounding box margin (voxels)");
  }
  {
    auto* s = sub("convert", "scan-convert between frustum and Cartesian volumes");
    req(s, "input", o.input, "input volume")->check(CLI::ExistingFile);
    opt(s, "output", o.output, "output path (default: <out-dir>/<stem>.cvl or .frv)");
    req(s, "direction", o.direction, "f2c or c2f")->check(CLI::IsMember({"f2c", "c2f"}));
    opt(s, "spacing", o.spacing_mm, "Cartesian voxel spacing (mm) for f2c");
    opt(s, "fan", o.fan, "fan model: tan or spherical")->check(CLI::IsMember({"tan", "spherical"}));
    opt(s, "reference", o.reference, "frustum volume providing the target geometry for c2f")
        ->check(CLI::ExistingFile);
  }
  {
    auto* s = sub("frangi", "multiscale vesselness of a frustum volume");
    req(s, "input", o.input, "input frustum volume")->check(CLI::ExistingFile);
    opt(s, "output", o.output, "output path (default: <out-dir>/<stem>.vsl)");
    opt(s, "scales", o.frangi.scales, "Gaussian scales (voxels)");
    opt(s, "alpha", o.frangi.alpha, "plate sensitivity");
    opt(s, "beta", o.frangi.beta, "blob sensitivity");
    opt(s, "c", o.frangi_c, "structureness constant; 0 = half the largest Hessian norm");
    flag(s, "dark", o.dark_on_bright, "detect dark tubes on a bright background");
  }
  {
    auto* s = sub("train", "three-phase training from a phantom dataset manifest");
    auto& t = o.train;
    req(s, "data", o.data, "dataset directory or its manifest.txt")->check(CLI::ExistingPath);
    opt(s, "mode", o.mode, "label source: weak, supervised or bbox")
        ->check(CLI::IsMember({"weak", "supervised", "bbox"}));
    opt(s, "n-regions", t.n_regions, "positive (and negative) regions per volume in phase 1");
    opt(s, "m-rois-train", t.m_rois_train, "ROIs decoded per volume in training");
    opt(s, "m-rois-test", t.m_rois_test, "ROIs decoded per volume at inference");
    opt(s, "pos-weight", t.pos_weight, "positive weight of the localization loss");
    opt(s, "lr", t.lr, "AMSGrad learning rate");
    opt(s, "phase1-epochs", t.phase1_epochs, "classification epochs");
    opt(s, "phase2-epochs", t.phase2_epochs, "localization epochs");
    opt(s, "phase3-min", t.phase3_min, "joint epochs before the plateau test");
    opt(s, "phase3-max", t.phase3_max, "joint epoch cap");
    opt(s, "update-period", t.update_period, "epochs between pseudo-label refreshes");
    opt(s, "tau-loc", t.tau_loc, "localization map threshold");
    opt(s, "plateau-delta", t.plateau_delta, "minimum validation Dice gain over the window");
    opt(s, "plateau-window", t.plateau_window, "plateau window (epochs)");
    opt(s, "bbox-jitter", t.bbox_jitter_vox, "jitter of bbox-derived training ROIs (voxels)");
    opt(s, "eta", t.pseudo.eta, "history weight of the pseudo-label moving average");
    opt(s, "tau-u", t.pseudo.tau_u, "probability-map threshold for the CRF unary");
    opt(s, "crf-w-smooth", t.pseudo.crf.w_smooth, "CRF smoothness kernel weight");
    opt(s, "crf-theta-gamma", t.pseudo.crf.theta_gamma_vox, "CRF smoothness bandwidth (voxels)");
    opt(s, "crf-w-bilateral", t.pseudo.crf.w_bilateral, "CRF appearance kernel weight");
    opt(s, "crf-theta-alpha", t.pseudo.crf.theta_alpha_vox, "CRF appearance spatial bandwidth (voxels)");
    opt(s, "crf-theta-beta", t.pseudo.crf.theta_beta_intensity, "CRF appearance intensity bandwidth");
    opt(s, "crf-iterations", t.pseudo.crf.iterations, "CRF mean-field iterations");
    opt(s, "crf-window", t.pseudo.crf.window_radius_vox, "CRF message window radius (voxels)");
    opt(s, "frangi-scales", t.frangi.scales, "vesselness scales (voxels)");
    opt(s, "frangi-alpha", t.frangi.alpha, "vesselness plate sensitivity");
    opt(s, "frangi-beta", t.frangi.beta, "vesselness blob sensitivity");
    opt(s, "channels", o.channels, "encoder block channels")->expected(5);
    opt(s, "decoder-channels", o.decoder_channels, "decoder channels");
    opt(s, "norm-groups", o.norm_groups, "group-norm groups");
    flag(s, "save-labels", o.save_labels, "write final pseudo labels to <out-dir>/labels");
  }
  {
    auto* s = sub("infer", "segment frustum volumes with a trained checkpoint");
    req(s, "checkpoint", o.checkpoint, "network checkpoint")->check(CLI::ExistingFile);
    opt(s, "input", o.inputs, "frustum volume(s)")->check(CLI::ExistingFile);
    opt(s, "data", o.data, "dataset directory or manifest.txt (alternative to --input)")->check(CLI::ExistingPath);
    opt(s, "split", o.split_name, "dataset split with --data")->check(CLI::IsMember({"train", "val", "test"}));
    opt(s, "m-rois", o.infer.m_rois, "ROIs decoded per volume");
    opt(s, "tau-loc", o.infer.tau_loc, "localization map threshold");
    opt(s, "threshold", o.infer.threshold, "segmentation probability threshold");
  }
  {
    auto* s = sub("eval", "Dice and volumetric similarity of predicted masks");
    opt(s, "pred-dir", o.pred_dir, "directory of <id>.msk predictions (with --data)")->check(CLI::ExistingDirectory);
    opt(s, "data", o.data, "dataset directory or manifest.txt providing ground truth")->check(CLI::ExistingPath);
    opt(s, "split", o.split_name, "dataset split with --data")->check(CLI::IsMember({"train", "val", "test"}));
    opt(s, "pred", o.preds, "predicted mask file(s), paired with --gt")->check(CLI::ExistingFile);
    opt(s, "gt", o.gts, "ground-truth mask file(s)")->check(CLI::ExistingFile);
  }
  {
    auto* s = sub("flops", "static FLOPs count of the inference path");
    opt(s, "profile", o.profile, "compact or paper channel widths")->check(CLI::IsMember({"compact", "paper"}));
    opt(s, "domain", o.domain, "frustum or cartesian input")->check(CLI::IsMember({"frustum", "cartesian"}));
    opt(s, "mode", o.flops_mode, "whole (decoder on the full volume) or roi")->check(CLI::IsMember({"whole", "roi"}));
    opt(s, "shape", o.flops_shape, "input shape override")->expected(3);
    opt(s, "rois", o.flops_rois, "number of decoded ROIs");
    opt(s, "span-axis", o.span_axis, "axis the catheter runs along")->check(CLI::Range(0, 2));
    opt(s, "cross-extent", o.cross_extent, "catheter cross-section extent per axis (voxels)")->expected(3);
    flag(s, "per-layer", o.per_layer, "print every layer");
  }
}

// Appends config values that were not given on the command line; a value
// given both ways must agree.
std::vector<std::string> config_tokens(const Cli& cli, const CLI::App& sub, const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config " + path.string());
  json cfg;
  try {
    cfg = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config " + path.string() + ": " + e.what());
  }
  if (!cfg.is_object()) throw UsageError("config must be a JSON object");
  std::vector<std::string> extra;
  for (const auto& [key, value] : cfg.items()) {
    const CLI::Option* opt = key == "config" || key == "help" ? nullptr : sub.get_option_no_throw("--" + key);
    if (opt == nullptr) throw UsageError("unknown config key '" + key + "' for " + sub.get_name());
    if (value.is_array() && value.empty()) continue;  // unset vector option
    const auto tokens = json_tokens(key, value);
    if (cli.is_flag(&sub, key)) {
      if (tokens.size() != 1 || (tokens[0] != "true" && tokens[0] != "false"))
        throw UsageError("config key '" + key + "' must be a boolean");
      const bool want = tokens[0] == "true";
      if (opt->count() > 0) {
        if (!want) throw UsageError("config conflict for '" + key + "': flag given on the command line, config false");
      } else if (want) {
        extra.push_back("--" + key);
      }
      continue;
    }
    if (opt->count() > 0) {
      const auto given = split_commas(opt->results());
      const auto wanted = split_commas(tokens);
      bool same = given.size() == wanted.size();
      for (std::size_t i = 0; same && i < given.size(); ++i) same = same_token(given[i], wanted[i]);
      if (!same)
        throw UsageError("config conflict for '" + key + "': command line and " + path.string() + " disagree");
      continue;
    }
    extra.push_back("--" + key);
    std::string joined;
    for (std::size_t i = 0; i < tokens.size(); ++i) joined += (i ? "," : "") + tokens[i];
    extra.push_back(joined);
  }
  return extra;
}

// --- run bookkeeping --------------------------------------------------------

class Run {
 public:
  Run(fs::path out_dir, std::ostream& out) : out_dir_(std::move(out_dir)), out(out) {}

  const fs::path& dir() const { return out_dir_; }
  void input(const fs::path& p) { inputs_[p.string()] = hex64(hash_file(p)); }
  void output(const fs::path& p) { outputs_[p.string()] = hex64(hash_file(p)); }

  template <typename F>
  auto timed(const std::string& stage, F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    auto record = [&] {
      timings_[stage] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
      f();
      record();
    } else {
      auto r = f();
      record();
      return r;
    }
  }

  json inputs() const { return inputs_; }
  json outputs() const { return outputs_; }
  json timings() const { return timings_; }

 private:
  fs::path out_dir_;
  json inputs_ = json::object();
  json outputs_ = json::object();
  json timings_ = json::object();

 public:
  std::ostream& out;
};

fs::path manifest_file(const fs::path& data) { return fs::is_directory(data) ? data / "manifest.txt" : data; }

Shape3 to_shape(const std::vector<std::size_t>& v) { return {v.at(0), v.at(1), v.at(2)}; }

FanModel fan_model(const std::string& s) { return s == "spherical" ? FanModel::Spherical : FanModel::TanFan; }

fs::path default_output(const Options& o, const Run& run, const std::string& ext) {
  if (!o.output.empty()) return o.output;
  return run.dir() / (fs::path(o.input).stem().string() + ext);
}

// --- subcommands ------------------------------------------------------------

int cmd_phantom(const Options& o, Run& run) {
  PhantomSpec base = o.phantom;
  base.shape = to_shape(o.shape);
  const SplitSizes sizes{o.split[0], o.split[1], o.split[2]};
  if (sizes.total() == 0) throw UsageError("phantom: --split must request at least one volume");
  const auto ds = run.timed("generate", [&] { return generate_dataset(base, sizes.total(), o.seed, sizes); });
  run.timed("write", [&] { write_dataset(ds, run.dir()); });
  run.output(run.dir() / "manifest.txt");
  std::size_t voxels = 0;
  for (const auto& it : ds.items) {
    for (const char* ext : {".frv", ".msk", ".bbox"}) run.output(run.dir() / (it.id + ext));
    voxels += it.phantom.ground_truth.count_foreground();
  }
  run.out << "wrote " << ds.items.size() << " phantoms (" << sizes.train << "/" << sizes.val << "/" << sizes.test
          << ") to " << run.dir().string() << "; mean tube occupancy "
          << 100.0 * static_cast<double>(voxels) / static_cast<double>(ds.items.size() * base.shape.count())
          << "%\n";
  return kOk;
}

int cmd_convert(const Options& o, Run& run) {
  run.input(o.input);
  if (o.direction == "f2c") {
    const auto fv = load_frustum(o.input);
    const auto g = ProbeGeometry::for_volume(fv, fan_model(o.fan));
    const auto conv = run.timed("convert", [&] { return frustum_to_cartesian(fv, g, o.spacing_mm); });
    const auto path = default_output(o, run, ".cvl");
    auto foot = path;
    foot.replace_extension(".footprint.msk");
    save_volume(conv.volume, path);
    save_volume(conv.footprint, foot);
    run.output(path);
    run.output(foot);
    run.out << "frustum " << to_string(fv.shape()) << " -> cartesian " << to_string(conv.volume.shape()) << " at "
            << o.spacing_mm << " mm (" << static_cast<double>(conv.volume.shape().count()) /
                                              static_cast<double>(fv.shape().count())
            << "x voxels)\n";
    return kOk;
  }
  if (o.reference.empty()) throw UsageError("convert c2f needs --reference <frustum volume> for the target geometry");
  run.input(o.reference);
  const auto cv = load_cartesian(o.input);
  const auto ref = load_frustum(o.reference);
  const auto g = ProbeGeometry::for_volume(ref, fan_model(o.fan));
  const auto conv = run.timed("convert", [&] { return cartesian_to_frustum(cv, g, ref.shape()); });
  const auto path = default_output(o, run, ".frv");
  save_volume(conv.volume, path);
  run.output(path);
  run.out << "cartesian " << to_string(cv.shape()) << " -> frustum " << to_string(conv.volume.shape()) << "; "
          << conv.out_of_bounds << " samples outside the Cartesian grid\n";
  return kOk;
}

int cmd_frangi(const Options& o, Run& run) {
  run.input(o.input);
  const auto fv = load_frustum(o.input);
  VesselnessParams p = o.frangi;
  if (o.frangi_c > 0.0f) p.c = o.frangi_c;
  p.bright_on_dark = !o.dark_on_bright;
  FrustumVolume out = fv;
  out.data = run.timed("vesselness", [&] { return vesselness(normalize_01(fv), p); });
  out.intensity_max = 1.0f;
  const auto path = default_output(o, run, ".vsl");
  save_volume(out, path);
  run.output(path);
  float peak = 0.0f;
  for (float v : out.data.values()) peak = std::max(peak, v);
  run.out << "vesselness " << to_string(out.shape()) << ", peak " << peak << "\n";
  return kOk;
}

std::vector<TrainSample> load_split(const std::vector<ManifestEntry>& entries, Split split, Run& run) {
  std::vector<TrainSample> out;
  for (const auto& e : entries) {
    if (e.split != split) continue;
    run.input(e.volume);
    run.input(e.mask);
    out.push_back({e.id, load_frustum(e.volume), e.bbox, load_mask(e.mask)});
  }
  return out;
}

NetworkConfig network_config(const Options& o) {
  NetworkConfig nc;
  for (std::size_t i = 0; i < 5; ++i) nc.block_channels[i] = o.channels[i];
  nc.decoder_channels = o.decoder_channels;
  nc.norm_groups = o.norm_groups;
  nc.rng_seed = o.seed;
  return nc;
}

int cmd_train(const Options& o, Run& run) {
  TrainConfig cfg = o.train;
  cfg.seed = o.seed;
  cfg.label_mode = parse_label_mode(o.mode);
  validate(cfg);
  const auto nc = network_config(o);
  validate(nc);

  run.input(o.data);
  const auto entries = read_manifest(manifest_file(o.data));
  const auto train_set = load_split(entries, Split::Train, run);
  const auto val_set = load_split(entries, Split::Val, run);
  if (train_set.empty()) throw std::runtime_error("train: the manifest has no train volumes");

  const auto progress = [&](const EpochRecord& r) {
    run.out << r.phase << " " << r.epoch << " cls=" << r.loss.l_cls << " loc=" << r.loss.l_loc
            << " seg=" << r.loss.l_seg;
    if (r.val_dice) run.out << " val_dice=" << *r.val_dice;
    if (r.pseudo_dice) run.out << " pseudo_dice=" << *r.pseudo_dice;
    run.out << "\n" << std::flush;
  };
  const auto result = run.timed("train", [&] { return train(train_set, val_set, cfg, nc, nullptr, progress); });

  const auto ckpt = run.dir() / "checkpoint.nwt";
  save_checkpoint(result.network, ckpt);
  run.output(ckpt);
  const auto hist = run.dir() / "history.csv";
  {
    std::ofstream f(hist);
    f << format_history(result.history);
  }
  run.output(hist);
  const auto summary = run.dir() / "train_summary.txt";
  {
    std::ofstream f(summary);
    f << "mode " << o.mode << "\n";
    f << "best_epoch " << result.best_epoch << "\n";
    f << "best_val_dice " << result.best_val_dice << "\n";
    if (result.initial_pseudo_dice) f << "initial_pseudo_dice " << *result.initial_pseudo_dice << "\n";
    f << "crf_fallbacks " << result.fallback_ids.size();
    for (const auto& id : result.fallback_ids) f << " " << id;
    f << "\n";
    f << "diverged " << (result.diverged ? 1 : 0) << "\n";
    if (result.diverged) f << "abort_reason " << result.abort_reason << "\n";
  }
  run.output(summary);
  if (o.save_labels && !result.labels.empty()) {
    fs::create_directories(run.dir() / "labels");
    for (std::size_t i = 0; i < result.labels.size(); ++i) {
      const auto p = run.dir() / "labels" / (train_set[i].id + ".msk");
      save_volume(result.labels[i].y_current, p);
      run.output(p);
    }
  }
  run.out << "checkpoint " << ckpt.string() << " (best epoch " << result.best_epoch << ", val Dice "
          << result.best_val_dice << ")\n";
  if (result.diverged) {
    run.out << "training diverged: " << result.abort_reason << "\n";
    return kDiverged;
  }
  return kOk;
}

int cmd_infer(const Options& o, Run& run) {
  if (o.inputs.empty() == o.data.empty()) throw UsageError("infer: give either --input or --data");
  run.input(o.checkpoint);
  const auto net = load_checkpoint(o.checkpoint);
  std::vector<std::pair<std::string, fs::path>> items;
  if (!o.data.empty()) {
    run.input(o.data);
    const auto split = parse_split(o.split_name);
    for (const auto& e : read_manifest(manifest_file(o.data)))
      if (e.split == split) items.emplace_back(e.id, e.volume);
  } else {
    for (const auto& p : o.inputs) items.emplace_back(fs::path(p).stem().string(), p);
  }
  for (const auto& [id, path] : items) {
    run.input(path);
    const auto vol = load_frustum(path);
    const auto r = run.timed("infer " + id, [&] { return infer(net, vol, o.infer); });
    const auto out = run.dir() / (id + ".msk");
    save_volume(r.mask, out);
    run.output(out);
    run.out << id << " rois=" << r.rois.size() << " voxels=" << r.mask.count_foreground()
            << (r.whole_volume_fallback ? " whole-volume-fallback" : "") << "\n";
  }
  return kOk;
}

int cmd_eval(const Options& o, Run& run) {
  std::vector<std::tuple<std::string, fs::path, fs::path>> pairs;
  if (!o.pred_dir.empty() || !o.data.empty()) {
    if (o.pred_dir.empty() || o.data.empty()) throw UsageError("eval: --pred-dir and --data go together");
    run.input(o.data);
    const auto split = parse_split(o.split_name);
    for (const auto& e : read_manifest(manifest_file(o.data))) {
      if (e.split != split) continue;
      const auto pred = fs::path(o.pred_dir) / (e.id + ".msk");
      if (!fs::exists(pred)) throw std::runtime_error("eval: missing prediction " + pred.string());
      pairs.emplace_back(e.id, pred, e.mask);
    }
  } else {
    if (o.preds.empty() || o.preds.size() != o.gts.size())
      throw UsageError("eval: give --pred-dir with --data, or equal numbers of --pred and --gt");
    for (std::size_t i = 0; i < o.preds.size(); ++i)
      pairs.emplace_back(fs::path(o.preds[i]).stem().string(), o.preds[i], o.gts[i]);
  }
  std::vector<VolumeScore> rows;
  for (const auto& [id, pred, gt] : pairs) {
    run.input(pred);
    run.input(gt);
    const auto c = confusion(load_mask(pred), load_mask(gt));
    rows.push_back({id, dsc(c), vs(c)});
  }
  std::vector<std::pair<std::string, std::string>> meta;
  if (!o.data.empty()) meta = {{"data", o.data}, {"split", o.split_name}};
  const auto report = summarize(std::move(rows), meta);
  const auto csv = run.dir() / "eval.csv";
  const auto txt = run.dir() / "eval.txt";
  std::ofstream(csv) << format_csv(report);
  std::ofstream(txt) << format_table(report);
  run.output(csv);
  run.output(txt);
  run.out << format_table(report);
  return kOk;
}

int cmd_flops(const Options& o, Run& run) {
  const bool paper = o.profile == "paper";
  const bool cart = o.domain == "cartesian";
  NetworkConfig nc = paper ? NetworkConfig::paper_profile() : NetworkConfig{};
  FlopsOptions fo;
  std::vector<std::string> notes;
  if (cart) {
    for (auto& c : nc.block_channels) c /= 2;
    nc.decoder_channels /= 2;
    fo.total_stride = 8;
    notes.push_back("cartesian model: every filter count halved, total stride 8");
  }
  // Probe geometry of the target data (frustum) and of its scan conversion.
  const PhantomSpec phantom;
  Shape3 shape;
  double radial_step = 0.2695, angle_step = 1.003, radial_start = 0.0;
  if (!o.flops_shape.empty()) {
    shape = to_shape(o.flops_shape);
  } else if (paper) {
    shape = cart ? Shape3{360, 360, 336} : Shape3{360, 96, 96};
  } else {
    radial_start = phantom.radial_start_mm;
    shape = phantom.shape;
    if (cart) {
      const auto g = ProbeGeometry::for_shape(shape, phantom.radial_start_mm, phantom.radial_step_mm,
                                              phantom.azimuth_step_deg, phantom.elevation_step_deg);
      shape = plan_cartesian_grid(g, phantom.shape.d0, phantom.radial_step_mm).shape;
    }
  }
  notes.push_back("input " + to_string(shape));

  std::optional<std::vector<BoundingBox3>> rois;
  if (o.flops_mode == "roi") {
    std::array<double, 3> cross{};
    if (!o.cross_extent.empty()) {
      cross = {o.cross_extent[0], o.cross_extent[1], o.cross_extent[2]};
    } else {
      const double d = phantom.catheter_diameter_mm;
      if (cart) {
        const double spacing = paper ? 0.2 : phantom.radial_step_mm;
        cross = {d / spacing, d / spacing, d / spacing};
      } else {
        const double mid_depth = radial_start + 0.5 * static_cast<double>(shape.d0) * radial_step;
        const double angular = d / mid_depth * 180.0 / std::numbers::pi / angle_step;
        cross = {d / radial_step, angular, angular};
      }
    }
    rois = nominal_catheter_rois(shape, o.span_axis, cross, o.flops_rois);
    char buf[200];
    std::snprintf(buf, sizeof buf, "%u ROIs along axis %d, catheter cross-section %.1f x %.1f x %.1f voxels",
                  o.flops_rois, o.span_axis, cross[0], cross[1], cross[2]);
    notes.push_back(buf);
  }
  auto report = run.timed("count", [&] { return count_flops(nc, shape, rois, fo); });
  report.assumptions.insert(report.assumptions.end(), notes.begin(), notes.end());
  const auto text = format_flops(report, o.per_layer);
  const auto path = run.dir() / "flops.txt";
  std::ofstream(path) << text;
  run.output(path);
  run.out << text;
  return kOk;
}

// --- manifest ---------------------------------------------------------------

std::string out_dir_from_args(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--out-dir" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--out-dir=", 0) == 0) return args[i].substr(10);
  }
  return ".";
}

void write_manifest(const fs::path& dir, const json& m, std::ostream& err) {
  try {
    fs::create_directories(dir);
    std::ofstream f(dir / kManifestName);
    f << m.dump(2) << "\n";
    if (!f) err << "warning: could not write " << (dir / kManifestName).string() << "\n";
  } catch (const std::exception& e) {
    err << "warning: could not write manifest: " << e.what() << "\n";
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  const auto t0 = std::chrono::steady_clock::now();
  json manifest;
  manifest["tool"] = "fseg";
  manifest["version"] = FSEG_VERSION;
  json command = json::array({"fseg"});
  for (const auto& a : args) command.push_back(a);
  manifest["command"] = command;

  auto parse = [&](Cli& cli, std::vector<std::string> argv) {
    std::reverse(argv.begin(), argv.end());
    cli.app.parse(argv);
  };

  auto cli = std::make_unique<Cli>();
  std::set<std::string> from_config;
  try {
    parse(*cli, args);
    if (!cli->o.config.empty()) {
      const auto extra = config_tokens(*cli, *cli->active(), cli->o.config);
      for (std::size_t i = 0; i < extra.size(); ++i)
        if (extra[i].rfind("--", 0) == 0) from_config.insert(extra[i].substr(2));
      auto all = args;
      all.insert(all.end(), extra.begin(), extra.end());
      cli = std::make_unique<Cli>();
      parse(*cli, all);
    }
    cli->check_required();
  } catch (const CLI::CallForHelp& e) {
    return cli->app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return cli->app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return cli->app.exit(e, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    manifest["status"] = "usage-error";
    manifest["error"] = e.what();
    write_manifest(out_dir_from_args(args), manifest, err);
    return kUsage;
  }

  const auto& o = cli->o;
  const auto* sub = cli->active();
  manifest["subcommand"] = sub->get_name();
  manifest["seed"] = o.seed;
  json config = json::object();
  json source = json::object();
  json provisional = json::array();
  for (const auto& r : cli->registered(sub)) {
    config[r.name] = r.value();
    const auto* opt = sub->get_option_no_throw("--" + r.name);
    source[r.name] = from_config.count(r.name) ? "config" : (opt && opt->count() > 0 ? "command line" : "default");
    if (sub->get_name() == "train" && r.name.find("channels") == std::string::npos && r.name != "norm-groups" &&
        r.name != "data" && r.name != "mode" && r.name != "seed" && r.name != "save-labels" &&
        !kPublishedDefaults.count(r.name))
      provisional.push_back(r.name);
  }
  manifest["config"] = config;
  manifest["config_source"] = source;
  if (!provisional.empty()) manifest["provisional_defaults"] = provisional;
  manifest["out_dir"] = o.out_dir;

  Run run(o.out_dir, out);
  int code = kFailure;
  try {
    fs::create_directories(o.out_dir);
    const auto& name = sub->get_name();
    if (name == "phantom") code = cmd_phantom(o, run);
    else if (name == "convert") code = cmd_convert(o, run);
    else if (name == "frangi") code = cmd_frangi(o, run);
    else if (name == "train") code = cmd_train(o, run);
    else if (name == "infer") code = cmd_infer(o, run);
    else if (name == "eval") code = cmd_eval(o, run);
    else if (name == "flops") code = cmd_flops(o, run);
    manifest["status"] = code == kOk ? "ok" : (code == kDiverged ? "diverged" : "error");
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    manifest["status"] = "usage-error";
    manifest["error"] = e.what();
    code = kUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    manifest["status"] = "error";
    manifest["error"] = e.what();
    code = kFailure;
  }
  manifest["inputs"] = run.inputs();
  manifest["outputs"] = run.outputs();
  auto timings = run.timings();
  timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  manifest["timings_s"] = timings;
  write_manifest(o.out_dir, manifest, err);
  return code;
}

}  // namespace fseg::cli
