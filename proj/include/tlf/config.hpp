#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tlf {

// ---------------------------------------------------------------------------
// Flat `key = value` text maps (config files, manifests, CLI overrides)
// ---------------------------------------------------------------------------

using KvMap = std::map<std::string, std::string>;

inline std::string kv_trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline KvMap kv_parse_text(std::istream& is) {
  KvMap map;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = kv_trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key = value");
    map[kv_trim(t.substr(0, eq))] = kv_trim(t.substr(eq + 1));
  }
  return map;
}

inline KvMap kv_load_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file " + path);
  return kv_parse_text(is);
}

inline void kv_write(std::ostream& os, const KvMap& map) {
  for (const auto& [k, v] : map) os << k << " = " << v << "\n";
}

inline void kv_save_file(const KvMap& map, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write config file " + path);
  kv_write(os, map);
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string item;
  std::istringstream iss(s);
  while (std::getline(iss, item, ',')) {
    const std::string t = kv_trim(item);
    if (!t.empty()) out.push_back(std::stoi(t));
  }
  return out;
}

inline std::string format_int_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw std::runtime_error("invalid boolean value: " + s);
}

}  // namespace detail

// Two-way binding between config structs and a KvMap. Each config lists its
// fields once; the same listing loads, saves, and enumerates valid keys.
class KvBinder {
 public:
  enum class Op { Load, Save };

  KvBinder(Op op, KvMap& map) : op_(op), map_(&map) {}

  void field(const std::string& key, int& v) {
    if (op_ == Op::Save)
      (*map_)[key] = std::to_string(v);
    else if (auto it = map_->find(key); it != map_->end())
      v = std::stoi(it->second);
  }
  void field(const std::string& key, std::uint64_t& v) {
    if (op_ == Op::Save)
      (*map_)[key] = std::to_string(v);
    else if (auto it = map_->find(key); it != map_->end())
      v = std::stoull(it->second);
  }
  void field(const std::string& key, double& v) {
    if (op_ == Op::Save)
      (*map_)[key] = detail::fmt_double(v);
    else if (auto it = map_->find(key); it != map_->end())
      v = std::stod(it->second);
  }
  void field(const std::string& key, bool& v) {
    if (op_ == Op::Save)
      (*map_)[key] = v ? "true" : "false";
    else if (auto it = map_->find(key); it != map_->end())
      v = detail::parse_bool(it->second);
  }
  void field(const std::string& key, std::string& v) {
    if (op_ == Op::Save)
      (*map_)[key] = v;
    else if (auto it = map_->find(key); it != map_->end())
      v = it->second;
  }
  void field(const std::string& key, std::vector<int>& v) {
    if (op_ == Op::Save)
      (*map_)[key] = detail::format_int_list(v);
    else if (auto it = map_->find(key); it != map_->end())
      v = detail::parse_int_list(it->second);
  }

 private:
  Op op_;
  KvMap* map_;
};

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

enum class AttentionVariant { None, Mean, SpatialConv, SpatialConvLstm };

inline std::string attention_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::None: return "none";
    case AttentionVariant::Mean: return "mean";
    case AttentionVariant::SpatialConv: return "spatial_conv";
    case AttentionVariant::SpatialConvLstm: return "spatial_convlstm";
  }
  return "none";
}

inline AttentionVariant attention_from_name(std::string s) {
  std::replace(s.begin(), s.end(), '-', '_');
  if (s == "none") return AttentionVariant::None;
  if (s == "mean") return AttentionVariant::Mean;
  if (s == "spatial_conv") return AttentionVariant::SpatialConv;
  if (s == "spatial_convlstm") return AttentionVariant::SpatialConvLstm;
  throw std::runtime_error("unknown attention variant: " + s);
}

struct ModelConfig {
  int frame_size = 64;    // square frames, W = H
  int classes = 4;        // 0 sky, 1 cloud, 2 sun, 3 tracker
  int cloud_class = 1;
  int repr_size = 8;      // representation extent h' = w'
  int look_back = 6;      // frames consumed and horizons produced
  std::vector<int> convlstm_filters = {128, 64, 64};
  int convlstm_kernel = 5;
  AttentionVariant attention = AttentionVariant::SpatialConv;
  std::vector<int> encoder_channels = {16, 32, 64, 64};
  int dilation = 2;       // dilation of the final encoder block
  int attention_filters = 64;
  bool attention_all_channels = false;  // ablation: attend over every channel
  bool encoder_trainable_in_future = false;
  int measure_filters = 128;
  int ar_context = 6;     // autoregressive baseline: representations consumed
  int ar_filters = 64;

  int downsample_factor() const { return frame_size / repr_size; }

  // Stride-2 encoder blocks needed to reach the representation extent.
  int stride2_blocks() const {
    int f = downsample_factor(), n = 0;
    while (f > 1) {
      if (f % 2 != 0) throw std::invalid_argument("downsample factor must be a power of two");
      f /= 2;
      ++n;
    }
    return n;
  }

  void validate() const {
    if (frame_size <= 0 || repr_size <= 0 || frame_size % repr_size != 0)
      throw std::invalid_argument("frame_size must be a positive multiple of repr_size");
    if (look_back < 1) throw std::invalid_argument("look_back must be >= 1");
    if (classes < 2) throw std::invalid_argument("classes must be >= 2");
    if (cloud_class < 0 || cloud_class >= classes)
      throw std::invalid_argument("cloud_class out of range");
    if (static_cast<int>(encoder_channels.size()) != stride2_blocks() + 1)
      throw std::invalid_argument("encoder_channels must list one block per stride-2 stage "
                                  "plus the dilated block");
    if (convlstm_filters.empty()) throw std::invalid_argument("convlstm_filters is empty");
    if (convlstm_kernel % 2 == 0) throw std::invalid_argument("convlstm_kernel must be odd");
  }

  void bind(KvBinder& b) {
    b.field("model.frame_size", frame_size);
    b.field("model.classes", classes);
    b.field("model.cloud_class", cloud_class);
    b.field("model.repr_size", repr_size);
    b.field("model.look_back", look_back);
    b.field("model.convlstm_filters", convlstm_filters);
    b.field("model.convlstm_kernel", convlstm_kernel);
    std::string att = attention_name(attention);
    b.field("model.attention", att);
    attention = attention_from_name(att);
    b.field("model.encoder_channels", encoder_channels);
    b.field("model.dilation", dilation);
    b.field("model.attention_filters", attention_filters);
    b.field("model.attention_all_channels", attention_all_channels);
    b.field("model.encoder_trainable_in_future", encoder_trainable_in_future);
    b.field("model.measure_filters", measure_filters);
    b.field("model.ar_context", ar_context);
    b.field("model.ar_filters", ar_filters);
  }
};

// ---------------------------------------------------------------------------
// Loss configuration
// ---------------------------------------------------------------------------

enum class FocalForm { Canonical, AsPrinted };

struct LossConfig {
  double lambda = 1.0;   // segmentation weight against the measure term
  double gamma = 2.0;
  double alpha = 0.5;
  double m = 100.0;      // log-cosh magnification
  double irradiance_scale = 1000.0;  // W/m^2 that maps to 1.0 normalized
  FocalForm focal_form = FocalForm::Canonical;

  void validate() const {
    if (gamma < 0.0) throw std::invalid_argument("gamma must be >= 0");
    if (alpha <= 0.0 || alpha > 1.0) throw std::invalid_argument("alpha must be in (0,1]");
    if (m <= 0.0) throw std::invalid_argument("m must be > 0");
    if (lambda < 0.0) throw std::invalid_argument("lambda must be >= 0");
  }

  void bind(KvBinder& b) {
    b.field("loss.lambda", lambda);
    b.field("loss.gamma", gamma);
    b.field("loss.alpha", alpha);
    b.field("loss.m", m);
    b.field("loss.irradiance_scale", irradiance_scale);
    std::string form = focal_form == FocalForm::Canonical ? "canonical" : "as_printed";
    b.field("loss.focal_form", form);
    if (form == "canonical")
      focal_form = FocalForm::Canonical;
    else if (form == "as_printed")
      focal_form = FocalForm::AsPrinted;
    else
      throw std::runtime_error("unknown focal form: " + form);
  }
};

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 4;
  double base_lr = 0.002;
  double lr_decay = 0.9;        // geometric decay per epoch
  double weight_decay = 5e-5;   // convolution kernels only
  int epochs = 10;
  int ar_epochs = 10;           // autoregressive baseline budget
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (lr_decay <= 0.0 || lr_decay > 1.0) throw std::invalid_argument("lr_decay must be in (0,1]");
    if (weight_decay < 0.0) throw std::invalid_argument("weight_decay must be >= 0");
    if (base_lr <= 0.0) throw std::invalid_argument("base_lr must be > 0");
    if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  }

  void bind(KvBinder& b) {
    b.field("train.batch_size", batch_size);
    b.field("train.base_lr", base_lr);
    b.field("train.lr_decay", lr_decay);
    b.field("train.weight_decay", weight_decay);
    b.field("train.epochs", epochs);
    b.field("train.ar_epochs", ar_epochs);
  }
};

// ---------------------------------------------------------------------------
// Synthetic data configuration
// ---------------------------------------------------------------------------

struct SynthConfig {
  int frame_size = 64;
  int steps = 21;            // frames per sequence
  int count = 1;             // sequences to generate
  int vx = 3;                // cloud velocity, px/step
  int vy = 0;
  double growth = 0.0;       // blob radius growth, px/step
  int blobs_min = 3;
  int blobs_max = 3;
  double radius_min = 6.0;   // thresholded disc radius, px
  double radius_max = 6.0;
  double sun_radius = 5.0;
  double sun_inset = 0.12;   // horizontal arc margin, fraction of frame
  double tracker_radius = 3.0;  // occluder disc on the sun
  double tracker_arm = 3.0;     // arm half-width, px
  double kappa = 0.7;        // irradiance attenuation per unit cloud cover
  double noise_r = 0.02;     // irradiance noise (clamped at 3 sigma)
  double noise_rgb = 0.03;   // frame rendering noise
  bool wraparound = true;
  std::uint64_t seed = 1;

  void validate(int classes = 4) const {
    (void)classes;
    if (frame_size <= 0) throw std::invalid_argument("frame_size must be positive");
    if (steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (radius_min > radius_max || radius_min <= 0.0)
      throw std::invalid_argument("invalid blob radius range");
    if (radius_max >= frame_size)
      throw std::invalid_argument("blob radius must be smaller than the frame");
    if (blobs_min < 0 || blobs_min > blobs_max)
      throw std::invalid_argument("invalid blob count range");
    if (kappa <= 0.0 || kappa > 1.0) throw std::invalid_argument("kappa must be in (0,1]");
  }

  void bind(KvBinder& b) {
    b.field("synth.frame_size", frame_size);
    b.field("synth.steps", steps);
    b.field("synth.count", count);
    b.field("synth.vx", vx);
    b.field("synth.vy", vy);
    b.field("synth.growth", growth);
    b.field("synth.blobs_min", blobs_min);
    b.field("synth.blobs_max", blobs_max);
    b.field("synth.radius_min", radius_min);
    b.field("synth.radius_max", radius_max);
    b.field("synth.sun_radius", sun_radius);
    b.field("synth.sun_inset", sun_inset);
    b.field("synth.tracker_radius", tracker_radius);
    b.field("synth.tracker_arm", tracker_arm);
    b.field("synth.kappa", kappa);
    b.field("synth.noise_r", noise_r);
    b.field("synth.noise_rgb", noise_rgb);
    b.field("synth.wraparound", wraparound);
    b.field("synth.seed", seed);
  }
};

}  // namespace tlf
