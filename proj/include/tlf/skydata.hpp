#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlf/config.hpp"
#include "tlf/metrics.hpp"
#include "tlf/pnm.hpp"
#include "tlf/rng.hpp"
#include "tlf/tensor.hpp"

namespace tlf {

// Class labels used by the synthetic scenes.
enum SkyClass : std::uint8_t { kSky = 0, kCloud = 1, kSun = 2, kTracker = 3 };

struct VideoSequence {
  std::vector<Tensor> frames;          // each [H,W,3], values in [0,1]
  std::vector<Labels> masks;           // H*W class labels per frame
  std::vector<double> irradiance;      // normalized, clear-sky peak = 1
  std::vector<long long> timestamps;   // minutes, spaced by 10
  int frame_size = 0;

  std::size_t size() const { return frames.size(); }

  void check_lengths() const {
    if (masks.size() != frames.size() || irradiance.size() != frames.size() ||
        timestamps.size() != frames.size())
      throw std::runtime_error("video sequence: per-frame arrays differ in length");
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] <= timestamps[i - 1])
        throw std::runtime_error("video sequence: non-monotonic timestamps");
  }

  // Generated sequences additionally keep the exact 10-minute cadence;
  // archive days may contain gaps and only satisfy check_lengths().
  void validate() const {
    check_lengths();
    for (std::size_t i = 1; i < timestamps.size(); ++i)
      if (timestamps[i] != timestamps[i - 1] + 10)
        throw std::runtime_error("video sequence: timestamps must increase by 10 minutes");
  }
};

// ---------------------------------------------------------------------------
// Scene geometry shared by the generator and the advection oracle
// ---------------------------------------------------------------------------

namespace synth_detail {

struct SunPos {
  double x, y;
};

// The sun tracks a fixed arc: left to right across the sequence, elevation
// following the same half-sine as the clear-sky curve.
inline SunPos sun_position(const SynthConfig& cfg, int step) {
  const double u = (step + 0.5) / cfg.steps;
  const double elevation = std::sin(3.14159265358979323846 * u);
  const double x = cfg.frame_size * (cfg.sun_inset + (1.0 - 2.0 * cfg.sun_inset) * u);
  const double y = cfg.frame_size * (0.88 - 0.68 * elevation);
  return {x, y};
}

inline double clearsky(const SynthConfig& cfg, int step) {
  return std::sin(3.14159265358979323846 * (step + 0.5) / cfg.steps);
}

inline bool in_sun(const SynthConfig& cfg, const SunPos& s, int x, int y) {
  if (cfg.sun_radius <= 0.0) return false;
  const double dx = x - s.x, dy = y - s.y;
  return dx * dx + dy * dy <= cfg.sun_radius * cfg.sun_radius;
}

// Occluder disc on the sun plus the arm running down to the frame edge.
inline bool in_tracker(const SynthConfig& cfg, const SunPos& s, int x, int y) {
  if (cfg.sun_radius <= 0.0) return false;
  const double dx = x - s.x, dy = y - s.y;
  if (cfg.tracker_radius > 0.0 && dx * dx + dy * dy <= cfg.tracker_radius * cfg.tracker_radius)
    return true;
  return cfg.tracker_arm > 0.0 && std::fabs(dx) <= cfg.tracker_arm && y >= s.y;
}

struct Blob {
  double cx, cy, radius;
};

// Gaussian bump per blob, thresholded at 0.5 so `radius` is the disc radius.
inline bool in_cloud(const SynthConfig& cfg, const std::vector<Blob>& blobs, int step, int x,
                     int y) {
  const int n = cfg.frame_size;
  for (const auto& b : blobs) {
    const double r = b.radius + cfg.growth * step;
    if (r <= 0.0) continue;
    double cx = b.cx + cfg.vx * static_cast<double>(step);
    double cy = b.cy + cfg.vy * static_cast<double>(step);
    double dx, dy;
    if (cfg.wraparound) {
      cx = std::fmod(cx, n);
      if (cx < 0) cx += n;
      cy = std::fmod(cy, n);
      if (cy < 0) cy += n;
      dx = std::fabs(x - cx);
      dy = std::fabs(y - cy);
      dx = std::min(dx, n - dx);
      dy = std::min(dy, n - dy);
    } else {
      dx = x - cx;
      dy = y - cy;
    }
    const double sigma2 = r * r / (2.0 * std::log(2.0));
    if (std::exp(-(dx * dx + dy * dy) / (2.0 * sigma2)) >= 0.5) return true;
  }
  return false;
}

inline constexpr double kClassColor[4][3] = {
    {0.30, 0.47, 0.80},  // sky
    {0.82, 0.82, 0.84},  // cloud
    {1.00, 0.92, 0.55},  // sun
    {0.08, 0.08, 0.08},  // tracker
};

}  // namespace synth_detail

// ---------------------------------------------------------------------------
// Synthetic sequence generation
// ---------------------------------------------------------------------------

struct SynthOutput {
  VideoSequence seq;
  // Pre-occlusion cloud masks (kCloud where the cloud field covers the pixel,
  // kSky elsewhere); the advection oracle is exact on these.
  std::vector<Labels> raw_cloud;
};

inline SynthOutput synth_sequence_full(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int n = cfg.frame_size;

  std::vector<synth_detail::Blob> blobs;
  const int nblobs = rng.uniform_int(cfg.blobs_min, cfg.blobs_max);
  for (int i = 0; i < nblobs; ++i) {
    synth_detail::Blob b;
    b.cx = rng.uniform(0.0, n);
    b.cy = rng.uniform(0.0, n);
    b.radius = rng.uniform(cfg.radius_min, cfg.radius_max);
    blobs.push_back(b);
  }

  SynthOutput out;
  out.seq.frame_size = n;
  for (int k = 0; k < cfg.steps; ++k) {
    const auto sun = synth_detail::sun_position(cfg, k);
    Labels mask(static_cast<std::size_t>(n) * n, kSky);
    Labels raw(static_cast<std::size_t>(n) * n, kSky);
    long long cloud_pixels = 0;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * n + x;
        const bool cloud = synth_detail::in_cloud(cfg, blobs, k, x, y);
        if (cloud) raw[idx] = kCloud;
        // Occlusion priority: tracker over sun over cloud over sky.
        if (synth_detail::in_tracker(cfg, sun, x, y))
          mask[idx] = kTracker;
        else if (synth_detail::in_sun(cfg, sun, x, y))
          mask[idx] = kSun;
        else if (cloud)
          mask[idx] = kCloud;
        if (mask[idx] == kCloud) ++cloud_pixels;
      }

    std::vector<double> rgb(static_cast<std::size_t>(n) * n * 3);
    for (std::size_t idx = 0; idx < mask.size(); ++idx)
      for (int c = 0; c < 3; ++c) {
        double v = synth_detail::kClassColor[mask[idx]][c];
        if (cfg.noise_rgb > 0.0) v += rng.normal(0.0, cfg.noise_rgb);
        rgb[idx * 3 + c] = std::min(std::max(v, 0.0), 1.0);
      }

    const double cover = static_cast<double>(cloud_pixels) / (static_cast<double>(n) * n);
    double noise = cfg.noise_r > 0.0 ? rng.normal(0.0, cfg.noise_r) : 0.0;
    noise = std::min(std::max(noise, -3.0 * cfg.noise_r), 3.0 * cfg.noise_r);
    const double r =
        std::max(0.0, synth_detail::clearsky(cfg, k) * (1.0 - cfg.kappa * cover) + noise);

    out.seq.frames.push_back(Tensor::leaf({n, n, 3}, std::move(rgb), false));
    out.seq.masks.push_back(std::move(mask));
    out.raw_cloud.push_back(std::move(raw));
    out.seq.irradiance.push_back(r);
    out.seq.timestamps.push_back(static_cast<long long>(k) * 10);
  }
  return out;
}

inline VideoSequence synth_sequence(const SynthConfig& cfg) {
  return synth_sequence_full(cfg).seq;
}

// Cloud-cover fraction of a mask (pixels labeled kCloud).
inline double cloud_cover(const Labels& mask) {
  long long c = 0;
  for (auto v : mask) c += v == kCloud;
  return static_cast<double>(c) / static_cast<double>(mask.size());
}

// ---------------------------------------------------------------------------
// Advection oracle: the ground-truth future mask under pure translation.
// Cloud pixels of the given mask shift cyclically by v*steps; sun and tracker
// are re-rendered from their analytic trajectories at base_step + steps.
// Exact (IoU 1) when fed pre-occlusion cloud masks and growth is zero.
// ---------------------------------------------------------------------------

inline Labels advect_oracle(const SynthConfig& cfg, const Labels& mask, int base_step,
                            int steps) {
  const int n = cfg.frame_size;
  if (static_cast<int>(mask.size()) != n * n)
    throw std::invalid_argument("advect_oracle: mask extent does not match config");
  Labels out(mask.size(), kSky);
  const int sx = ((cfg.vx * steps) % n + n) % n;
  const int sy = ((cfg.vy * steps) % n + n) % n;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      if (mask[static_cast<std::size_t>(y) * n + x] != kCloud) continue;
      const int ty = (y + sy) % n;
      const int tx = (x + sx) % n;
      out[static_cast<std::size_t>(ty) * n + tx] = kCloud;
    }
  const auto sun = synth_detail::sun_position(cfg, base_step + steps);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const std::size_t idx = static_cast<std::size_t>(y) * n + x;
      if (synth_detail::in_tracker(cfg, sun, x, y))
        out[idx] = kTracker;
      else if (synth_detail::in_sun(cfg, sun, x, y))
        out[idx] = kSun;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset I/O: <root>/<seq_id>/frame_%05d.ppm, mask_%05d.pgm, meta.csv
// ---------------------------------------------------------------------------

namespace detail {

inline std::string indexed_name(const char* stem, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", stem, i, ext);
  return buf;
}

inline std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::min(std::max(v, 0.0), 1.0) * 255.0));
}

}  // namespace detail

inline void write_sequence(const VideoSequence& seq, const std::string& dir) {
  seq.check_lengths();
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const int n = seq.frame_size;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    ImageU8 frame;
    frame.width = frame.height = n;
    frame.channels = 3;
    frame.pixels.resize(static_cast<std::size_t>(n) * n * 3);
    const double* src = seq.frames[i].data();
    for (std::size_t j = 0; j < frame.pixels.size(); ++j)
      frame.pixels[j] = detail::quantize(src[j]);
    write_pnm(frame, dir + "/" + detail::indexed_name("frame", static_cast<int>(i), "ppm"));

    ImageU8 mask;
    mask.width = mask.height = n;
    mask.channels = 1;
    mask.pixels = seq.masks[i];
    write_pnm(mask, dir + "/" + detail::indexed_name("mask", static_cast<int>(i), "pgm"));
  }
  std::ofstream meta(dir + "/meta.csv");
  if (!meta) throw std::runtime_error("write_sequence: cannot write meta.csv in " + dir);
  meta << "index,timestamp_min,irradiance\n";
  char buf[64];
  for (std::size_t i = 0; i < seq.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", seq.irradiance[i]);
    meta << i << "," << seq.timestamps[i] << "," << buf << "\n";
  }
}

inline VideoSequence read_sequence(const std::string& dir, int classes = 4) {
  std::ifstream meta(dir + "/meta.csv");
  if (!meta) throw std::runtime_error("read_sequence: missing meta.csv in " + dir);
  VideoSequence seq;
  std::string line;
  if (!std::getline(meta, line) || line.rfind("index,timestamp_min,irradiance", 0) != 0)
    throw std::runtime_error("read_sequence: malformed meta.csv header in " + dir);
  std::vector<int> indices;
  while (std::getline(meta, line)) {
    if (kv_trim(line).empty()) continue;
    std::istringstream row(line);
    std::string idx, ts, irr;
    if (!std::getline(row, idx, ',') || !std::getline(row, ts, ',') || !std::getline(row, irr))
      throw std::runtime_error("read_sequence: malformed meta.csv row in " + dir);
    indices.push_back(std::stoi(idx));
    seq.timestamps.push_back(std::stoll(ts));
    seq.irradiance.push_back(std::stod(irr));
  }
  for (std::size_t i = 1; i < seq.timestamps.size(); ++i)
    if (seq.timestamps[i] <= seq.timestamps[i - 1])
      throw std::runtime_error("read_sequence: non-monotonic timestamps in " + dir);
  for (int idx : indices) {
    ImageU8 frame = read_pnm(dir + "/" + detail::indexed_name("frame", idx, "ppm"));
    if (frame.channels != 3)
      throw std::runtime_error("read_sequence: frame is not a P6 file in " + dir);
    if (seq.frame_size == 0) seq.frame_size = frame.width;
    if (frame.width != seq.frame_size || frame.height != seq.frame_size)
      throw std::runtime_error("read_sequence: inconsistent frame extents in " + dir);
    std::vector<double> vals(frame.pixels.size());
    for (std::size_t j = 0; j < vals.size(); ++j) vals[j] = frame.pixels[j] / 255.0;
    seq.frames.push_back(
        Tensor::leaf({frame.height, frame.width, 3}, std::move(vals), false));

    ImageU8 mask = read_pnm(dir + "/" + detail::indexed_name("mask", idx, "pgm"));
    if (mask.channels != 1)
      throw std::runtime_error("read_sequence: mask is not a P5 file in " + dir);
    if (mask.width != seq.frame_size || mask.height != seq.frame_size)
      throw std::runtime_error("read_sequence: mask extent mismatch in " + dir);
    for (auto v : mask.pixels)
      if (v >= classes)
        throw std::runtime_error("read_sequence: mask value " + std::to_string(v) +
                                 " outside class range in " + dir);
    seq.masks.push_back(std::move(mask.pixels));
  }
  // The CSV must describe exactly the frames present.
  if (seq.frames.size() != indices.size() || indices.empty())
    throw std::runtime_error("read_sequence: empty sequence in " + dir);
  seq.check_lengths();
  return seq;
}

inline std::string sequence_dir_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "seq_%05d", i);
  return buf;
}

inline void write_dataset(const std::vector<VideoSequence>& seqs, const std::string& root,
                          const SynthConfig* sidecar = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(root);
  for (std::size_t i = 0; i < seqs.size(); ++i)
    write_sequence(seqs[i], root + "/" + sequence_dir_name(static_cast<int>(i)));
  if (sidecar) {
    KvMap map;
    KvBinder b(KvBinder::Op::Save, map);
    SynthConfig copy = *sidecar;
    copy.bind(b);
    kv_save_file(map, root + "/synth.cfg");
  }
}

inline std::vector<VideoSequence> read_dataset(const std::string& root, int classes = 4) {
  namespace fs = std::filesystem;
  if (!fs::exists(root)) throw std::runtime_error("read_dataset: no such directory " + root);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.csv")) dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<VideoSequence> seqs;
  seqs.reserve(dirs.size());
  for (const auto& d : dirs) seqs.push_back(read_sequence(d, classes));
  return seqs;
}

// ---------------------------------------------------------------------------
// Real-archive loader: one day per subdirectory in the same on-disk scheme.
// Yields sliding windows of 2t consecutive frames at exact 10-minute spacing,
// never straddling gaps. Split tagging uses the leading year in the day name.
// ---------------------------------------------------------------------------

struct ArchiveWindow {
  std::string day_dir;
  int start = 0;
  int length = 0;
  int year = 0;

  VideoSequence load(int classes = 4) const {
    VideoSequence day = read_sequence(day_dir, classes);
    VideoSequence out;
    out.frame_size = day.frame_size;
    for (int i = start; i < start + length; ++i) {
      out.frames.push_back(day.frames[static_cast<std::size_t>(i)]);
      out.masks.push_back(day.masks[static_cast<std::size_t>(i)]);
      out.irradiance.push_back(day.irradiance[static_cast<std::size_t>(i)]);
      out.timestamps.push_back(day.timestamps[static_cast<std::size_t>(i)]);
    }
    return out;
  }
};

inline std::vector<ArchiveWindow> load_real_archive(const std::string& root, int look_back,
                                                    bool daylight_filter, int classes = 4) {
  namespace fs = std::filesystem;
  std::vector<ArchiveWindow> windows;
  if (!fs::exists(root)) return windows;
  std::vector<std::string> days;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "meta.csv")) days.push_back(e.path().string());
  std::sort(days.begin(), days.end());
  const int span = 2 * look_back;
  for (const auto& day : days) {
    VideoSequence meta = read_sequence(day, classes);
    int year = 0;
    const std::string name = fs::path(day).filename().string();
    if (name.size() >= 4 && std::isdigit(static_cast<unsigned char>(name[0])))
      year = std::stoi(name.substr(0, 4));
    const int n = static_cast<int>(meta.size());
    for (int s = 0; s + span <= n; ++s) {
      bool ok = true;
      for (int i = 1; i < span && ok; ++i)
        ok = meta.timestamps[static_cast<std::size_t>(s + i)] ==
             meta.timestamps[static_cast<std::size_t>(s + i - 1)] + 10;
      if (ok && daylight_filter)
        for (int i = 0; i < span && ok; ++i)
          ok = meta.irradiance[static_cast<std::size_t>(s + i)] > 0.0;
      if (ok) windows.push_back({day, s, span, year});
    }
  }
  return windows;
}

}  // namespace tlf
