#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tlf/tensor.hpp"

namespace tlf {

// Named parameters and running-stat buffers of a model, in name order.
// Names are stable across runs, so the serialized form is byte-reproducible.
class Registry {
 public:
  struct Param {
    Tensor tensor;
    bool decay = false;      // L2 weight decay applies (convolution kernels)
    bool trainable = true;
  };

  void add_param(const std::string& name, Tensor t, bool decay, bool trainable = true) {
    if (!params_.emplace(name, Param{std::move(t), decay, trainable}).second)
      throw std::invalid_argument("registry: duplicate parameter " + name);
  }

  void add_buffer(const std::string& name, std::vector<double>* data) {
    if (!buffers_.emplace(name, data).second)
      throw std::invalid_argument("registry: duplicate buffer " + name);
  }

  std::map<std::string, Param>& params() { return params_; }
  const std::map<std::string, Param>& params() const { return params_; }
  const std::map<std::string, std::vector<double>*>& buffers() const { return buffers_; }

  Param& param(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("registry: unknown parameter " + name);
    return it->second;
  }

  long long trainable_count() const {
    long long n = 0;
    for (const auto& [name, p] : params_)
      if (p.trainable) n += p.tensor.size();
    return n;
  }

  long long total_count() const {
    long long n = 0;
    for (const auto& [name, p] : params_) n += p.tensor.size();
    return n;
  }

 private:
  std::map<std::string, Param> params_;
  std::map<std::string, std::vector<double>*> buffers_;
};

// ---------------------------------------------------------------------------
// Checkpoint archive: "TLF1" magic, record count, then (name, shape, f64 data)
// records, all little-endian.
// ---------------------------------------------------------------------------

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_f64(std::ostream& os, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double read_f64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace detail

struct CheckpointRecord {
  Shape shape;
  std::vector<double> data;
};

using CheckpointMap = std::map<std::string, CheckpointRecord>;

inline void save_checkpoint_map(const CheckpointMap& records, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  os.write("TLF1", 4);
  detail::write_u32(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, rec] : records) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(rec.shape.size()));
    for (int d : rec.shape) detail::write_u32(os, static_cast<std::uint32_t>(d));
    for (double v : rec.data) detail::write_f64(os, v);
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline CheckpointMap load_checkpoint_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "TLF1", 4) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint32_t count = detail::read_u32(is);
  CheckpointMap records;
  for (std::uint32_t r = 0; r < count; ++r) {
    const std::uint32_t name_len = detail::read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = detail::read_u32(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<int>(detail::read_u32(is));
    CheckpointRecord rec;
    rec.shape = shape;
    rec.data.resize(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : rec.data) v = detail::read_f64(is);
    if (!is) throw std::runtime_error("checkpoint: truncated record " + name);
    records.emplace(std::move(name), std::move(rec));
  }
  return records;
}

inline CheckpointMap snapshot(const Registry& reg) {
  CheckpointMap records;
  for (const auto& [name, p] : reg.params())
    records.emplace(name, CheckpointRecord{p.tensor.shape(), p.tensor.values()});
  for (const auto& [name, buf] : reg.buffers())
    records.emplace(name, CheckpointRecord{Shape{static_cast<int>(buf->size())}, *buf});
  return records;
}

inline void save_checkpoint(const Registry& reg, const std::string& path) {
  save_checkpoint_map(snapshot(reg), path);
}

// Strict restore: the archive must carry exactly the registry's entries.
inline void load_checkpoint(Registry& reg, const std::string& path) {
  CheckpointMap records = load_checkpoint_map(path);
  const std::size_t expect = reg.params().size() + reg.buffers().size();
  if (records.size() != expect)
    throw std::runtime_error("checkpoint: record count mismatch for " + path);
  for (auto& [name, p] : reg.params()) {
    auto it = records.find(name);
    if (it == records.end()) throw std::runtime_error("checkpoint: missing parameter " + name);
    if (it->second.shape != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    p.tensor.values() = it->second.data;
  }
  for (auto& [name, buf] : reg.buffers()) {
    auto it = records.find(name);
    if (it == records.end()) throw std::runtime_error("checkpoint: missing buffer " + name);
    if (it->second.data.size() != buf->size())
      throw std::runtime_error("checkpoint: buffer size mismatch for " + name);
    *buf = it->second.data;
  }
}

// Copies every record whose name exists in both; returns how many were taken.
inline int load_overlapping(Registry& reg, const CheckpointMap& records) {
  int taken = 0;
  for (auto& [name, p] : reg.params()) {
    auto it = records.find(name);
    if (it == records.end()) continue;
    if (it->second.shape != p.tensor.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + name);
    p.tensor.values() = it->second.data;
    ++taken;
  }
  for (auto& [name, buf] : reg.buffers()) {
    auto it = records.find(name);
    if (it == records.end()) continue;
    if (it->second.data.size() != buf->size())
      throw std::runtime_error("checkpoint: buffer size mismatch for " + name);
    *buf = it->second.data;
    ++taken;
  }
  return taken;
}

}  // namespace tlf
