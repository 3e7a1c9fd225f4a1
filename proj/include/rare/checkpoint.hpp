#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rare/tensor.hpp"

namespace rare {

// Single-file checkpoint. Layout (all integers little-endian):
//   magic "RARE", u32 version,
//   u32 meta count, { u32 klen, key, u32 vlen, value } ...,
//   u32 tensor count, { u32 nlen, name, u8 dtype, u32 rank, u32 dims...,
//                       raw values } ...
// dtype: 0 = float32, 1 = float64. Raw bytes round-trip bit-exactly.

constexpr uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  int dtype = 0;
  Shape shape;
  std::vector<unsigned char> raw;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  std::map<std::string, std::string> meta;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

inline void require_little_endian() {
  const uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  if (b != 1) throw std::runtime_error("checkpoint: big-endian hosts are not supported");
}

inline void put_u32(std::ostream& os, uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: corrupt string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  return s;
}

}  // namespace detail

template <typename S>
constexpr int dtype_tag() {
  static_assert(std::is_same_v<S, float> || std::is_same_v<S, double>);
  return std::is_same_v<S, float> ? 0 : 1;
}

template <typename S>
TensorRecord to_record(const std::string& name, const Tensor<S>& t) {
  TensorRecord r;
  r.name = name;
  r.dtype = dtype_tag<S>();
  r.shape = t.shape;
  r.raw.resize(t.values.size() * sizeof(S));
  std::memcpy(r.raw.data(), t.values.data(), r.raw.size());
  return r;
}

template <typename S>
Tensor<S> from_record(const TensorRecord& r) {
  size_t n = static_cast<size_t>(numel(r.shape));
  Tensor<S> t = Tensor<S>::zeros(r.shape);
  if (r.dtype == dtype_tag<S>()) {
    if (r.raw.size() != n * sizeof(S))
      throw std::runtime_error("checkpoint: tensor '" + r.name + "' has wrong byte count");
    std::memcpy(t.values.data(), r.raw.data(), r.raw.size());
  } else if (r.dtype == 0) {
    const float* src = reinterpret_cast<const float*>(r.raw.data());
    for (size_t i = 0; i < n; ++i) t.values[i] = static_cast<S>(src[i]);
  } else {
    const double* src = reinterpret_cast<const double*>(r.raw.data());
    for (size_t i = 0; i < n; ++i) t.values[i] = static_cast<S>(src[i]);
  }
  return t;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  detail::require_little_endian();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot write " + path);
  f.write("RARE", 4);
  detail::put_u32(f, ck.version);
  detail::put_u32(f, static_cast<uint32_t>(ck.meta.size()));
  for (const auto& [k, v] : ck.meta) {
    detail::put_str(f, k);
    detail::put_str(f, v);
  }
  detail::put_u32(f, static_cast<uint32_t>(ck.tensors.size()));
  for (const TensorRecord& t : ck.tensors) {
    detail::put_str(f, t.name);
    unsigned char tag = static_cast<unsigned char>(t.dtype);
    f.write(reinterpret_cast<const char*>(&tag), 1);
    detail::put_u32(f, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) detail::put_u32(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(t.raw.data()),
            static_cast<std::streamsize>(t.raw.size()));
  }
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  detail::require_little_endian();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "RARE", 4) != 0)
    throw std::runtime_error("checkpoint: " + path + " has wrong magic bytes");
  Checkpoint ck;
  ck.version = detail::get_u32(f);
  if (ck.version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version));
  uint32_t nmeta = detail::get_u32(f);
  for (uint32_t i = 0; i < nmeta; ++i) {
    std::string k = detail::get_str(f);
    ck.meta[k] = detail::get_str(f);
  }
  uint32_t ntensors = detail::get_u32(f);
  for (uint32_t i = 0; i < ntensors; ++i) {
    TensorRecord r;
    r.name = detail::get_str(f);
    unsigned char tag = 0;
    f.read(reinterpret_cast<char*>(&tag), 1);
    r.dtype = tag;
    uint32_t rank = detail::get_u32(f);
    if (rank > 8) throw std::runtime_error("checkpoint: corrupt tensor rank");
    for (uint32_t d = 0; d < rank; ++d) r.shape.push_back(static_cast<int>(detail::get_u32(f)));
    size_t elem = r.dtype == 0 ? 4 : 8;
    r.raw.resize(static_cast<size_t>(numel(r.shape)) * elem);
    f.read(reinterpret_cast<char*>(r.raw.data()), static_cast<std::streamsize>(r.raw.size()));
    if (!f) throw std::runtime_error("checkpoint: truncated tensor '" + r.name + "'");
    ck.tensors.push_back(std::move(r));
  }
  return ck;
}

}  // namespace rare
