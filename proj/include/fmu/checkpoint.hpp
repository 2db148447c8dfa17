#pragma once

#include "fmu/core.hpp"
#include "fmu/nn.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace fmu {

// Self-describing container: named sections of shape-tagged float32 tensors
// plus a config snapshot and the training-step counter. All integers are
// little-endian; tensor data is row-major float32.
//
//   magic "FMCK" | u32 version | u64 step | u32 cfg_len | cfg bytes
//   u32 n_sections | per section: name, u32 n_tensors,
//     per tensor: name, u32 rows, u32 cols, f32 data[rows*cols]

struct TensorEntry {
  std::string name;
  Index rows = 0, cols = 0;
  std::vector<float> data;
};

struct CheckpointSection {
  std::string name;
  std::vector<TensorEntry> tensors;

  size_t param_count() const {
    size_t n = 0;
    for (const auto& t : tensors) n += t.data.size();
    return n;
  }
};

struct Checkpoint {
  static constexpr uint32_t kVersion = 1;
  uint64_t step = 0;
  std::string config_json;
  std::vector<CheckpointSection> sections;

  const CheckpointSection* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto& s : sections) n += s.param_count();
    return n;
  }
};

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {uint8_t(v), uint8_t(v >> 8), uint8_t(v >> 16), uint8_t(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u64(std::ostream& os, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = uint8_t(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}
inline void put_str(std::ostream& os, const std::string& s) {
  put_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void put_f32(std::ostream& os, const std::vector<float>& v) {
  for (float f : v) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
}

inline uint32_t get_u32(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 | uint32_t(b[3]) << 24;
}
inline uint64_t get_u64(std::istream& is) {
  uint8_t b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) throw CheckpointError("checkpoint: truncated file");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}
inline std::string get_str(std::istream& is) {
  uint32_t n = get_u32(is);
  if (n > (1u << 24)) throw CheckpointError("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw CheckpointError("checkpoint: truncated file");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  os.write("FMCK", 4);
  detail::put_u32(os, Checkpoint::kVersion);
  detail::put_u64(os, ck.step);
  detail::put_str(os, ck.config_json);
  detail::put_u32(os, static_cast<uint32_t>(ck.sections.size()));
  for (const auto& sec : ck.sections) {
    detail::put_str(os, sec.name);
    detail::put_u32(os, static_cast<uint32_t>(sec.tensors.size()));
    for (const auto& t : sec.tensors) {
      detail::put_str(os, t.name);
      detail::put_u32(os, static_cast<uint32_t>(t.rows));
      detail::put_u32(os, static_cast<uint32_t>(t.cols));
      if (t.data.size() != static_cast<size_t>(t.rows) * t.cols)
        throw CheckpointError("checkpoint: tensor " + t.name + " data does not match shape tag");
      detail::put_f32(os, t.data);
    }
  }
  if (!os) throw IoError("checkpoint: short write to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "FMCK", 4) != 0)
    throw CheckpointError("checkpoint: bad magic in " + path);
  uint32_t version = detail::get_u32(is);
  if (version != Checkpoint::kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.step = detail::get_u64(is);
  ck.config_json = detail::get_str(is);
  uint32_t n_sections = detail::get_u32(is);
  ck.sections.resize(n_sections);
  for (auto& sec : ck.sections) {
    sec.name = detail::get_str(is);
    uint32_t n_tensors = detail::get_u32(is);
    sec.tensors.resize(n_tensors);
    for (auto& t : sec.tensors) {
      t.name = detail::get_str(is);
      t.rows = detail::get_u32(is);
      t.cols = detail::get_u32(is);
      size_t n = static_cast<size_t>(t.rows) * t.cols;
      if (n > (1u << 28)) throw CheckpointError("checkpoint: implausible tensor size");
      t.data.resize(n);
      for (size_t i = 0; i < n; ++i) {
        uint32_t bits = detail::get_u32(is);
        std::memcpy(&t.data[i], &bits, 4);
      }
    }
  }
  return ck;
}

template <typename S>
TensorEntry tensor_entry(const std::string& name, const Mat<S>& m) {
  TensorEntry t;
  t.name = name;
  t.rows = m.rows();
  t.cols = m.cols();
  t.data.resize(static_cast<size_t>(m.size()));
  size_t idx = 0;
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = 0; j < m.cols(); ++j) t.data[idx++] = static_cast<float>(m(i, j));
  return t;
}

template <typename S>
Mat<S> tensor_to_mat(const TensorEntry& t) {
  Mat<S> m(t.rows, t.cols);
  size_t idx = 0;
  for (Index i = 0; i < t.rows; ++i)
    for (Index j = 0; j < t.cols; ++j) m(i, j) = static_cast<S>(t.data[idx++]);
  return m;
}

// Builds checkpoint sections from a registry whose param names are
// "<section>/<tensor>".
template <typename S>
std::vector<CheckpointSection> sections_from_registry(const nn::ParamRegistry<S>& reg) {
  std::vector<CheckpointSection> out;
  for (const auto& p : reg.params) {
    auto slash = p.name.find('/');
    std::string sec_name = slash == std::string::npos ? "params" : p.name.substr(0, slash);
    std::string tname = slash == std::string::npos ? p.name : p.name.substr(slash + 1);
    CheckpointSection* sec = nullptr;
    for (auto& s : out)
      if (s.name == sec_name) sec = &s;
    if (!sec) {
      out.push_back({sec_name, {}});
      sec = &out.back();
    }
    sec->tensors.push_back(tensor_entry(tname, *p.value));
  }
  return out;
}

template <typename S>
void load_registry_from_sections(nn::ParamRegistry<S>& reg, const Checkpoint& ck) {
  for (const auto& p : reg.params) {
    auto slash = p.name.find('/');
    std::string sec_name = slash == std::string::npos ? "params" : p.name.substr(0, slash);
    std::string tname = slash == std::string::npos ? p.name : p.name.substr(slash + 1);
    const CheckpointSection* sec = ck.find(sec_name);
    if (!sec) throw CheckpointError("checkpoint: missing section " + sec_name);
    const TensorEntry* entry = nullptr;
    for (const auto& t : sec->tensors)
      if (t.name == tname) entry = &t;
    if (!entry) throw CheckpointError("checkpoint: missing tensor " + p.name);
    if (entry->rows != p.value->rows() || entry->cols != p.value->cols())
      throw CheckpointError("checkpoint: shape mismatch for " + p.name);
    *p.value = tensor_to_mat<S>(*entry);
  }
}

}  // namespace fmu
