#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "rrdn/config.hpp"
#include "rrdn/param_store.hpp"

namespace rrdn {

// Layout:
//   "RRDN1"
//   u32 config length, config text (key=value lines)
//   repeated until EOF:
//     u32 name length, name bytes, 4 x u32 shape (n,c,h,w), n*c*h*w x f32
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[] = "RRDN1";

class CheckpointError : public Error {
 public:
  using Error::Error;
};

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointContents {
  KeyValues config;
  std::vector<CheckpointTensor> tensors;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t& pos) {
  if (pos + 4 > buf.size()) throw CheckpointError("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointContents& c) {
  std::string out(kCheckpointMagic, 5);
  const std::string cfg = c.config.serialize();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  for (const auto& t : c.tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    for (std::size_t d : {t.shape.n, t.shape.c, t.shape.h, t.shape.w}) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float f : t.values) detail::put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

inline CheckpointContents decode_checkpoint(const std::string& buf) {
  if (buf.size() < 5 || buf.compare(0, 5, kCheckpointMagic) != 0) throw CheckpointError("bad checkpoint magic");
  std::size_t pos = 5;
  const std::uint32_t cfg_len = detail::get_u32(buf, pos);
  if (pos + cfg_len > buf.size()) throw CheckpointError("truncated checkpoint config block");
  CheckpointContents c;
  c.config = KeyValues::parse(buf.substr(pos, cfg_len), "<checkpoint config>");
  pos += cfg_len;
  while (pos < buf.size()) {
    CheckpointTensor t;
    const std::uint32_t name_len = detail::get_u32(buf, pos);
    if (pos + name_len > buf.size()) throw CheckpointError("truncated parameter name");
    t.name = buf.substr(pos, name_len);
    pos += name_len;
    t.shape.n = detail::get_u32(buf, pos);
    t.shape.c = detail::get_u32(buf, pos);
    t.shape.h = detail::get_u32(buf, pos);
    t.shape.w = detail::get_u32(buf, pos);
    if (pos + 4 * t.shape.size() > buf.size()) throw CheckpointError("truncated values for parameter " + t.name);
    t.values.resize(t.shape.size());
    for (auto& f : t.values) f = std::bit_cast<float>(detail::get_u32(buf, pos));
    c.tensors.push_back(std::move(t));
  }
  return c;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open: " + path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

template <typename T>
CheckpointContents to_checkpoint(const KeyValues& config, const ParamStore<T>& store) {
  CheckpointContents c;
  c.config = config;
  for (const auto& [name, t] : store) {
    c.tensors.push_back({name, t.shape(), std::vector<float>(t.data().begin(), t.data().end())});
  }
  return c;
}

// Copies checkpoint tensors into an existing store; names and shapes must match exactly.
template <typename T>
void load_into(const CheckpointContents& c, ParamStore<T>& store) {
  if (c.tensors.size() != store.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(c.tensors.size()) + " tensors, model expects " +
                          std::to_string(store.size()));
  }
  for (const auto& t : c.tensors) {
    if (!store.contains(t.name)) throw CheckpointError("checkpoint tensor not in model: " + t.name);
    Tensor<T>& dst = store.get(t.name);
    if (!(dst.shape() == t.shape)) {
      throw CheckpointError("shape mismatch for " + t.name + ": checkpoint " + t.shape.str() + ", model " + dst.shape().str());
    }
    std::copy(t.values.begin(), t.values.end(), dst.data().begin());
  }
}

}  // namespace rrdn
