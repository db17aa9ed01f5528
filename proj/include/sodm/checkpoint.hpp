#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sodm/params.hpp"

namespace sodm {

// Binary checkpoint: magic "SODM", format version u32, entry count u32, then
// per entry: name length u32, UTF-8 name, dtype code u8 (0 = f32, 1 = f64),
// four u32 dims, raw little-endian values. Round-trips bit-exactly.

inline constexpr uint32_t kCheckpointVersion = 1;

namespace ckpt_detail {

inline void put_u32(std::ofstream& f, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::ifstream& f, const std::string& path) {
  uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  if (f.gcount() != 4) throw ParseError(path + ": truncated u32 at byte offset " +
                                        std::to_string(static_cast<long>(f.tellg())));
  return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
         static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

template <class T>
constexpr uint8_t dtype_code() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "unsupported dtype");
  return std::is_same_v<T, float> ? 0 : 1;
}

// values are written byte-for-byte; on the (universal in practice)
// little-endian IEEE platforms this is the canonical format
template <class T>
void put_values(std::ofstream& f, const std::vector<T>& v) {
  f.write(reinterpret_cast<const char*>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <class T>
void get_values(std::ifstream& f, std::vector<T>& v, const std::string& path) {
  f.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
  if (f.gcount() != static_cast<std::streamsize>(v.size() * sizeof(T)))
    throw ParseError(path + ": truncated tensor data at byte offset " +
                     std::to_string(static_cast<long>(f.tellg())));
}

}  // namespace ckpt_detail

template <class T>
void save_checkpoint(const Params<T>& params, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f.write("SODM", 4);
  ckpt_detail::put_u32(f, kCheckpointVersion);
  ckpt_detail::put_u32(f, static_cast<uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    ckpt_detail::put_u32(f, static_cast<uint32_t>(e.name.size()));
    f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
    uint8_t code = ckpt_detail::dtype_code<T>();
    f.write(reinterpret_cast<const char*>(&code), 1);
    ckpt_detail::put_u32(f, static_cast<uint32_t>(e.tensor.n));
    ckpt_detail::put_u32(f, static_cast<uint32_t>(e.tensor.c));
    ckpt_detail::put_u32(f, static_cast<uint32_t>(e.tensor.h));
    ckpt_detail::put_u32(f, static_cast<uint32_t>(e.tensor.w));
    ckpt_detail::put_values(f, e.tensor.data);
  }
  if (!f) throw IoError("short write to " + path.string());
}

// Loads into `params`: every checkpoint entry must already exist with the
// same shape (the model config defines the skeleton). Extra entries in the
// file or a dtype mismatch are errors naming the parameter.
template <class T>
void load_checkpoint(Params<T>& params, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, "SODM", 4) != 0)
    throw ParseError(path.string() + ": bad magic, not a SODM checkpoint");
  uint32_t version = ckpt_detail::get_u32(f, path.string());
  if (version != kCheckpointVersion)
    throw ParseError(path.string() + ": unknown format version " + std::to_string(version));
  uint32_t count = ckpt_detail::get_u32(f, path.string());
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t name_len = ckpt_detail::get_u32(f, path.string());
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    if (f.gcount() != static_cast<std::streamsize>(name_len))
      throw ParseError(path.string() + ": truncated entry name");
    uint8_t code = 0;
    f.read(reinterpret_cast<char*>(&code), 1);
    if (code != ckpt_detail::dtype_code<T>())
      throw ParseError(path.string() + ": dtype mismatch for parameter '" + name + "'");
    int n = static_cast<int>(ckpt_detail::get_u32(f, path.string()));
    int c = static_cast<int>(ckpt_detail::get_u32(f, path.string()));
    int h = static_cast<int>(ckpt_detail::get_u32(f, path.string()));
    int w = static_cast<int>(ckpt_detail::get_u32(f, path.string()));
    if (!params.has(name))
      throw LookupError(path.string() + ": checkpoint parameter '" + name +
                        "' does not exist in the model");
    Tensor4<T>& dst = params.at(name);
    if (dst.n != n || dst.c != c || dst.h != h || dst.w != w)
      throw ShapeError(path.string() + ": parameter '" + name + "' is " + std::to_string(n) + "x" +
                       std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w) +
                       " in the file but " + dst.shape_str() + " in the model");
    ckpt_detail::get_values(f, dst.data, path.string());
  }
}

}  // namespace sodm
