#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "error.hpp"

namespace lfpstage::io {

namespace fs = std::filesystem;
using nlohmann::json;

inline std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<unsigned char> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size)))
    throw data_error("read failed: " + path.string());
  return bytes;
}

inline std::string read_text(const fs::path& path) {
  const auto bytes = read_bytes(path);
  return std::string(bytes.begin(), bytes.end());
}

inline void write_bytes(const fs::path& path, std::span<const unsigned char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw data_error("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw data_error("write failed: " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  write_bytes(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

inline json read_json(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw data_error("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// Rejects objects whose key set differs from `keys`.
inline void require_exact_keys(const json& j, std::initializer_list<const char*> keys,
                               const std::string& what) {
  if (!j.is_object()) throw data_error(what + ": expected a JSON object");
  for (const char* k : keys)
    if (!j.contains(k)) throw data_error(what + ": missing key '" + std::string(k) + "'");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* k : keys) known = known || item.key() == k;
    if (!known) throw data_error(what + ": unexpected key '" + item.key() + "'");
  }
}

inline void encode_f32le(std::span<const float> values, std::vector<unsigned char>& out) {
  const std::size_t base = out.size();
  out.resize(base + values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    unsigned char* p = out.data() + base + 4 * i;
    p[0] = static_cast<unsigned char>(bits);
    p[1] = static_cast<unsigned char>(bits >> 8);
    p[2] = static_cast<unsigned char>(bits >> 16);
    p[3] = static_cast<unsigned char>(bits >> 24);
  }
}

// Decodes little-endian float32; non-finite values are rejected with their
// byte offset in the file.
inline void decode_f32le(std::span<const unsigned char> bytes, std::span<float> out,
                         const std::string& what, std::size_t base_offset = 0) {
  if (bytes.size() != out.size() * 4)
    throw data_error(what + ": size mismatch: expected " + std::to_string(out.size() * 4) +
                     " bytes, got " + std::to_string(bytes.size()));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const unsigned char* p = bytes.data() + 4 * i;
    const std::uint32_t bits = std::uint32_t{p[0]} | (std::uint32_t{p[1]} << 8) |
                               (std::uint32_t{p[2]} << 16) | (std::uint32_t{p[3]} << 24);
    const float v = std::bit_cast<float>(bits);
    if (!std::isfinite(v))
      throw data_error(what + ": non-finite sample at byte offset " + std::to_string(4 * i));
    out[i] = v;
  }
}

template <typename T>
T get_positive_int(const json& j, const char* key, const std::string& what) {
  const json& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 1)
    throw data_error(what + ": '" + key + "' must be a positive integer");
  return static_cast<T>(v.get<long long>());
}

}  // namespace lfpstage::io
