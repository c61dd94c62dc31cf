#ifndef CAD_TENSOR_IO_HPP
#define CAD_TENSOR_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cad/errors.hpp"

namespace cad::io {

namespace fs = std::filesystem;

// Raw little-endian float32 arrays.

inline std::uint32_t to_little(std::uint32_t bits) {
  if constexpr (std::endian::native == std::endian::big) {
    return ((bits & 0xffu) << 24) | ((bits & 0xff00u) << 8) | ((bits >> 8) & 0xff00u) | (bits >> 24);
  }
  return bits;
}

inline void write_f32(const fs::path& path, std::span<const float> values) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  std::vector<std::uint32_t> buf(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) buf[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<float> read_f32(const fs::path& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  if (bytes != expected_count * 4) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected_count * 4) + " bytes, found " +
                      std::to_string(bytes));
  }
  std::vector<std::uint32_t> buf(expected_count);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw IoError("read failed: " + path.string());
  std::vector<float> out(expected_count);
  for (std::size_t i = 0; i < expected_count; ++i) out[i] = std::bit_cast<float>(to_little(buf[i]));
  return out;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// Every file the tool writes carries `format_version`; readers reject others.
inline void require_version(const nlohmann::json& j, const std::string& expected, const std::string& what) {
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_string())
    throw FormatError(what + ": missing format_version");
  const auto v = j["format_version"].get<std::string>();
  if (v != expected) throw FormatError(what + ": unsupported format_version '" + v + "' (expected '" + expected + "')");
}

inline void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

}  // namespace cad::io

#endif  // CAD_TENSOR_IO_HPP
