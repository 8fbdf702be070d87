#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "skyalign/common.hpp"

// Little-endian primitives shared by the FEA1, CKP1 and EMB1 file formats.
namespace skyalign::binio {

template <typename T>
  requires std::is_arithmetic_v<T>
void write_le(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
  requires std::is_arithmetic_v<T>
T read_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T))) throw FormatError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic) {
    throw FormatError("bad magic, expected '" + std::string(magic) + "'");
  }
}

// u16 length prefix followed by the raw UTF-8 bytes.
inline void write_id(std::ostream& os, std::string_view id) {
  if (id.size() > 0xFFFF) throw FormatError("id longer than 65535 bytes");
  write_le<std::uint16_t>(os, static_cast<std::uint16_t>(id.size()));
  os.write(id.data(), static_cast<std::streamsize>(id.size()));
}

inline std::string read_id(std::istream& is) {
  const auto len = read_le<std::uint16_t>(is);
  std::string id(len, '\0');
  if (len > 0 && !is.read(id.data(), len)) throw FormatError("truncated id");
  return id;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot open '" + path + "' for writing");
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path + "'");
  return is;
}

}  // namespace skyalign::binio
