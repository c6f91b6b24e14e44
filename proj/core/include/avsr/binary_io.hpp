#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "avsr/error.hpp"

namespace avsr::binio {

// Little-endian scalar and array encoding shared by the corpus and checkpoint formats.

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void write(std::ostream& out, T v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void write_array(std::ostream& out, std::span<const T> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (const T v : values) write(out, v);
  }
}

template <typename T>
T read(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("unexpected end of file");
  return to_little(v);
}

template <typename T>
std::vector<T> read_array(std::istream& in, std::size_t count) {
  std::vector<T> values(count);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * sizeof(T)));
  if (!in) throw IoError("unexpected end of file");
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& v : values) v = to_little(v);
  }
  return values;
}

inline void write_magic(std::ostream& out, const char (&magic)[9]) { out.write(magic, 8); }

inline void expect_magic(std::istream& in, const char (&magic)[9], const std::string& what) {
  char buf[8] = {};
  in.read(buf, 8);
  if (!in || std::memcmp(buf, magic, 8) != 0) throw IoError(what + ": bad magic, not a " + magic + " file");
}

}  // namespace avsr::binio
