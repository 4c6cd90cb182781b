#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "pfvg/errors.hpp"

namespace pfvg::binary {

static_assert(std::endian::native == std::endian::little,
              "persisted formats are little-endian; add byte swapping for this host");

template <typename T>
void put(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  os.write(buf, sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  static_assert(std::is_trivially_copyable_v<T>);
  char buf[sizeof(T)];
  if (!is.read(buf, sizeof(T))) {
    throw FormatError("unexpected end of file");
  }
  T value;
  std::memcpy(&value, buf, sizeof(T));
  return value;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is, std::size_t limit = 1u << 24) {
  const auto n = get<std::uint32_t>(is);
  if (n > limit) {
    throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  }
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) {
    throw FormatError("unexpected end of file in string");
  }
  return s;
}

inline void put_magic(std::ostream& os, const char (&magic)[5]) {
  os.write(magic, 4);
}

inline bool check_magic(std::istream& is, const char (&magic)[5]) {
  char buf[4];
  if (!is.read(buf, 4)) {
    return false;
  }
  return std::memcmp(buf, magic, 4) == 0;
}

} // namespace pfvg::binary
