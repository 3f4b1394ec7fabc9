#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>
#include <string_view>

#include <zlib.h>

namespace medalign {

inline std::uint32_t crc32_of(std::span<const std::byte> bytes, std::uint32_t seed = 0) {
  uLong crc = seed;
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + off), chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::uint32_t crc32_of(std::string_view s, std::uint32_t seed = 0) {
  return crc32_of(std::as_bytes(std::span(s.data(), s.size())), seed);
}

template <typename T>
std::uint32_t crc32_of_values(std::span<const T> values, std::uint32_t seed = 0) {
  return crc32_of(std::as_bytes(values), seed);
}

inline std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

}  // namespace medalign
