#pragma once

// Little-endian primitive encoding shared by the GCT1 and GCS1 codecs.

#include <array>
#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "gcml/error.hpp"

namespace gcml::detail {

template <typename T>
  requires std::is_integral_v<T>
void put_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto bits = static_cast<U>(value);
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
  }
  out.write(buf.data(), buf.size());
}

inline void put_f32(std::ostream& out, float value) {
  put_le(out, std::bit_cast<std::uint32_t>(value));
}

inline void read_exact(std::istream& in, char* dst, std::size_t n, const char* what) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) {
    fail(ErrorCode::kTruncated, std::string("truncated input while reading ") + what);
  }
}

template <typename T>
  requires std::is_integral_v<T>
T get_le(std::istream& in, const char* what) {
  using U = std::make_unsigned_t<T>;
  std::array<unsigned char, sizeof(T)> buf{};
  read_exact(in, reinterpret_cast<char*>(buf.data()), buf.size(), what);
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bits |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
  }
  return static_cast<T>(bits);
}

inline float get_f32(std::istream& in, const char* what) {
  return std::bit_cast<float>(get_le<std::uint32_t>(in, what));
}

inline void check_stream(const std::ostream& out, const char* what) {
  if (!out) fail(ErrorCode::kIo, std::string("write failed: ") + what);
}

// True if the stream has no bytes left.
inline bool at_end(std::istream& in) {
  return in.peek() == std::char_traits<char>::eof();
}

}  // namespace gcml::detail
