#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "gcml/cam.hpp"

namespace gcml {

enum class BitOrder : std::uint8_t { kLittle = 0, kBig = 1 };

std::string_view to_string(BitOrder order);
BitOrder parse_bit_order(std::string_view text);

inline constexpr std::size_t kMaxKeyBits = 64;

// Attention function parameters. The key length L is grid_h * grid_w.
struct GcmlConfig {
  float tau = 0.5f;
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  BitOrder bit_order = BitOrder::kLittle;

  std::size_t key_bits() const { return grid_h * grid_w; }

  // 1 <= L <= 64 and 0 <= tau <= 1.
  void validate() const;

  friend bool operator==(const GcmlConfig&, const GcmlConfig&) = default;
};

// Datastore key: an integer in [0, 2^L).
struct BitKey {
  std::uint64_t value = 0;

  friend auto operator<=>(const BitKey&, const BitKey&) = default;
};

// Thresholded attention grid, row-major, one byte per cell (0 or 1).
struct BitGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t y, std::size_t x) const { return bits[y * width + x] != 0; }

  friend bool operator==(const BitGrid&, const BitGrid&) = default;
};

using BitVector = std::vector<std::uint8_t>;

// Sets a cell iff its normalized value >= tau. Values must lie in [0, 1].
BitGrid threshold(const Cam& normalized, float tau);

// Row-major flatten; unflatten_bits is its inverse.
BitVector flatten_bits(const BitGrid& grid);
BitGrid unflatten_bits(std::span<const std::uint8_t> bits, std::size_t height, std::size_t width);

// little: key = sum b_i 2^i; big: key = sum b_i 2^(L-1-i).
BitKey key_from_bits(std::span<const std::uint8_t> bits, BitOrder order);
BitVector bits_from_key(BitKey key, std::size_t length, BitOrder order);

// normalize -> threshold -> flatten -> integer key. The map must be exactly
// grid_h x grid_w.
BitKey attention_key(const Cam& cam, const GcmlConfig& cfg);

}  // namespace gcml
