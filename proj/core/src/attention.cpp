#include "gcml/attention.hpp"

#include <string>

namespace gcml {

std::string_view to_string(BitOrder order) {
  return order == BitOrder::kLittle ? "little" : "big";
}

BitOrder parse_bit_order(std::string_view text) {
  if (text == "little") return BitOrder::kLittle;
  if (text == "big") return BitOrder::kBig;
  fail(ErrorCode::kInvalidArgument, "unknown bit order '" + std::string(text) + "'");
}

void GcmlConfig::validate() const {
  require(grid_h >= 1 && grid_w >= 1, ErrorCode::kInvalidArgument, "grid dims must be >= 1");
  require(key_bits() <= kMaxKeyBits, ErrorCode::kInvalidArgument,
          "attention grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) + " needs " +
              std::to_string(key_bits()) + " key bits; at most 64 are supported");
  require(tau >= 0.0f && tau <= 1.0f, ErrorCode::kInvalidArgument,
          "tau must lie in [0, 1], got " + std::to_string(tau));
}

BitGrid threshold(const Cam& normalized, float tau) {
  require(tau >= 0.0f && tau <= 1.0f, ErrorCode::kInvalidArgument, "tau must lie in [0, 1]");
  BitGrid grid{normalized.height, normalized.width,
               std::vector<std::uint8_t>(normalized.values.size())};
  for (std::size_t i = 0; i < normalized.values.size(); ++i) {
    const float v = normalized.values[i];
    require(v >= 0.0f && v <= 1.0f, ErrorCode::kOutOfRange,
            "threshold input outside [0, 1]; normalize the map first");
    grid.bits[i] = v >= tau ? 1 : 0;
  }
  return grid;
}

BitVector flatten_bits(const BitGrid& grid) { return grid.bits; }

BitGrid unflatten_bits(std::span<const std::uint8_t> bits, std::size_t height,
                       std::size_t width) {
  require(bits.size() == height * width, ErrorCode::kDimensionMismatch,
          "bit vector length does not match grid dims");
  return BitGrid{height, width, BitVector(bits.begin(), bits.end())};
}

BitKey key_from_bits(std::span<const std::uint8_t> bits, BitOrder order) {
  require(bits.size() <= kMaxKeyBits, ErrorCode::kInvalidArgument,
          "bit vector of length " + std::to_string(bits.size()) + " exceeds 64 bits");
  const std::size_t n = bits.size();
  std::uint64_t key = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!bits[i]) continue;
    const std::size_t shift = order == BitOrder::kLittle ? i : n - 1 - i;
    key |= std::uint64_t{1} << shift;
  }
  return BitKey{key};
}

BitVector bits_from_key(BitKey key, std::size_t length, BitOrder order) {
  require(length <= kMaxKeyBits, ErrorCode::kInvalidArgument, "key length exceeds 64 bits");
  require(length == kMaxKeyBits || key.value >> length == 0, ErrorCode::kOutOfRange,
          "key does not fit in " + std::to_string(length) + " bits");
  BitVector bits(length);
  for (std::size_t i = 0; i < length; ++i) {
    const std::size_t shift = order == BitOrder::kLittle ? i : length - 1 - i;
    bits[i] = static_cast<std::uint8_t>((key.value >> shift) & 1u);
  }
  return bits;
}

BitKey attention_key(const Cam& cam, const GcmlConfig& cfg) {
  cfg.validate();
  require(cam.height == cfg.grid_h && cam.width == cfg.grid_w, ErrorCode::kDimensionMismatch,
          "map is " + std::to_string(cam.height) + "x" + std::to_string(cam.width) +
              " but the attention grid is " + std::to_string(cfg.grid_h) + "x" +
              std::to_string(cfg.grid_w));
  return key_from_bits(flatten_bits(threshold(minmax_normalize(cam), cfg.tau)), cfg.bit_order);
}

}  // namespace gcml
