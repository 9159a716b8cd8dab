#pragma once

#include <Eigen/Core>

#include <bit>
#include <cstdint>

namespace caad {

/// IEEE binary16 bits for `value`, round-to-nearest-even.
inline std::uint16_t float_to_half_bits(float value) {
  return std::bit_cast<std::uint16_t>(Eigen::half(value));
}

inline float half_bits_to_float(std::uint16_t bits) {
  return static_cast<float>(std::bit_cast<Eigen::half>(bits));
}

inline float round_through_half(float value) { return half_bits_to_float(float_to_half_bits(value)); }

}  // namespace caad
