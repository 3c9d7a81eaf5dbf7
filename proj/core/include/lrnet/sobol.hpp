#pragma once

#include <cstdint>
#include <cstddef>

#include "lrnet/tensor.hpp"

namespace lrnet {

/// Supported Sobol dimension bound.
inline constexpr std::size_t kSobolMaxDim = 1024;
/// Fixed-point resolution of the generated points.
inline constexpr int kSobolBits = 52;

constexpr std::uint64_t sobol_mask() { return (1ULL << kSobolBits) - 1; }
constexpr double sobol_scale() { return 0x1p-52; }

/// Direction number V_j (52-bit fixed point) of dimension `dim` (0-based),
/// bit index `j` in [0, 52).
std::uint64_t sobol_direction(std::size_t dim, unsigned j);

/// 0-based index of the lowest zero bit of n (the Gray-code flip index).
unsigned lowest_zero_bit(std::uint64_t n);

/// First `count` points of the (optionally scrambled) Sobol sequence,
/// returned as a count×dim tensor with entries in [0,1).
///
/// The zero point of the raw sequence is skipped, so the dimension-1
/// coordinates start 0.5, 0.75, 0.25, 0.375... Scrambling is a per-dimension
/// digital shift keyed by `scramble_seed`; seed 0 means unscrambled.
Tensor sobol_points(std::size_t dim, std::size_t count, std::uint64_t scramble_seed);

}  // namespace lrnet
