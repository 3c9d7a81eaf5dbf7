#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lrnet/tensor.hpp"

namespace lrnet {

enum class RandomSource { pseudo, sobol_scrambled };

/// Philox4x32-10 counter-based block: 4 output words from (key, counter).
/// Exposed for the Sobol scramble derivation and tests.
void philox4x32(const std::uint32_t key[2], const std::uint32_t ctr[4], std::uint32_t out[4]);
std::uint64_t philox_mix64(std::uint64_t key, std::uint64_t a, std::uint64_t b);

/// Deterministic splittable random stream.
///
/// Every draw is a pure function of (seed, stream_id, source, draw_counter);
/// the pseudo source is Philox4x32-10 keyed by the seed with the stream id in
/// the counter block, so distinct stream ids give independent streams and
/// skipping ahead is O(1). The sobol_scrambled source emits the
/// one-dimensional Sobol sequence under a digital shift keyed by
/// (seed, stream_id); seed 0 / stream 0 is the unscrambled sequence.
class RngStream {
public:
  explicit RngStream(std::uint64_t seed, std::uint64_t stream_id = 0,
                     RandomSource source = RandomSource::pseudo);

  /// Child stream with an independent id (counter reset to zero).
  RngStream split(std::uint64_t key) const;

  double next_uniform();  // in [0,1), never exactly 0 for the pseudo source
  double next_gaussian();
  void fill_gaussian(Tensor& t);
  Tensor gaussian(std::vector<std::size_t> shape);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }
  RandomSource source() const { return source_; }
  std::uint64_t draw_counter() const { return counter_; }

private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  RandomSource source_;
  std::uint64_t counter_ = 0;
  std::uint64_t sobol_state_ = 0;  // current 52-bit point (sobol source)
  std::uint64_t sobol_shift_ = 0;  // digital shift (sobol source)
};

/// `count` uniforms in [0,1); advances the stream's draw counter by count.
std::vector<double> uniform_stream(RngStream& stream, std::size_t count);

/// Standard normal quantile (inverse CDF), absolute error < 1e-9 on
/// [1e-12, 1-1e-12]. Throws ContractError outside (0,1).
double gaussian_from_uniform(double u);

/// A block of standard-normal draws; `antithetic_of` marks the negated twin.
struct NoiseBlock {
  Tensor values;
  std::optional<std::size_t> antithetic_of;
};

/// Doubles the block list: block n+i is the exact (bitwise) negation of
/// block i with antithetic_of pointing back at i.
std::vector<NoiseBlock> antithetic_expand(std::vector<NoiseBlock> blocks);

}  // namespace lrnet
