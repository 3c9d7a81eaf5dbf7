#include "lrnet/sobol.hpp"

#include <array>
#include <mutex>
#include <vector>

#include "lrnet/errors.hpp"
#include "lrnet/rng.hpp"

namespace lrnet {

namespace {

// GF(2) polynomial arithmetic modulo a degree-s polynomial bitmask.
std::uint32_t gf2_mulmod(std::uint32_t a, std::uint32_t b, std::uint32_t p, int s) {
  std::uint32_t r = 0;
  while (b) {
    if (b & 1u) r ^= a;
    b >>= 1;
    a <<= 1;
    if (a & (1u << s)) a ^= p;
  }
  return r;
}

std::uint32_t gf2_powmod(std::uint32_t base, std::uint32_t e, std::uint32_t p, int s) {
  std::uint32_t r = 1;
  while (e) {
    if (e & 1u) r = gf2_mulmod(r, base, p, s);
    base = gf2_mulmod(base, base, p, s);
    e >>= 1;
  }
  return r;
}

// Prime factors of 2^s - 1 for s = 1..13.
const std::array<std::vector<std::uint32_t>, 14> kMersenneFactors = {{
    {}, {}, {3}, {7}, {3, 5}, {31}, {3, 7}, {127}, {3, 5, 17}, {7, 73},
    {3, 11, 31}, {23, 89}, {3, 5, 7, 13}, {8191},
}};

bool is_primitive(std::uint32_t poly, int s) {
  if (!(poly & 1u)) return false;  // x must be invertible
  const std::uint32_t order = (1u << s) - 1;
  if (gf2_powmod(2, order, poly, s) != 1) return false;
  for (std::uint32_t q : kMersenneFactors[static_cast<std::size_t>(s)])
    if (gf2_powmod(2, order / q, poly, s) == 1) return false;
  return true;
}

struct DirectionTable {
  // table[d][j] = V_{j+1} of dimension d+1, 52-bit fixed point.
  std::vector<std::array<std::uint64_t, kSobolBits>> table;

  DirectionTable() {
    table.resize(kSobolMaxDim);
    // Dimension 1: the identity matrix (van der Corput sequence).
    for (unsigned j = 0; j < kSobolBits; ++j)
      table[0][j] = 1ULL << (kSobolBits - 1 - j);

    std::size_t dim = 1;
    for (int s = 1; s <= 13 && dim < kSobolMaxDim; ++s) {
      for (std::uint32_t code = 0; code < (1u << (s - 1)) && dim < kSobolMaxDim; ++code) {
        const std::uint32_t poly = (1u << s) | (code << 1) | 1u;
        if (!is_primitive(poly, s)) continue;
        init_dimension(dim, poly, s);
        ++dim;
      }
    }
    if (dim < kSobolMaxDim)
      throw CapabilityError("sobol: direction table construction fell short");
  }

  void init_dimension(std::size_t d, std::uint32_t poly, int s) {
    std::array<std::uint64_t, kSobolBits + 1> m{};  // 1-based
    for (int j = 1; j <= s; ++j) {
      if (d == 1) {
        m[1] = 1;  // dimension 2: the classical x+1 initialization
      } else {
        const std::uint64_t r = philox_mix64(0x5EEDD19E57ULL, d, static_cast<std::uint64_t>(j));
        m[static_cast<std::size_t>(j)] = (r & ((1ULL << j) - 1)) | 1ULL;
      }
    }
    for (int j = s + 1; j <= kSobolBits; ++j) {
      std::uint64_t v = m[static_cast<std::size_t>(j - s)] ^
                        (m[static_cast<std::size_t>(j - s)] << s);
      for (int i = 1; i < s; ++i)
        if (poly & (1u << i))
          v ^= m[static_cast<std::size_t>(j - i)] << i;
      m[static_cast<std::size_t>(j)] = v;
    }
    for (unsigned j = 0; j < kSobolBits; ++j)
      table[d][j] = m[j + 1] << (kSobolBits - 1 - j);
  }
};

const DirectionTable& directions() {
  static const DirectionTable t;
  return t;
}

}  // namespace

std::uint64_t sobol_direction(std::size_t dim, unsigned j) {
  return directions().table[dim][j];
}

unsigned lowest_zero_bit(std::uint64_t n) {
  unsigned i = 0;
  while (n & 1ULL) {
    n >>= 1;
    ++i;
  }
  if (i >= kSobolBits) throw ConfigError("sobol: draw counter overflow");
  return i;
}

Tensor sobol_points(std::size_t dim, std::size_t count, std::uint64_t scramble_seed) {
  if (dim < 1 || count < 1) throw ContractError("sobol_points: dim and count must be >= 1");
  if (dim > kSobolMaxDim)
    throw CapabilityError("sobol_points: dimension exceeds supported bound " +
                          std::to_string(kSobolMaxDim));
  const DirectionTable& dt = directions();

  std::vector<std::uint64_t> shift(dim, 0);
  if (scramble_seed != 0)
    for (std::size_t d = 0; d < dim; ++d)
      shift[d] = philox_mix64(scramble_seed, d, 0xD161745ULL) & sobol_mask();

  Tensor out({count, dim});
  std::vector<std::uint64_t> state(dim, 0);
  for (std::size_t n = 0; n < count; ++n) {
    const unsigned c = lowest_zero_bit(n);  // skip-zero: point n+1 of the raw sequence
    double* row = out.data() + n * dim;
    for (std::size_t d = 0; d < dim; ++d) {
      state[d] ^= dt.table[d][c];
      row[d] = static_cast<double>(state[d] ^ shift[d]) * sobol_scale();
    }
  }
  return out;
}

}  // namespace lrnet
