#include "lrnet/rng.hpp"

#include <cmath>

#include "lrnet/errors.hpp"
#include "lrnet/sobol.hpp"

namespace lrnet {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void philox_round(std::uint32_t c[4], const std::uint32_t k[2]) {
  const std::uint64_t p0 = static_cast<std::uint64_t>(kPhiloxM0) * c[0];
  const std::uint64_t p1 = static_cast<std::uint64_t>(kPhiloxM1) * c[2];
  const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
  const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
  const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
  const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
  c[0] = hi1 ^ c[1] ^ k[0];
  c[1] = lo1;
  c[2] = hi0 ^ c[3] ^ k[1];
  c[3] = lo0;
}

// AS 241 (PPND16) rational approximations for the normal quantile.
// Coefficients are listed highest order first for Horner evaluation.
double horner(const double* c, int n, double r) {
  double v = c[0];
  for (int i = 1; i < n; ++i) v = v * r + c[i];
  return v;
}

double ppnd16(double p) {
  static const double a[8] = {2.5090809287301226727e3, 3.3430575583588128105e4,
                              6.7265770927008700853e4, 4.5921953931549871457e4,
                              1.3731693765509461125e4, 1.9715909503065514427e3,
                              1.3314166789178437745e2, 3.3871328727963666080e0};
  static const double b[8] = {5.2264952788528545610e3, 2.8729085735721942674e4,
                              3.9307895800092710610e4, 2.1213794301586595867e4,
                              5.3941960214247511077e3, 6.8718700749205790830e2,
                              4.2313330701600911252e1, 1.0};
  static const double c[8] = {7.74545014278341407640e-4, 2.27238449892691845833e-2,
                              2.41780725177450611770e-1, 1.27045825245236838258e0,
                              3.64784832476320460504e0,  5.76949722146069140550e0,
                              4.63033784615654529590e0,  1.42343711074968357734e0};
  static const double d[8] = {1.05075007164441684324e-9, 5.47593808499534494600e-4,
                              1.51986665636164571966e-2, 1.48103976427480074590e-1,
                              6.89767334985100004550e-1, 1.67638483018380384940e0,
                              2.05319162663775882187e0,  1.0};
  static const double e[8] = {2.01033439929228813265e-7, 2.71155556874348757815e-5,
                              1.24266094738807843860e-3, 2.65321895265761230930e-2,
                              2.96560571828504891230e-1, 1.78482653991729133580e0,
                              5.46378491116411436990e0,  6.65790464350110377720e0};
  static const double f[8] = {2.04426310338993978564e-15, 1.42151175831644588870e-7,
                              1.84631831751005468180e-5,  7.86869131145613259100e-4,
                              1.48753612908506148525e-2,  1.36929880922735805310e-1,
                              5.99832206555887937690e-1,  1.0};

  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * horner(a, 8, r) / horner(b, 8, r);
  }
  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double z;
  if (r <= 5.0) {
    r -= 1.6;
    z = horner(c, 8, r) / horner(d, 8, r);
  } else {
    r -= 5.0;
    z = horner(e, 8, r) / horner(f, 8, r);
  }
  return (q < 0.0) ? -z : z;
}

}  // namespace

void philox4x32(const std::uint32_t key[2], const std::uint32_t ctr[4], std::uint32_t out[4]) {
  std::uint32_t c[4] = {ctr[0], ctr[1], ctr[2], ctr[3]};
  std::uint32_t k[2] = {key[0], key[1]};
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kPhiloxW0;
      k[1] += kPhiloxW1;
    }
    philox_round(c, k);
  }
  out[0] = c[0];
  out[1] = c[1];
  out[2] = c[2];
  out[3] = c[3];
}

std::uint64_t philox_mix64(std::uint64_t key, std::uint64_t a, std::uint64_t b) {
  const std::uint32_t k[2] = {static_cast<std::uint32_t>(key),
                              static_cast<std::uint32_t>(key >> 32)};
  const std::uint32_t c[4] = {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                              static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  std::uint32_t o[4];
  philox4x32(k, c, o);
  return (static_cast<std::uint64_t>(o[0]) << 32) | o[1];
}

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id, RandomSource source)
    : seed_(seed), stream_id_(stream_id), source_(source) {
  if (source_ == RandomSource::sobol_scrambled) {
    sobol_shift_ = (seed_ == 0 && stream_id_ == 0)
                       ? 0
                       : (philox_mix64(seed_, stream_id_, 0x536f626f6cULL) & sobol_mask());
  }
}

RngStream RngStream::split(std::uint64_t key) const {
  return RngStream(seed_, philox_mix64(seed_, stream_id_, key), source_);
}

double RngStream::next_uniform() {
  if (source_ == RandomSource::sobol_scrambled) {
    // Skip-zero Gray-code recurrence over the dimension-1 direction numbers.
    sobol_state_ ^= sobol_direction(0, lowest_zero_bit(counter_));
    ++counter_;
    return static_cast<double>(sobol_state_ ^ sobol_shift_) * sobol_scale();
  }
  const std::uint32_t k[2] = {static_cast<std::uint32_t>(seed_),
                              static_cast<std::uint32_t>(seed_ >> 32)};
  const std::uint64_t block = counter_ >> 1;
  const std::uint32_t c[4] = {
      static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(block >> 32),
      static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)};
  std::uint32_t o[4];
  philox4x32(k, c, o);
  const int half = static_cast<int>(counter_ & 1) * 2;
  ++counter_;
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(o[half]) << 32) | o[half + 1];
  // (r + 0.5) * 2^-53 stays inside the open interval (0,1).
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1p-53;
}

double RngStream::next_gaussian() { return gaussian_from_uniform(next_uniform()); }

void RngStream::fill_gaussian(Tensor& t) {
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = next_gaussian();
}

Tensor RngStream::gaussian(std::vector<std::size_t> shape) {
  Tensor t(std::move(shape));
  fill_gaussian(t);
  return t;
}

std::vector<double> uniform_stream(RngStream& stream, std::size_t count) {
  if (count < 1) throw ContractError("uniform_stream: count must be >= 1");
  std::vector<double> out(count);
  for (double& u : out) u = stream.next_uniform();
  return out;
}

double gaussian_from_uniform(double u) {
  if (!(u > 0.0 && u < 1.0))
    throw ContractError("gaussian_from_uniform: u outside (0,1)");
  return ppnd16(u);
}

std::vector<NoiseBlock> antithetic_expand(std::vector<NoiseBlock> blocks) {
  const std::size_t n = blocks.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (blocks[i].antithetic_of)
      throw ContractError("antithetic_expand: input already contains twins");
  }
  blocks.reserve(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    NoiseBlock twin;
    twin.values = -blocks[i].values;
    twin.antithetic_of = i;
    blocks.push_back(std::move(twin));
  }
  return blocks;
}

}  // namespace lrnet
