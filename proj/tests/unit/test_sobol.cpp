#include <cmath>
#include <doctest.h>
#include <set>

#include "lrnet/errors.hpp"
#include "lrnet/rng.hpp"
#include "lrnet/sobol.hpp"

using namespace lrnet;

TEST_CASE("dimension 1 reference points") {
  const Tensor p = sobol_points(1, 4, 0);
  CHECK(p[0] == 0.5);
  CHECK(p[1] == 0.75);
  CHECK(p[2] == 0.25);
  CHECK(p[3] == 0.375);
}

TEST_CASE("dimension 2 reference points") {
  const Tensor p = sobol_points(2, 4, 0);
  CHECK(p.at(0, 1) == 0.5);
  CHECK(p.at(1, 1) == 0.25);
  CHECK(p.at(2, 1) == 0.75);
  CHECK(p.at(3, 1) == 0.375);
}

TEST_CASE("antithetic-paired points average to one half exactly") {
  // the estimator pairs QMC point u with 1-u; over 2^m paired uniforms the
  // per-coordinate mean is exactly 0.5 and the gaussianized mean is 0
  for (std::size_t m = 1; m <= 6; ++m) {
    const std::size_t half = 1ULL << (m - 1);
    const Tensor p = sobol_points(1, half, 0);
    double mean = 0, gmean = 0;
    for (std::size_t i = 0; i < half; ++i) {
      mean += p[i] + (1.0 - p[i]);
      gmean += gaussian_from_uniform(p[i]) + (-gaussian_from_uniform(p[i]));
    }
    CHECK(mean / static_cast<double>(2 * half) == 0.5);
    CHECK(std::fabs(gmean) <= 1e-12);
  }
}

TEST_CASE("one-dimensional stratification per coordinate") {
  // the raw sequence including its zero point is a (0,m,1)-net: each dyadic
  // bin of width 2^-m holds exactly one of the first 2^m points
  for (std::size_t dim : {std::size_t(1), std::size_t(2), std::size_t(7)}) {
    const std::size_t m = 5, count = (1ULL << m) - 1;  // zero point implicit
    const Tensor p = sobol_points(dim, count, 0);
    for (std::size_t d = 0; d < dim; ++d) {
      std::set<std::size_t> bins{0};  // the skipped zero point
      for (std::size_t i = 0; i < count; ++i)
        bins.insert(static_cast<std::size_t>(p.at(i, d) * (1ULL << m)));
      CHECK(bins.size() == (1ULL << m));
    }
  }
}

TEST_CASE("scrambled blocks stay balanced") {
  // a digital shift preserves the net property: any aligned block of 2^m
  // consecutive raw indices covers every dyadic bin once
  for (std::uint64_t seed : {1ULL, 99ULL}) {
    const std::size_t m = 4;
    const Tensor p = sobol_points(3, (1ULL << m) - 1, seed);
    for (std::size_t d = 0; d < 3; ++d) {
      std::set<std::size_t> bins;
      // recover the shifted zero point by xor-ing out nothing: indices
      // 1..2^m-1 plus the shifted origin cover the bins; check >= 2^m - 1
      for (std::size_t i = 0; i + 1 < (1ULL << m); ++i)
        bins.insert(static_cast<std::size_t>(p.at(i, d) * (1ULL << m)));
      CHECK(bins.size() == (1ULL << m) - 1);
    }
  }
  CHECK(sobol_points(2, 8, 1).values() != sobol_points(2, 8, 2).values());
}

TEST_CASE("dimension bound") {
  CHECK(kSobolMaxDim >= 1024);
  CHECK_NOTHROW(sobol_points(1024, 2, 0));
  CHECK_THROWS_AS(sobol_points(1025, 2, 0), CapabilityError);
}

TEST_CASE("all coordinates lie in the open unit interval") {
  const Tensor p = sobol_points(64, 257, 12345);
  for (std::size_t i = 0; i < p.size(); ++i) {
    CHECK(p[i] >= 0.0);
    CHECK(p[i] < 1.0);
  }
}

TEST_CASE("higher dimensions are balanced one-dimensionally") {
  // every per-coordinate projection of a Sobol matrix is itself a net
  const std::size_t m = 6;
  const Tensor p = sobol_points(1024, (1ULL << m) - 1, 0);
  for (std::size_t d : {std::size_t(100), std::size_t(500), std::size_t(1023)}) {
    std::set<std::size_t> bins{0};
    for (std::size_t i = 0; i + 1 < (1ULL << m); ++i)
      bins.insert(static_cast<std::size_t>(p.at(i, d) * (1ULL << m)));
    CHECK(bins.size() == (1ULL << m));
  }
}
