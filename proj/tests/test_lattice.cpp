#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include "../src/lattice.hpp"

using namespace hsrg;

namespace {
Site site(std::int64_t a, std::int64_t b, std::int64_t c) {
  Site s;
  s.coords = {a, b, c};
  return s;
}
}  // namespace

TEST_CASE("lattice construction validates parameters") {
  CHECK_NOTHROW(HierLattice(2, 3));
  CHECK_NOTHROW(HierLattice(4, 1));
  CHECK_THROWS_AS(HierLattice(3, 2), std::invalid_argument);  // odd L
  CHECK_THROWS_AS(HierLattice(0, 2), std::invalid_argument);
  CHECK_THROWS_AS(HierLattice(2, 0), std::invalid_argument);
  CHECK(HierLattice(2, 3).side() == 8);
  CHECK(HierLattice(4, 2).side() == 16);
}

TEST_CASE("hierarchical scale: pinned values and bounds") {
  HierLattice lat(2, 3);
  CHECK(hier_scale(lat, site(3, 5, 7), site(3, 5, 7)) == 0);
  CHECK(hier_distance(lat, site(3, 5, 7), site(3, 5, 7)) == 1.0);
  CHECK(hier_scale(lat, site(0, 0, 0), site(1, 0, 0)) == 0);
  CHECK(hier_scale(lat, site(0, 0, 0), site(4, 0, 0)) == 2);
  CHECK(hier_distance(lat, site(0, 0, 0), site(4, 0, 0)) == 4.0);
  CHECK(hier_scale(lat, site(0, 0, 0), site(0, 0, 7)) == 2);
  CHECK(hier_scale(lat, site(0, 0, 0), site(2, 0, 0)) == 1);

  CHECK_THROWS_AS(hier_scale(lat, site(8, 0, 0), site(0, 0, 0)),
                  std::invalid_argument);
  Site lifted = site(0, 0, 0);
  lifted.level = 1;
  CHECK_THROWS_AS(hier_scale(lat, lifted, site(0, 0, 0)),
                  std::invalid_argument);
}

TEST_CASE("hierarchical scale is symmetric and ultrametric") {
  HierLattice lat(2, 3);
  std::mt19937 rng(12345);
  std::uniform_int_distribution<std::int64_t> u(0, lat.side() - 1);
  auto rnd = [&] { return site(u(rng), u(rng), u(rng)); };
  for (int t = 0; t < 500; ++t) {
    Site x = rnd(), y = rnd(), z = rnd();
    const int kxy = hier_scale(lat, x, y);
    CHECK(kxy == hier_scale(lat, y, x));
    CHECK(kxy <= lat.N);
    CHECK(hier_scale(lat, x, z) <=
          std::max(kxy, hier_scale(lat, y, z)));
  }
}

TEST_CASE("oscillating signs: values, block sums, periodicity") {
  for (int L : {2, 4}) {
    HierLattice lat(L, 2);
    CHECK(a_sign(lat, site(0, 0, 0)) == 1);
    CHECK(a_sign(lat, site(1, 0, 0)) == -1);

    // Sum over every first-level block vanishes.
    const std::int64_t nb = lat.side() / L;
    for (std::int64_t bx = 0; bx < nb; ++bx)
      for (std::int64_t by = 0; by < nb; ++by)
        for (std::int64_t bz = 0; bz < nb; ++bz) {
          int sum = 0;
          for (int i = 0; i < L; ++i)
            for (int j = 0; j < L; ++j)
              for (int k = 0; k < L; ++k)
                sum += a_sign(lat, site(bx * L + i, by * L + j, bz * L + k));
          CHECK(sum == 0);
        }

    // Invariance under translations by L in every direction.
    for (std::int64_t x1 = 0; x1 < lat.side() - L; ++x1)
      CHECK(a_sign(lat, site(x1, 0, 0)) == a_sign(lat, site(x1 + L, 2, 3)));
  }
}

TEST_CASE("free covariance: spin structure and pinned diagonal value") {
  HierLattice lat(2, 3);
  CHECK(free_covariance(lat, site(1, 2, 3), site(4, 5, 6), 0, 1) == cplx(0.0));
  CHECK(free_covariance(lat, site(1, 2, 3), site(4, 5, 6), 1, 0) == cplx(0.0));

  // x = y: -i * (1 + 1/4 + 1/16) = -21i/16.
  const cplx diag = free_covariance(lat, site(5, 1, 6), site(5, 1, 6), 0, 0);
  CHECK(std::abs(diag - cplx(0.0, -21.0 / 16.0)) < 1e-15);

  // Purely imaginary, magnitude bounded by d^{-2} * sum_h L^{-2h}.
  std::mt19937 rng(99);
  std::uniform_int_distribution<std::int64_t> u(0, lat.side() - 1);
  const double geom = 1.0 / (1.0 - 1.0 / (lat.L * lat.L));
  for (int t = 0; t < 300; ++t) {
    Site x = site(u(rng), u(rng), u(rng)), y = site(u(rng), u(rng), u(rng));
    const cplx c = free_covariance(lat, x, y, 0, 0);
    CHECK(c.real() == 0.0);
    const double d = hier_distance(lat, x, y);
    CHECK(std::abs(c) <= d * d * 1e-300 + geom / (d * d) + 1e-15);
  }
}

TEST_CASE("free covariance equals the scale-by-scale assembly on all pairs") {
  // Independent oracle: each scale h contributes
  //   L^{-2h} A_{floor(x/L^h)} A_{floor(y/L^h)} * (-i)
  // whenever x and y share the level-(h+1) block, because the fluctuation
  // fields of different blocks and different scales are independent.  The
  // library instead starts the sum at k(x,y); both must agree exactly.
  HierLattice lat(2, 3);
  const std::int64_t n = lat.side();
  std::vector<Site> sites;
  for (std::int64_t a = 0; a < n; ++a)
    for (std::int64_t b = 0; b < n; ++b)
      for (std::int64_t c = 0; c < n; ++c) sites.push_back(site(a, b, c));

  for (const Site& x : sites)
    for (const Site& y : sites) {
      cplx assembled = 0.0;
      for (int h = 0; h < lat.N; ++h) {
        const Site bx = block_of(lat, x, h + 1), by = block_of(lat, y, h + 1);
        if (bx.coords != by.coords) continue;
        const double w = std::pow(static_cast<double>(lat.L), -2.0 * h);
        assembled += cplx(0.0, -w) * static_cast<double>(
            a_sign(lat, block_of(lat, x, h)) * a_sign(lat, block_of(lat, y, h)));
      }
      const cplx lib = free_covariance(lat, x, y, 0, 0);
      CHECK(std::abs(lib - assembled) < 1e-15);
    }
}
