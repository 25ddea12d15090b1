// Tests of the oscillatory-Gaussian integration module: moment extraction,
// stationary-phase values against closed forms, the regulated oracle, and the
// cross-oracle consistency / remainder-scaling properties.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../src/oscillatory.hpp"

using namespace hsrg;

namespace {

ReducedIntegrand radial(std::function<cplx(double)> g, double decay) {
  return scalar_integrand([g = std::move(g)](double r, double) { return g(r); },
                          decay);
}

}  // namespace

TEST_CASE("spherical moments of simple radial functions") {
  auto one = radial([](double) { return 1.0; }, 1.0);
  auto m1 = spherical_moments(one, 2);
  CHECK(std::abs(m1[0][0] - 1.0) < 1e-12);
  CHECK(std::abs(m1[1][0]) < 1e-10);
  CHECK(std::abs(m1[2][0]) < 1e-7);

  auto r2 = radial([](double r) { return r * r; }, 1.0);
  auto m2 = spherical_moments(r2, 2);
  CHECK(std::abs(m2[1][0] - 8.0) < 1e-8);
  CHECK(std::abs(m2[2][0]) < 1e-6);

  auto r4 = radial([](double r) { return std::pow(r, 4.0); }, 1.0);
  auto m3 = spherical_moments(r4, 2);
  CHECK(std::abs(m3[1][0]) < 1e-8);
  CHECK(std::abs(m3[2][0] - 192.0) < 1e-6);
}

TEST_CASE("stationary phase values against closed forms") {
  auto one = radial([](double) { return 1.0; }, 1.0);
  auto s1 = stationary_phase_value(one, 2);
  CHECK(std::abs(s1.value[0] - 1.0) < 1e-12);
  CHECK(s1.remainder_estimate[0] < 1e-5);

  auto r2 = radial([](double r) { return r * r; }, 1.0);
  auto s2 = stationary_phase_value(r2, 2);
  CHECK(std::abs(s2.value[0] - cplx(0.0, -2.0)) < 1e-8);

  auto r4 = radial([](double r) { return std::pow(r, 4.0); }, 1.0);
  auto s3 = stationary_phase_value(r4, 3);
  CHECK(std::abs(s3.value[0] - cplx(-6.0, 0.0)) < 1e-6);
}

TEST_CASE("angular quadrature: u-independent integrands are order-independent") {
  auto g = [](double r, double) { return std::exp(-r * r) * cplx(1.0, 0.3); };
  for (int order : {1, 4, 16, 40}) {
    SpeOptions o;
    o.angular_order = order;
    auto f = scalar_integrand(g, 3.0);
    auto hi = stationary_phase_value(f, 2, o);
    auto ref = stationary_phase_value(f, 2);
    CHECK(std::abs(hi.value[0] - ref.value[0]) <= 1e-12 * std::abs(ref.value[0]));
  }
}

TEST_CASE("angular dependence: (u r)^2 has mean r^2/4") {
  // (direction-cosine * r)^2 averages to r^2/4 on the 3-sphere, so the
  // integral is one quarter of that of r^2.
  auto f = scalar_integrand([](double r, double u) { return u * u * r * r; },
                            1.0);
  auto s = stationary_phase_value(f, 2);
  CHECK(std::abs(s.value[0] - cplx(0.0, -0.5)) < 1e-8);
  auto o = regulated_value(f);
  CHECK(std::abs(o.value[0] - cplx(0.0, -0.5)) < 1e-8);
}

TEST_CASE("regulated oracle: normalization and polynomial moments") {
  auto one = radial([](double) { return 1.0; }, 1.0);
  for (double eps0 : {0.5, 0.3}) {
    std::vector<double> sched;
    for (int k = 0; k <= 10; ++k) sched.push_back(eps0 * std::pow(2.0, -k));
    auto r = regulated_value(one, sched);
    CHECK(std::abs(r.value[0] - 1.0) < 1e-10);
  }

  // A polynomially growing mean amplifies phase roundoff at the far panels
  // (error ~ 1e-19 * s^p integrated against e^{-eps s}), so the oracle is
  // noise-limited rather than exact here; the expansion-side checks cover the
  // exact moment values.  Still require good absolute accuracy.
  auto r2 = radial([](double r) { return r * r; }, 1.0);
  auto v2 = regulated_value(r2);
  CHECK(std::abs(v2.value[0] - cplx(0.0, -2.0)) < 1e-6);
}

TEST_CASE("regulated oracle is deterministic") {
  auto f = radial([](double r) { return std::exp(-0.01 * std::pow(r, 4.0)); },
                  std::pow(40.0 / 0.01, 0.25));
  auto a = regulated_value(f);
  auto b = regulated_value(f);
  CHECK(a.value[0] == b.value[0]);
  CHECK(a.extrapolation_error == b.extrapolation_error);
}

TEST_CASE("cross-oracle consistency on quartic-decay integrands") {
  // Reference values computed independently with 30-digit adaptive quadrature
  // of (i+eps)^2 int s e^{-(i+eps)s - lam s^2} ds at eps -> 0.
  const struct {
    double lam;
    cplx exact;
  } refs[] = {
      {1e-1, {1.4073035110881162, 1.150214240712472}},
      {1e-2, {1.0670372121384177, 6.1539348961537785e-9}},
      {1e-3, {1.0060608554615573, 0.0}},
  };
  for (const auto& rc : refs) {
    const double decay = std::pow(40.0 / rc.lam, 0.25);
    auto f = radial(
        [lam = rc.lam](double r) { return std::exp(-lam * std::pow(r, 4.0)); },
        decay);
    auto spe = stationary_phase_value(f, 2);
    auto orc = regulated_value(f);
    CHECK(std::abs(orc.value[0] - rc.exact) < 1e-8);
    const double tol = spe.remainder_estimate[0] + orc.extrapolation_error;
    CHECK(std::abs(spe.value[0] - orc.value[0]) <= tol);
  }
}

TEST_CASE("remainder scaling across a decade of quartic widths") {
  // Measured truncation error of the m-term expansion vs the regulated oracle
  // must shrink by at least 10^{0.6(4+2m)/4 - 0.5} per decade of the quartic
  // coupling (strip width taken with the configured +0.1 offset exponent).
  auto err_at = [](double lam, int m) {
    const double decay = std::pow(40.0 / lam, 0.25);
    auto f = radial([lam](double r) { return std::exp(-lam * std::pow(r, 4.0)); },
                    decay);
    auto spe = stationary_phase_value(f, m);
    auto orc = regulated_value(f);
    return std::abs(spe.value[0] - orc.value[0]);
  };
  for (int m : {1, 2, 3}) {
    const double need = std::pow(10.0, 0.6 * (4.0 + 2.0 * m) / 4.0 - 0.5);
    double e1 = err_at(1e-1, m), e2 = err_at(1e-2, m), e3 = err_at(1e-3, m);
    CHECK(e1 / e2 >= need);
    CHECK(e2 / e3 >= need);
  }
}
