// Normalized bosonic Gaussian integrals over R^4 with purely imaginary
// covariance: int dmu(zeta) f(zeta), where dmu is the (suitably normalized)
// oscillatory Gaussian e^{-i||zeta||^2}-type measure, for integrands that
// depend on zeta only through the radius r = ||zeta|| and the cosine u of the
// angle to a fixed external direction.
//
// Two independent evaluation paths:
//  * stationary-phase expansion  sum_{j<m} d_j (Lap^j f)(0), d_j = (-i)^j/(4^j j!),
//    with the Laplacian moments recovered from the 4-d spherical-mean expansion
//    M(r) = sum_j (Lap^j f)(0) r^{2j} / (4^j j! (j+1)!);
//  * a regulated-quadrature oracle: I(eps) = (i+eps)^2 int_0^inf s e^{-(i+eps)s}
//    M(sqrt(s)) ds, Richardson-extrapolated eps -> 0.
// Integrands are vector-valued so one set of (expensive) node evaluations can
// serve several output components.
#pragma once

#include <complex>
#include <functional>
#include <vector>

namespace hsrg {

using cplx = std::complex<double>;

// Deterministic pairwise reduction (fixed association order, independent of
// any threading of the caller).
cplx pairwise_sum(const std::vector<cplx>& v);

struct ReducedIntegrand {
  int n_comp = 1;
  // eval(r, u, out): writes n_comp values; must be thread-safe.
  std::function<void(double r, double u, cplx* out)> eval;
  // radius beyond which |f| is below ~1e-16 of its peak (drives stencil and
  // panel truncation choices)
  double decay_scale = 1.0;
};

struct SpeOptions {
  int angular_order = 16;    // Gauss-Chebyshev (second kind) points in u
  int stencil_radii = 8;     // geometric stencil r_j = r0 * 2^{j/2}
  double r0_factor = 3e-2;   // r0 = r0_factor * decay_scale
  int fit_degree = -1;       // polynomial degree in s = r^2; -1 = m + 2
  double cond_threshold = 1e10;
  // diagnostic inputs for the strip-width remainder bound; 0 = auto
  double W = 0.0;   // auto: decay_scale
  double FW = 0.0;  // auto: coarse sample of |f| times decay volume
};

struct SpeResult {
  std::vector<cplx> value;                 // per component
  int order = 0;                           // m
  std::vector<double> remainder_estimate;  // next-terms heuristic, per comp.
  std::vector<double> w_scaling_bound;     // K_m W^{-4-2m} F_W diagnostic
  std::vector<cplx> d_coeffs;              // d_0..d_{m-1}
};

struct OracleResult {
  std::vector<cplx> value;
  double extrapolation_error = 0.0;  // extrapolation + quadrature estimate
};

// (Lap^j f)(0) for j = 0..j_max (outer index j, inner index component).
// Throws std::runtime_error on an ill-conditioned stencil fit.
std::vector<std::vector<cplx>> spherical_moments(const ReducedIntegrand& f,
                                                 int j_max,
                                                 const SpeOptions& opts = {});

SpeResult stationary_phase_value(const ReducedIntegrand& f, int m,
                                 const SpeOptions& opts = {});

std::vector<double> default_epsilon_schedule();  // 0.5 * 2^{-k}, k = 0..10

// Throws std::runtime_error("oracle divergence...") when the extrapolation
// error estimates fail to decrease.
OracleResult regulated_value(const ReducedIntegrand& f,
                             const std::vector<double>& eps_schedule =
                                 default_epsilon_schedule(),
                             const SpeOptions& opts = {});

// ---- scalar conveniences ----------------------------------------------------
ReducedIntegrand scalar_integrand(std::function<cplx(double, double)> eval,
                                  double decay_scale);

}  // namespace hsrg
