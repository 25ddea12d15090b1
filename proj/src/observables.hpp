#pragma once
// Two-point correlation functions on the hierarchical lattice: the insertion
// flow carried alongside a stored RG flow, the scale decomposition with the
// oscillating block signs, the assembled correlator with its error
// certificate, and the supersymmetric localization oracle.

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "lattice.hpp"
#include "rg_flow.hpp"

namespace hsrg {

// One forward RG pass with every intermediate effective potential retained,
// so the insertion flows for all scales can reuse a single forward pass.
struct StoredFlow {
  FlowTrace trace;
  std::vector<EffectivePotential> potentials;  // U^(0) .. U^(N)
};
StoredFlow run_flow_retained(cplx lambda, cplx mu, const FlowConfig& cfg);

// Flowed two-point insertion remainder for a fixed insertion scale k: the
// three radial tables G_n of
//   F~(Phi) = e^{-lambda_h (Phi.Phi)^2 - i mu_h (Phi.Phi)}
//             sum_n (psi.psi)^n G_n(phi)
// at the current scale h.  |G_0(0)| stays O(|lambda_{k-1}|^{1/2 - 8 eps})
// along healthy flows (diagnostic envelope, not enforced).
struct InsertionState {
  int k = 0;  // insertion scale: the state was created from U^(k-1)
  int h = 0;  // current scale; tables live on the grid of U^(h)
  std::array<RadialFunction, 3> G;
  double integration_error = 0.0;  // max reported error over the chain so far
};

// First insertion integral: the normalized fluctuation average of
// [U(Phi/L + Z) U(Phi/L - Z)]^{L^3/2} times the spin-averaged insertion
// (bosonic ||zeta_phi||^2 / 2, or the Grassmann zeta_psi.zeta_psi / 2),
// minus -i (bosonic) / +i (fermionic) times the zeta = 0 integrand -- the
// one-term stationary-phase split whose remainder defines F~.  The result is
// reweighted by the beta couplings of the matching flow step (diag), and its
// tables live on the grid of U_next.
InsertionState insertion_init(const EffectivePotential& U,
                              const EffectivePotential& U_next,
                              const FlowDiagnostics& diag,
                              const FlowConfig& cfg, bool fermionic);

// One insertion-flow step: the normalized fluctuation average of
// [F_+ F_-]^{L^3/2 - 1} F_- F~_+, with F the plain potential factor of U and
// F~_+ the insertion factor carrying ins.G; reweighted by the beta couplings
// of the matching flow step.  Requires ins.h == U.coupling.h.
InsertionState insertion_step(const InsertionState& ins,
                              const EffectivePotential& U,
                              const EffectivePotential& U_next,
                              const FlowDiagnostics& diag,
                              const FlowConfig& cfg);

// The per-scale error factors F~_j(0), j = 0..N-1, of the correlator
// decomposition.  They depend only on the scale j, never on the site pair,
// so one vector serves every pair on the lattice.  err_out receives the max
// reported integration error over all insertion integrals.
std::vector<cplx> insertion_values(const StoredFlow& flow,
                                   const FlowConfig& cfg, bool fermionic,
                                   double* err_out = nullptr);

struct TwoPointResult {
  Site x, y;
  int k = 0;             // hierarchical scale of the pair
  double distance = 0.0;  // L^k
  cplx value{};
  cplx free_part{};
  std::vector<cplx> error_terms;   // per-scale contributions to value - free
  double error_abs = 0.0;          // |E_N| = |value - free| * L^{2k}
  double theta_certificate = 0.0;  // |E_N| d^theta |lambda|^{-theta}
  double integration_error = 0.0;
};

// Assembled bosonic correlator <phi+_{x,sigma} phi-_{y,sigma'}>:
//   free_covariance + sum_{j=k}^{N-1} L^{-2j} A_j(x) A_j(y) F~_j(0),
// using insertion values precomputed by insertion_values(flow, cfg, false).
// Off-diagonal spin pairs are identically zero.  Requires lat.N <= cfg.N.
TwoPointResult two_point(const HierLattice& lat, const Site& x, const Site& y,
                         int spin_a, int spin_b, const StoredFlow& flow,
                         const std::vector<cplx>& ins_values,
                         const FlowConfig& cfg, double integration_error = 0.0,
                         double theta = 0.4);

// Fermionic counterpart <psi+_x psi-_y>, built from the Grassmann insertion
// values (insertion_values with fermionic = true); its free part is the
// negative of the bosonic one, and supersymmetry makes the full correlator
// the negative of two_point up to integration error.
TwoPointResult fermion_two_point(const HierLattice& lat, const Site& x,
                                 const Site& y, int spin_a, int spin_b,
                                 const StoredFlow& flow,
                                 const std::vector<cplx>& ins_values,
                                 const FlowConfig& cfg,
                                 double integration_error = 0.0,
                                 double theta = 0.4);

std::string two_point_to_json(const TwoPointResult& r);
// CSV table, one row per result, columns:
// x, y, k, d, Re value, Im value, Re free, Im free, |E_N|, theta_certificate
std::string two_point_table_to_csv(const std::vector<TwoPointResult>& rows);

struct SusyCheckResult {
  cplx value{};
  double residual = 0.0;           // |value - g(0)|
  double integration_error = 0.0;  // reported by the bosonic oracle
};

// Single-superfield localization oracle: integrates f(Z) = g((Z.Z)) over one
// fluctuation superfield, expanding g around the bosonic radial part in the
// nilpotent fermion bilinear (Berezin weights computed from the algebra at
// runtime) and evaluating the bosonic factor with the regulated oracle.  For
// integrable g the exact answer is g(0).  decay_scale: radius beyond which
// g(r^2) is negligible.
SusyCheckResult susy_localization_check(const std::function<cplx(double)>& g,
                                        double decay_scale,
                                        const FlowConfig& cfg);

}  // namespace hsrg
