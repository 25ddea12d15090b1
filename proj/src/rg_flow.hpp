#pragma once
// Single-scale renormalization-group map on effective potentials of the form
//   U(Phi) = e^{-lambda (Phi.Phi)^2 - i mu (Phi.Phi)} sum_n R_n(phi) (psi.psi)^n,
// its localization / coupling-update split, the N-scale driver, and the
// shooting-method tuning of the quadratic counterterm mu(lambda).

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "grassmann.hpp"
#include "oscillatory.hpp"

namespace hsrg {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------
enum class EnMode { kStationaryPhase, kOracle };

struct FlowConfig {
  int L = 2;                 // block side, even
  int N = 10;                // number of scales
  EnMode mode = EnMode::kOracle;
  int spe_order = 2;         // m in the stationary-phase expansion
  int insertion_spe_order = 1;  // m for insertion-flow steps
  int angular_order = 16;    // angular quadrature nodes for the zeta integral

  // Radial grid: n_radii points, r_0 = 0, first step r1_factor*|lambda|^{-1/4},
  // geometric up to r_max_factor*|lambda|^{-1/4}.
  int n_radii = 96;
  double r1_factor = 1e-2;
  double r_max_factor = 3.0;

  // Taylor extraction: least squares in s = r^2 with polynomial degree
  // fit_degree.  The fit window s <= w |lambda|^{-1/2} is chosen per scale
  // from a small candidate list of w values by minimizing the change of the
  // extracted coefficients when the degree is raised by one (an a-posteriori
  // truncation-vs-noise estimate).  fit_points is the fixed-window fallback
  // used when no candidate window holds enough grid points.
  int fit_points = 24;
  int fit_degree = 6;

  // Bookkeeping constants.
  double c0 = 1.0 / 6.0;       // initial large-field growth constant
  double c_growth = 1.0;       // c_{h+1} = c_h + c_growth * |lambda_h|^eps
  double eps_exponent = 0.1;   // the epsilon above
  double theta = 0.4;          // decay exponent used by correlator envelopes
  double cbar = 8.0;           // tuning disk |mu_h| <= 2*cbar*|lambda_h|
  double r0_drift_tol = 1e-4;  // hard failure threshold for |R_0(0) - 1|

  // Tuning controls.
  double tune_secant_tol = 1e-4;  // stop when |d mu| <= tol * lambda
  int tune_max_secant = 12;

  int threads = 0;  // 0 = std::thread::hardware_concurrency()
};

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

// Radial (even) function of phi, stored on a grid of radii and interpolated
// in s = r^2 by local high-order barycentric Lagrange polynomials; clamped
// beyond the last node.
struct RadialFunction {
  std::vector<double> grid;      // radii, increasing, grid[0] == 0
  std::vector<cplx> values;      // one per radius
  std::array<cplx, 4> taylor{};  // s^0..s^3 coefficients at 0 (diagnostic)
  // Represent the function as exp(P(s)) with a single global Chebyshev
  // polynomial P fitted to log(values) (with continuous phase unwrapping
  // along the grid).  For zero-free functions whose log is nearly polynomial
  // -- like the radial superfunction of an effective potential, whose log is
  // an accumulated quadratic plus small analytic corrections -- this is
  // near machine-exact where the function carries weight, and, crucially, it
  // is globally smooth: the value and its s-derivatives come from one
  // analytic object, with no interpolation-window seams and no
  // divided-difference roundoff.  Requires all values nonzero.
  bool log_interp = false;

  void build_spline();           // must be called after filling grid/values
  cplx eval_s(double s) const;   // evaluate at s = r^2 (clamped to range)
  cplx eval_r(double r) const { return eval_s(r * r); }
  // jet[0..2] = value, d/ds, d^2/ds^2 of the interpolant (s clamped to range).
  void eval_jet(double s, cplx* jet) const;

 private:
  size_t window(double s) const;
  std::vector<cplx> coef_;       // Newton coefficients per node window
  std::vector<double> s_;        // s-nodes
  // log_interp representation: Chebyshev coefficients of the fitted log and
  // its first two derivatives in x = 2 s / s_max - 1.
  std::array<std::vector<cplx>, 3> cheb_;
};

struct CouplingState {
  int h = 0;
  cplx lambda{0.0, 0.0};
  cplx mu{0.0, 0.0};
  double c = 1.0 / 6.0;  // large-field growth constant proxy
};

struct EffectivePotential {
  CouplingState coupling;
  std::array<RadialFunction, 3> R;  // R_0, R_1, R_2
};

struct FlowDiagnostics {
  cplx gamma_psi2{}, gamma_phi2{};                   // quadratic channels
  cplx gamma_psipsi4{}, gamma_phipsi4{}, gamma_phiphi4{};  // quartic channels
  cplx beta2{}, beta4{};
  std::array<double, 3> susy_residuals{};        // see localize() docs
  std::array<double, 3> susy_error_estimates{};  // fit-noise floor per residual
  cplx e0_at_zero{};
  double integration_error = 0.0;   // max reported quadrature/remainder error
  double fit_condition = 0.0;       // condition number of the Taylor fit
  std::array<double, 3> small_field_margins{};  // sampled |R_n| envelopes
};

struct FlowTrace {
  struct ScaleRecord {
    CouplingState state;
    FlowDiagnostics diag;
  };
  std::vector<ScaleRecord> scales;  // scale h = 0 .. (last reached)
  std::string status = "ok";        // "ok", "exited_disk", "hard_failure: ..."
  int first_disk_exit = -1;         // first h with |mu_h| > 2*cbar*|lambda_h|
};

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// Radial grid for couplings of magnitude |lambda| (uses 1 as the length scale
// when lambda == 0).
std::vector<double> make_radial_grid(double abs_lambda, const FlowConfig& cfg);

// Initial potential U^(0): R = (1, 0, 0) on the grid for |lambda|.
EffectivePotential initial_potential(cplx lambda, cplx mu,
                                     const FlowConfig& cfg);

// Per-node evaluator of the fluctuation integrand.  For an external radius
// r_phi and a bosonic fluctuation node (r_zeta, u = cos angle) it returns the
// three (psi.psi)^n coefficients of
//   e^{+Vb_tilde} * integral over the fermionic fluctuation of the full
//   two-block product [U(Phi/L + Z) U(Phi/L - Z)]^{L^3/2},
// with the explicit scalar weight e^{-Vb_tilde} and the nilpotent prefactor
// of scale h+1 stripped off.  The Grassmann content of the integrand lives in
// the commutative nilpotent subalgebra generated by the two even bilinears
//   P_pm = (psi.psi)/L^2 pm (2/L)(psi.zeta) + (zeta.zeta),
// so each node needs only arithmetic on the 15 coefficients of p^a q^b with
// a + b <= 4; the Berezin integral and prefactor strip are precomputed once
// per radius as a 15 x 3 extraction matrix using the full algebra.
class NodeEvaluator {
 public:
  NodeEvaluator(const CouplingState& st, const std::array<RadialFunction, 3>& R,
                int L);

  // Must be called before eval() for a given external radius.
  void set_radius(double r_phi);

  // Bosonic weight exponent Vb_tilde(r_phi, r_zeta, u) (true scalar part).
  cplx vb_tilde(double r_zeta, double u) const;

  // out[n] = e^{-Vb_tilde} * (psi.psi)^n coefficient, n = 0, 1, 2.
  void eval(double r_zeta, double u, cplx* out) const;

  // Same reduced integrand with the spin-averaged fermionic two-point
  // insertion (zeta_psi . zeta_psi)/2 placed inside the fluctuation integral.
  void eval_fermion_insertion(double r_zeta, double u, cplx* out) const;

  // Integrand of one insertion-flow step:
  //   [F_+ F_-]^{L^3/2 - 1} * F_- * (G_0(s_+) + G_1(s_+) P_+ + G_2(s_+) P_+^2),
  // i.e. one of the "+" potential factors is replaced by the flowed insertion
  // remainder with tables G.  The scalar prefactor multiplicities are the same
  // as in the plain product, so the weight and prefactor strip are unchanged.
  void eval_insertion_step(const std::array<RadialFunction, 3>& G,
                           double r_zeta, double u, cplx* out) const;

  double decay_scale() const { return decay_scale_; }

 private:
  cplx lambda_, mu_;
  int L_;
  int half_power_;  // L^3 / 2
  const std::array<RadialFunction, 3>* R_;
  double r_phi_ = 0.0;
  double decay_scale_ = 1.0;
  void eval_core(double r_zeta, double u, cplx* out,
                 const std::array<RadialFunction, 3>* G_step,
                 bool fermion_insertion) const;

  // Indexed a*5+b for the monomial p^a q^b (only a+b <= 4 used).
  std::array<std::array<cplx, 3>, 25> extract_;
  // Same with the factor (zeta_psi . zeta_psi)/2 inside the Berezin integral.
  std::array<std::array<cplx, 3>, 25> extract_fins_;
};

// The three fluctuation-integrated coefficient functions E_n on phi_grid.
// err_out (optional) receives the max reported integration error.
std::array<RadialFunction, 3> compute_En(const EffectivePotential& U,
                                         const FlowConfig& cfg,
                                         const std::vector<double>& phi_grid,
                                         double* err_out = nullptr);

// Low-order Taylor data of the E_n in s = r^2 and the derived gamma
// coefficients; gamma_psi2 = E_1(0), gamma_phi2 = s-coefficient of E_0,
// gamma_psipsi4 = E_2(0), gamma_phipsi4 = s-coefficient of E_1,
// gamma_phiphi4 = s^2-coefficient of E_0.
struct LocalizeResult {
  cplx gamma_psi2{}, gamma_phi2{};
  cplx gamma_psipsi4{}, gamma_phipsi4{}, gamma_phiphi4{};
  std::array<std::array<cplx, 4>, 3> taylor{};  // fitted s^k coeffs per E_n
  double fit_condition = 0.0;
  // A-posteriori noise floor of each relation defect, estimated from the
  // change of the fitted coefficients when the fit degree is raised by one:
  // [0] for gamma_psi2 vs gamma_phi2, [1] for gamma_psipsi4 vs gamma_phipsi4/2,
  // [2] for gamma_phipsi4/2 vs gamma_phiphi4.
  std::array<double, 3> error_estimates{};
};
LocalizeResult localize(const std::array<RadialFunction, 3>& E,
                        double abs_lambda, const FlowConfig& cfg);

// lambda' = lambda/L - gamma4 - gamma2^2/2;  mu' = L mu + i gamma2;
// c' = c + c_growth |lambda|^eps.
CouplingState update_couplings(const CouplingState& st, cplx gamma2,
                               cplx gamma4, const FlowConfig& cfg);

// One full RG step: compute_En + localize + update_couplings + reweighting
//   R'_0 = A E_0,  R'_1 = A (E_1 + B E_0),
//   R'_2 = A (E_2 + B E_1 + (beta4 + B^2/2) E_0),
// with A = e^{beta4 s^2 + i beta2 s}, B = 2 beta4 s + i beta2.
// Throws on |R'_0(0) - 1| > r0_drift_tol.
std::pair<EffectivePotential, FlowDiagnostics> rg_step(
    const EffectivePotential& U, const FlowConfig& cfg);

// If `potentials` is non-null, it receives every effective potential reached
// (U^(0) .. U^(N) for a complete flow), so downstream passes that need the
// whole tower -- e.g. the correlator's insertion flows -- reuse one forward
// pass.
FlowTrace run_flow(cplx lambda, cplx mu, const FlowConfig& cfg,
                   std::vector<EffectivePotential>* potentials = nullptr);

// Shooting-method tuning of mu on the disk |mu| <= 2*cbar*lambda: coarse grid
// ranked by survival depth (first scale with |mu_h| > 2*cbar*|lambda_h|),
// then complex secant iteration on mu -> mu_N.  Returns (mu*, tuned trace).
struct TuneResult {
  cplx mu_star{};
  FlowTrace trace;
  bool converged = false;
  int flow_evaluations = 0;
};
// If seeds are given, the coarse grid is skipped and the secant iteration
// starts from them (useful for refining a cheap low-order tune with the
// regulated integrator).
TuneResult tune_mu(double lambda, const FlowConfig& cfg,
                   const std::vector<cplx>& seeds = {});

// Serialization.
std::string flow_trace_to_json(const FlowTrace& trace,
                               const std::string& config_snapshot);
std::string flow_trace_to_csv(const FlowTrace& trace);

}  // namespace hsrg
