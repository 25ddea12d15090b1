#include "observables.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "grassmann.hpp"
#include "oscillatory.hpp"

namespace hsrg {

namespace {

enum class InsKind { kBosonic, kFermionic, kStep };

// Fluctuation integrals of the insertion integrand over phi_grid, mirroring
// the plain E_n computation: one NodeEvaluator per worker, three components
// per radius.  For InsKind::kBosonic/kFermionic (insertion_init) at_zero, when
// non-null, additionally receives the plain zeta = 0 integrand per radius,
// needed for the leading-term subtraction.
std::array<RadialFunction, 3> insertion_tables(
    const EffectivePotential& U, const FlowConfig& cfg,
    const std::vector<double>& phi_grid, InsKind kind,
    const std::array<RadialFunction, 3>* G, int spe_order,
    std::vector<std::array<cplx, 3>>* at_zero, double* err_out) {
  const size_t n_r = phi_grid.size();
  std::array<RadialFunction, 3> E;
  for (int n = 0; n < 3; ++n) {
    E[n].grid = phi_grid;
    E[n].values.assign(n_r, 0.0);
  }
  if (at_zero) at_zero->assign(n_r, {});
  std::vector<double> errs(n_r, 0.0);

  auto worker = [&](size_t begin, size_t end) {
    NodeEvaluator ev(U.coupling, U.R, cfg.L);
    SpeOptions opts;
    opts.angular_order = cfg.angular_order;
    for (size_t i = begin; i < end; ++i) {
      ev.set_radius(phi_grid[i]);
      ReducedIntegrand f;
      f.n_comp = 3;
      f.decay_scale = ev.decay_scale();
      switch (kind) {
        case InsKind::kBosonic:
          f.eval = [&ev](double r, double u, cplx* out) {
            ev.eval(r, u, out);
            const double half_s = 0.5 * r * r;
            for (int n = 0; n < 3; ++n) out[n] *= half_s;
          };
          break;
        case InsKind::kFermionic:
          f.eval = [&ev](double r, double u, cplx* out) {
            ev.eval_fermion_insertion(r, u, out);
          };
          break;
        case InsKind::kStep:
          f.eval = [&ev, G](double r, double u, cplx* out) {
            ev.eval_insertion_step(*G, r, u, out);
          };
          break;
      }
      if (cfg.mode == EnMode::kStationaryPhase) {
        const SpeResult res = stationary_phase_value(f, spe_order, opts);
        for (int n = 0; n < 3; ++n) E[n].values[i] = res.value[n];
        errs[i] = *std::max_element(res.remainder_estimate.begin(),
                                    res.remainder_estimate.end());
      } else {
        const OracleResult res =
            regulated_value(f, default_epsilon_schedule(), opts);
        for (int n = 0; n < 3; ++n) E[n].values[i] = res.value[n];
        errs[i] = res.extrapolation_error;
      }
      if (at_zero) ev.eval(0.0, 0.0, (*at_zero)[i].data());
    }
  };

  int n_threads = cfg.threads;
  if (n_threads <= 0)
    n_threads = static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min<int>(n_threads, static_cast<int>(n_r)));
  if (n_threads == 1) {
    worker(0, n_r);
  } else {
    std::vector<std::thread> pool;
    const size_t chunk = (n_r + n_threads - 1) / n_threads;
    for (int t = 0; t < n_threads; ++t) {
      const size_t b = t * chunk, e = std::min(n_r, b + chunk);
      if (b < e) pool.emplace_back(worker, b, e);
    }
    for (auto& th : pool) th.join();
  }

  if (err_out) *err_out = *std::max_element(errs.begin(), errs.end());
  return E;
}

// Normalize by the step's partition value and multiply by the nilpotent
// coupling-shift factor e^{beta4 (Phi.Phi)^2 + i beta2 (Phi.Phi)}, exactly as
// the flow does for its own tables, so the stored prefactor uses the scale
// h+1 couplings.
void normalize_and_reweight(std::array<RadialFunction, 3>& G,
                            const FlowDiagnostics& diag) {
  const cplx norm = diag.e0_at_zero;
  const cplx beta2 = diag.beta2, beta4 = diag.beta4;
  const auto& grid = G[0].grid;
  for (size_t i = 0; i < grid.size(); ++i) {
    const double s = grid[i] * grid[i];
    const cplx A = std::exp(beta4 * s * s + cplx(0.0, 1.0) * beta2 * s);
    const cplx B = 2.0 * beta4 * s + cplx(0.0, 1.0) * beta2;
    const cplx g0 = G[0].values[i] / norm, g1 = G[1].values[i] / norm,
               g2 = G[2].values[i] / norm;
    G[0].values[i] = A * g0;
    G[1].values[i] = A * (g1 + B * g0);
    G[2].values[i] = A * (g2 + B * g1 + (beta4 + B * B / 2.0) * g0);
  }
  for (int n = 0; n < 3; ++n) {
    G[n].build_spline();
    G[n].taylor[0] = G[n].values[0];
  }
}

}  // namespace

StoredFlow run_flow_retained(cplx lambda, cplx mu, const FlowConfig& cfg) {
  StoredFlow out;
  out.trace = run_flow(lambda, mu, cfg, &out.potentials);
  return out;
}

InsertionState insertion_init(const EffectivePotential& U,
                              const EffectivePotential& U_next,
                              const FlowDiagnostics& diag,
                              const FlowConfig& cfg, bool fermionic) {
  const auto& grid = U_next.R[0].grid;
  std::vector<std::array<cplx, 3>> at_zero;
  double err = 0.0;
  InsertionState st;
  // The insertion integrand vanishes at zeta = 0 (bosonic) or its first
  // stationary-phase term exactly cancels against the subtraction below, so
  // an order-m expansion of the product keeps only m - 1 useful orders of the
  // remainder; one extra order restores the nominal accuracy.
  st.G = insertion_tables(U, cfg, grid,
                          fermionic ? InsKind::kFermionic : InsKind::kBosonic,
                          nullptr, cfg.spe_order + 1, &at_zero, &err);
  // Subtract the leading stationary-phase term: the insertion's Gaussian
  // average is -i (bosonic) / +i (fermionic) times the zeta = 0 integrand.
  const cplx lead = fermionic ? cplx(0.0, 1.0) : cplx(0.0, -1.0);
  for (size_t i = 0; i < grid.size(); ++i)
    for (int n = 0; n < 3; ++n)
      st.G[n].values[i] -= lead * at_zero[i][n];
  normalize_and_reweight(st.G, diag);
  st.k = U.coupling.h + 1;
  st.h = st.k;
  st.integration_error = err;
  return st;
}

InsertionState insertion_step(const InsertionState& ins,
                              const EffectivePotential& U,
                              const EffectivePotential& U_next,
                              const FlowDiagnostics& diag,
                              const FlowConfig& cfg) {
  if (ins.h != U.coupling.h)
    throw std::invalid_argument("insertion_step: scale mismatch");
  const auto& grid = U_next.R[0].grid;
  double err = 0.0;
  InsertionState st;
  st.G = insertion_tables(U, cfg, grid, InsKind::kStep, &ins.G,
                          cfg.insertion_spe_order, nullptr, &err);
  normalize_and_reweight(st.G, diag);
  st.k = ins.k;
  st.h = ins.h + 1;
  st.integration_error = std::max(ins.integration_error, err);
  return st;
}

std::vector<cplx> insertion_values(const StoredFlow& flow,
                                   const FlowConfig& cfg, bool fermionic,
                                   double* err_out) {
  const int N = cfg.N;
  if (static_cast<int>(flow.potentials.size()) != N + 1)
    throw std::invalid_argument(
        "insertion_values: flow does not retain all potentials");
  std::vector<cplx> out(N);
  double err = 0.0;
  for (int j = 0; j < N; ++j) {
    InsertionState st =
        insertion_init(flow.potentials[j], flow.potentials[j + 1],
                       flow.trace.scales[j].diag, cfg, fermionic);
    for (int h = j + 1; h < N; ++h)
      st = insertion_step(st, flow.potentials[h], flow.potentials[h + 1],
                          flow.trace.scales[h].diag, cfg);
    out[j] = st.G[0].values[0];
    err = std::max(err, st.integration_error);
  }
  if (err_out) *err_out = err;
  return out;
}

namespace {

TwoPointResult two_point_impl(const HierLattice& lat, const Site& x,
                              const Site& y, int spin_a, int spin_b,
                              const StoredFlow& flow,
                              const std::vector<cplx>& ins_values,
                              const FlowConfig& cfg, double integration_error,
                              double theta, bool fermionic) {
  TwoPointResult res;
  res.x = x;
  res.y = y;
  res.k = hier_scale(lat, x, y);
  res.distance = hier_distance(lat, x, y);
  res.integration_error = integration_error;
  if (spin_a != spin_b) return res;  // correlator vanishes across spins
  if (lat.N > cfg.N || static_cast<int>(ins_values.size()) < lat.N)
    throw std::invalid_argument("two_point: flow shorter than the lattice");

  const cplx free_sign = fermionic ? cplx(0.0, 1.0) : cplx(0.0, -1.0);
  const cplx free_b = free_covariance(lat, x, y, spin_a, spin_b);
  res.free_part = fermionic ? -free_b : free_b;

  cplx value = 0.0;
  double weight = std::pow(static_cast<double>(lat.L), -2.0 * res.k);
  for (int j = res.k; j < lat.N; ++j) {
    const double aa =
        static_cast<double>(a_sign(lat, block_of(lat, x, j)) *
                            a_sign(lat, block_of(lat, y, j)));
    const cplx err_term = weight * aa * ins_values[j];
    value += weight * aa * free_sign + err_term;
    res.error_terms.push_back(err_term);
    weight /= static_cast<double>(lat.L) * lat.L;
  }
  res.value = value;

  const double l2k = std::pow(static_cast<double>(lat.L), 2.0 * res.k);
  res.error_abs = std::abs(value - res.free_part) * l2k;
  const double abs_lambda = std::abs(flow.potentials.front().coupling.lambda);
  res.theta_certificate =
      abs_lambda > 0.0
          ? res.error_abs * std::pow(res.distance, theta) *
                std::pow(abs_lambda, -theta)
          : (res.error_abs == 0.0 ? 0.0
                                  : std::numeric_limits<double>::infinity());
  return res;
}

std::string site_str(const Site& s) {
  std::ostringstream os;
  os << s.coords[0] << ':' << s.coords[1] << ':' << s.coords[2];
  return os.str();
}

}  // namespace

TwoPointResult two_point(const HierLattice& lat, const Site& x, const Site& y,
                         int spin_a, int spin_b, const StoredFlow& flow,
                         const std::vector<cplx>& ins_values,
                         const FlowConfig& cfg, double integration_error,
                         double theta) {
  return two_point_impl(lat, x, y, spin_a, spin_b, flow, ins_values, cfg,
                        integration_error, theta, false);
}

TwoPointResult fermion_two_point(const HierLattice& lat, const Site& x,
                                 const Site& y, int spin_a, int spin_b,
                                 const StoredFlow& flow,
                                 const std::vector<cplx>& ins_values,
                                 const FlowConfig& cfg,
                                 double integration_error, double theta) {
  return two_point_impl(lat, x, y, spin_a, spin_b, flow, ins_values, cfg,
                        integration_error, theta, true);
}

std::string two_point_to_json(const TwoPointResult& r) {
  nlohmann::json j;
  j["x"] = {r.x.coords[0], r.x.coords[1], r.x.coords[2]};
  j["y"] = {r.y.coords[0], r.y.coords[1], r.y.coords[2]};
  j["k"] = r.k;
  j["d"] = r.distance;
  j["value"] = {r.value.real(), r.value.imag()};
  j["free_part"] = {r.free_part.real(), r.free_part.imag()};
  j["error_terms"] = nlohmann::json::array();
  for (const cplx& e : r.error_terms)
    j["error_terms"].push_back({e.real(), e.imag()});
  j["error_abs"] = r.error_abs;
  j["theta_certificate"] = r.theta_certificate;
  j["integration_error"] = r.integration_error;
  return j.dump(2);
}

std::string two_point_table_to_csv(const std::vector<TwoPointResult>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "x,y,k,d,value_re,value_im,free_re,free_im,error_abs,"
        "theta_certificate\n";
  for (const auto& r : rows) {
    os << site_str(r.x) << ',' << site_str(r.y) << ',' << r.k << ','
       << r.distance << ',' << r.value.real() << ',' << r.value.imag() << ','
       << r.free_part.real() << ',' << r.free_part.imag() << ','
       << r.error_abs << ',' << r.theta_certificate << '\n';
  }
  return os.str();
}

SusyCheckResult susy_localization_check(const std::function<cplx(double)>& g,
                                        double decay_scale,
                                        const FlowConfig& cfg) {
  // Berezin weights of the nilpotent expansion g(s + z) = g(s) + g'(s) z +
  // g''(s) z^2 / 2 with z the fermionic part of the super-bilinear; computed
  // from the algebra rather than hard-coded.
  const GrassmannPoly& z = zeta_dot_zeta();
  std::array<cplx, 3> b{};
  b[0] = psi_psi_coefficients(berezin_fluct_integral(GrassmannPoly::scalar(1.0)))
             .c0;
  b[1] = psi_psi_coefficients(berezin_fluct_integral(z)).c0;
  b[2] = psi_psi_coefficients(berezin_fluct_integral(mul(z, z))).c0;

  // 4th-order central differences for g' and g''.
  const double hstep = 1e-3;
  auto d1 = [&](double s) {
    return (-g(s + 2 * hstep) + 8.0 * g(s + hstep) - 8.0 * g(s - hstep) +
            g(s - 2 * hstep)) /
           (12.0 * hstep);
  };
  auto d2 = [&](double s) {
    return (-g(s + 2 * hstep) + 16.0 * g(s + hstep) - 30.0 * g(s) +
            16.0 * g(s - hstep) - g(s - 2 * hstep)) /
           (12.0 * hstep * hstep);
  };

  ReducedIntegrand f;
  f.n_comp = 1;
  f.decay_scale = decay_scale;
  f.eval = [&](double r, double u, cplx* out) {
    (void)u;
    const double s = r * r;
    out[0] = b[0] * g(s) + b[1] * d1(s) + 0.5 * b[2] * d2(s);
  };
  SpeOptions opts;
  opts.angular_order = cfg.angular_order;
  const OracleResult res = regulated_value(f, default_epsilon_schedule(), opts);

  SusyCheckResult out;
  out.value = res.value[0];
  out.integration_error = res.extrapolation_error;
  out.residual = std::abs(out.value - g(0.0));
  return out;
}

}  // namespace hsrg
