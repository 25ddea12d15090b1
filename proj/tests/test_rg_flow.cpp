#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <complex>

#include "../src/rg_flow.hpp"

using namespace hsrg;

namespace {
FlowConfig base_config() {
  FlowConfig cfg;
  cfg.L = 2;
  cfg.threads = 1;
  return cfg;
}
}  // namespace

TEST_CASE("radial grid shape and spline round trip") {
  FlowConfig cfg = base_config();
  auto grid = make_radial_grid(1e-2, cfg);
  // Geometric inner nodes merged with outer Lobatto nodes, deduplicated.
  CHECK(grid.size() >= 96);
  CHECK(grid.size() <= 96 + 47);
  CHECK(grid[0] == 0.0);
  CHECK(grid[1] == doctest::Approx(1e-2 * std::pow(1e-2, -0.25)));
  CHECK(grid.back() == doctest::Approx(3.0 * std::pow(1e-2, -0.25)));
  for (size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);

  // Spline reproduces a smooth function of s between nodes and clamps beyond.
  RadialFunction f;
  f.grid = grid;
  f.values.resize(grid.size());
  for (size_t i = 0; i < grid.size(); ++i) {
    const double s = grid[i] * grid[i];
    f.values[i] = std::exp(cplx(-0.05 * s, 0.07 * s));
  }
  f.build_spline();
  double worst_inner = 0.0, worst = 0.0;
  for (size_t i = 1; i + 1 < grid.size(); ++i) {
    const double s = 0.5 * (grid[i] * grid[i] + grid[i + 1] * grid[i + 1]);
    const double err =
        std::abs(f.eval_s(s) - std::exp(cplx(-0.05 * s, 0.07 * s)));
    worst = std::max(worst, err);
    if (s < 10.0) worst_inner = std::max(worst_inner, err);
  }
  CHECK(worst_inner < 1e-6);  // dense inner nodes
  CHECK(worst < 1e-2);        // geometric tail is sparse by design
  const double s_end = grid.back() * grid.back();
  CHECK(f.eval_s(2.0 * s_end) == f.values.back());
}

TEST_CASE("free fixed point: lambda = 0 gives E = (1, 0, 0) everywhere") {
  FlowConfig cfg = base_config();
  cfg.mode = EnMode::kStationaryPhase;  // exact for a constant integrand
  auto U = initial_potential(0.0, 0.0, cfg);
  auto grid = make_radial_grid(0.0, cfg);
  auto E = compute_En(U, cfg, grid);
  for (size_t i = 0; i < grid.size(); ++i) {
    CHECK(std::abs(E[0].values[i] - cplx(1.0)) < 1e-12);
    CHECK(std::abs(E[1].values[i]) < 1e-12);
    CHECK(std::abs(E[2].values[i]) < 1e-12);
  }
}

TEST_CASE("quadratic channel matches the leading-order value 2 i L lambda") {
  FlowConfig cfg = base_config();
  const double lam = 1e-3;
  auto U = initial_potential(lam, 0.0, cfg);
  auto grid = make_radial_grid(lam / cfg.L, cfg);
  auto E = compute_En(U, cfg, grid);
  auto loc = localize(E, lam / cfg.L, cfg);
  // gamma2 = 2 i L lambda + O(lambda^{3/2}); quartic channel O(lambda^{3/2}).
  CHECK(std::abs(loc.gamma_psi2 - cplx(0.0, 2.0 * cfg.L * lam)) <
        10.0 * std::pow(lam, 1.5));
  CHECK(std::abs(loc.gamma_psipsi4) < 30.0 * std::pow(lam, 1.5));
  CHECK(std::abs(E[0].values[0] - cplx(1.0)) < 1e-9);
}

TEST_CASE("supersymmetry ties all five localization channels together") {
  FlowConfig cfg = base_config();
  for (double lam : {1e-3, 1e-2}) {
    auto U = initial_potential(lam, 0.0, cfg);
    auto grid = make_radial_grid(lam / cfg.L, cfg);
    auto E = compute_En(U, cfg, grid);
    auto loc = localize(E, lam / cfg.L, cfg);
    const double scale = std::abs(loc.gamma_psi2);
    CHECK(std::abs(loc.gamma_psi2 - loc.gamma_phi2) < 1e-5 * scale + 1e-10);
    CHECK(std::abs(loc.gamma_psipsi4 - loc.gamma_phipsi4 / 2.0) <
          1e-5 * std::abs(loc.gamma_psipsi4) + 1e-10);
    CHECK(std::abs(loc.gamma_phipsi4 / 2.0 - loc.gamma_phiphi4) <
          1e-5 * std::abs(loc.gamma_phiphi4) + 1e-10);
  }
}

TEST_CASE("stationary-phase and oracle evaluations agree within budgets") {
  FlowConfig cfg = base_config();
  const double lam = 1e-3;
  auto U = initial_potential(lam, 0.0, cfg);
  // Compare on a few radii only (cost).
  std::vector<double> radii = {0.0, 0.5, 1.5, 3.0};
  // Pad to satisfy the spline/grid minimum.
  for (double r = 4.0; radii.size() < 8; r += 1.0) radii.push_back(r);
  double err_spe = 0.0, err_orc = 0.0;
  FlowConfig spe_cfg = cfg;
  spe_cfg.mode = EnMode::kStationaryPhase;
  auto Es = compute_En(U, spe_cfg, radii, &err_spe);
  auto Eo = compute_En(U, cfg, radii, &err_orc);
  for (size_t i = 0; i < radii.size(); ++i)
    for (int n = 0; n < 3; ++n)
      CHECK(std::abs(Es[n].values[i] - Eo[n].values[i]) <=
            err_spe + err_orc + 1e-12);
}

TEST_CASE("coupling update formulas") {
  FlowConfig cfg = base_config();
  CouplingState st{3, cplx(1e-3, 0.0), cplx(2e-3, 0.0), 0.2};

  auto out = update_couplings(st, 0.0, 0.0, cfg);
  CHECK(out.h == 4);
  CHECK(out.lambda == st.lambda / 2.0);
  CHECK(out.mu == st.mu * 2.0);
  CHECK(out.c == doctest::Approx(0.2 + std::pow(1e-3, 0.1)));

  st.lambda = 1e-3;
  auto out2 = update_couplings(st, 0.0, cplx(1e-6, 0.0), cfg);
  CHECK(out2.lambda.real() == doctest::Approx(4.99e-4));

  const cplx g2(0.0, 4e-3);
  auto out3 = update_couplings(st, g2, 0.0, cfg);
  CHECK(out3.lambda == st.lambda / 2.0 - g2 * g2 / 2.0);
  CHECK(out3.mu == 2.0 * st.mu + cplx(0.0, 1.0) * g2);
}

TEST_CASE("one step at lambda = 1e-2 keeps the normalization and SUSY gates") {
  FlowConfig cfg = base_config();
  auto U = initial_potential(1e-2, 0.0, cfg);
  auto [V, diag] = rg_step(U, cfg);
  CHECK(std::abs(diag.e0_at_zero - cplx(1.0)) < 1e-6);
  CHECK(diag.susy_residuals[0] < 1e-6 * std::abs(diag.gamma_psi2) + 1e-10);
  CHECK(std::abs(V.R[0].values[0] - cplx(1.0)) < 1e-8);
  // R_1(0) vanishes after the quadratic counter-rotation.
  CHECK(std::abs(V.R[1].values[0]) < 1e-10);
  CHECK(V.coupling.h == 1);
}

TEST_CASE("trivial flow and trace serialization") {
  FlowConfig cfg = base_config();
  cfg.N = 3;
  cfg.mode = EnMode::kStationaryPhase;
  auto trace = run_flow(0.0, 0.0, cfg);
  CHECK(trace.status == "ok");
  CHECK(trace.scales.size() == 4);
  for (const auto& rec : trace.scales) {
    CHECK(rec.state.lambda == cplx(0.0));
    CHECK(rec.state.mu == cplx(0.0));
  }
  const std::string js = flow_trace_to_json(trace, "L=2");
  CHECK(js.find("\"scales\"") != std::string::npos);
  CHECK(js.find("\"lambda\"") != std::string::npos);
  const std::string csv = flow_trace_to_csv(trace);
  CHECK(csv.find("h,lambda_re") == 0);
  // Header + one row per recorded scale.
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
}

TEST_CASE("short interacting flow stays healthy and is deterministic") {
  FlowConfig cfg = base_config();
  cfg.N = 3;
  auto t1 = run_flow(1e-3, 0.0, cfg);
  CHECK(t1.status != "ok");  // untuned: expected to leave the disk eventually
  for (const auto& rec : t1.scales)
    if (rec.state.h < 3 && rec.diag.e0_at_zero != cplx(0.0))
      CHECK(std::abs(rec.diag.e0_at_zero - cplx(1.0)) < 1e-6);
  // lambda shrinks roughly by 1/L per scale.
  const cplx l0 = t1.scales[0].state.lambda;
  const cplx l3 = t1.scales[3].state.lambda;
  CHECK(std::abs(l3) < std::abs(l0));
  CHECK(std::abs(l3 * 8.0 - l0) < 10.0 * std::pow(1e-3, 1.5) * 8.0);

  auto t2 = run_flow(1e-3, 0.0, cfg);
  REQUIRE(t2.scales.size() == t1.scales.size());
  for (size_t i = 0; i < t1.scales.size(); ++i) {
    CHECK(t1.scales[i].state.lambda == t2.scales[i].state.lambda);
    CHECK(t1.scales[i].state.mu == t2.scales[i].state.mu);
  }
}

TEST_CASE("mu tuning at small lambda finds an O(lambda) counterterm") {
  FlowConfig cfg = base_config();
  cfg.N = 8;
  cfg.mode = EnMode::kStationaryPhase;
  const double lam = 1e-3;
  auto res = tune_mu(lam, cfg);
  CHECK(res.converged);
  CHECK(std::abs(res.mu_star) <= 2.0 * cfg.cbar * lam);
  CHECK(std::abs(res.mu_star) <= 6.0 * lam);  // expect ~2.7 lambda at L = 2
  CHECK(res.trace.first_disk_exit < 0);
  // The whole tuned trajectory stays well inside the disk.
  for (const auto& rec : res.trace.scales)
    CHECK(std::abs(rec.state.mu) <=
          2.0 * cfg.cbar * std::abs(rec.state.lambda) + 1e-15);
}
