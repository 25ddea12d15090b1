#include "rg_flow.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace hsrg {

// ---------------------------------------------------------------------------
// RadialFunction: local 8-point polynomial interpolation in s = r^2 (Newton
// form with precomputed divided differences).  On the smoothly graded
// geometric grid the degree-7 local interpolant is stable and its (ds/s)^8
// error is far below what the iterated one-scale map would amplify from a
// cubic spline.  The Newton form also yields exact first and second
// derivatives of the interpolant, which eval_jet exposes.
// ---------------------------------------------------------------------------
namespace {
constexpr size_t kInterpPoints = 8;
}

void RadialFunction::build_spline() {
  const size_t n = grid.size();
  if (n < 2 || values.size() != n)
    throw std::invalid_argument("RadialFunction: need >= 2 matching nodes");
  s_.resize(n);
  for (size_t i = 0; i < n; ++i) s_[i] = grid[i] * grid[i];
  for (size_t i = 1; i < n; ++i)
    if (s_[i] <= s_[i - 1])
      throw std::invalid_argument("RadialFunction: radii must increase");
  if (log_interp) {
    // Unwrapped complex log at the nodes.
    std::vector<cplx> lg(n);
    double phase = 0.0;
    const double pi = 3.14159265358979323846;
    for (size_t i = 0; i < n; ++i) {
      if (values[i] == cplx(0.0))
        throw std::invalid_argument(
            "RadialFunction: log representation needs nonzero values");
      cplx l = std::log(values[i]);
      while (l.imag() - phase > pi) l -= cplx(0.0, 2.0 * pi);
      while (l.imag() - phase < -pi) l += cplx(0.0, 2.0 * pi);
      phase = l.imag();
      lg[i] = l;
    }
    // Weighted least-squares Chebyshev fit in x = 2 s / s_max - 1.  Weights
    // proportional to sqrt(local node spacing) equalize the contribution per
    // unit of s on the geometrically graded grid; small singular values are
    // truncated so the sparse outer nodes cannot alias high modes.
    const int deg = static_cast<int>(std::min<size_t>(40, n / 2));
    const double smax = s_[n - 1];
    Eigen::MatrixXd A(n, deg + 1);
    Eigen::VectorXcd b(n);
    for (size_t i = 0; i < n; ++i) {
      const double x = 2.0 * s_[i] / smax - 1.0;
      const double lo = i > 0 ? s_[i - 1] : s_[0];
      const double hi = i + 1 < n ? s_[i + 1] : s_[n - 1];
      const double wgt = std::sqrt((hi - lo) / smax);
      double tkm = 1.0, tk = x;
      A(i, 0) = wgt;
      if (deg >= 1) A(i, 1) = wgt * x;
      for (int k2 = 2; k2 <= deg; ++k2) {
        const double tkp = 2.0 * x * tk - tkm;
        A(i, k2) = wgt * tkp;
        tkm = tk;
        tk = tkp;
      }
      b(i) = wgt * lg[i];
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    Eigen::VectorXcd ut_b = svd.matrixU().transpose() * b;
    Eigen::VectorXcd c = Eigen::VectorXcd::Zero(deg + 1);
    for (int k2 = 0; k2 <= deg; ++k2)
      if (sv(k2) > 1e-12 * sv(0)) c += svd.matrixV().col(k2) * (ut_b(k2) / sv(k2));
    cheb_[0].assign(c.data(), c.data() + deg + 1);
    // Chebyshev derivative recurrence, with chain factor dx/ds = 2 / s_max.
    for (int d = 1; d <= 2; ++d) {
      const auto& src = cheb_[d - 1];
      const int m = static_cast<int>(src.size());
      std::vector<cplx> der(std::max(1, m - 1), 0.0);
      cplx next2 = 0.0, next1 = 0.0;  // der coefficients k+2, k+1 (pre-chain)
      for (int k2 = m - 2; k2 >= 0; --k2) {
        const cplx val = next2 + 2.0 * (k2 + 1.0) * src[k2 + 1];
        der[k2] = val;
        next2 = next1;
        next1 = val;
      }
      if (!der.empty()) der[0] *= 0.5;  // T_0 normalization
      for (auto& v : der) v *= 2.0 / smax;
      cheb_[d] = std::move(der);
    }
    return;
  }
  const size_t k = std::min(kInterpPoints, n);
  // Divided-difference coefficients for every length-k node window.
  coef_.assign((n - k + 1) * k, 0.0);
  for (size_t w = 0; w + k <= n; ++w) {
    cplx* c = &coef_[w * k];
    for (size_t i = 0; i < k; ++i) c[i] = values[w + i];
    for (size_t l = 1; l < k; ++l)
      for (size_t i = k - 1; i >= l; --i)
        c[i] = (c[i] - c[i - 1]) / (s_[w + i] - s_[w + i - l]);
  }
}

namespace {
cplx clenshaw(const std::vector<cplx>& c, double x) {
  cplx b1 = 0.0, b2 = 0.0;
  for (size_t k = c.size(); k-- > 1;) {
    const cplx b0 = 2.0 * x * b1 - b2 + c[k];
    b2 = b1;
    b1 = b0;
  }
  return c.empty() ? cplx(0.0) : x * b1 - b2 + c[0];
}
}  // namespace

size_t RadialFunction::window(double s) const {
  const size_t n = s_.size();
  const size_t k = std::min(kInterpPoints, n);
  const size_t lo =
      std::upper_bound(s_.begin(), s_.end(), s) - s_.begin() - 1;
  return std::min(n - k, lo >= (k / 2 - 1) ? lo - (k / 2 - 1) : 0);
}

cplx RadialFunction::eval_s(double s) const {
  if (s_.empty())
    throw std::logic_error("RadialFunction: interpolant not built");
  const size_t n = s_.size();
  const double sc = std::min(std::max(s, s_[0]), s_[n - 1]);
  if (log_interp)
    return std::exp(clenshaw(cheb_[0], 2.0 * sc / s_[n - 1] - 1.0));
  if (s <= s_[0]) return values[0];
  if (s >= s_[n - 1]) return values[n - 1];  // clamp beyond r_max
  const size_t k = std::min(kInterpPoints, n);
  const size_t w = window(s);
  const cplx* c = &coef_[w * k];
  cplx v = c[k - 1];
  for (size_t i = k - 1; i-- > 0;) v = v * (s - s_[w + i]) + c[i];
  return v;
}

void RadialFunction::eval_jet(double s, cplx* jet) const {
  if (s_.empty())
    throw std::logic_error("RadialFunction: interpolant not built");
  const size_t n = s_.size();
  double sc = std::min(std::max(s, s_[0]), s_[n - 1]);  // clamp to range
  if (log_interp) {
    const double x = 2.0 * sc / s_[n - 1] - 1.0;
    const cplx l0 = clenshaw(cheb_[0], x);
    const cplx l1 = clenshaw(cheb_[1], x);
    const cplx l2 = clenshaw(cheb_[2], x);
    const cplx g = std::exp(l0);
    jet[0] = g;
    jet[1] = l1 * g;
    jet[2] = (l2 + l1 * l1) * g;
    return;
  }
  const size_t k = std::min(kInterpPoints, n);
  const size_t w = window(sc);
  const cplx* c = &coef_[w * k];
  cplx v = c[k - 1], d1 = 0.0, d2 = 0.0;
  for (size_t i = k - 1; i-- > 0;) {
    const double t = sc - s_[w + i];
    d2 = d2 * t + 2.0 * d1;
    d1 = d1 * t + v;
    v = v * t + c[i];
  }
  jet[0] = v;
  jet[1] = d1;
  jet[2] = d2;
}

// ---------------------------------------------------------------------------
// Radial grid
// ---------------------------------------------------------------------------
std::vector<double> make_radial_grid(double abs_lambda, const FlowConfig& cfg) {
  const double scale =
      abs_lambda > 0.0 ? std::pow(abs_lambda, -0.25) : 1.0;
  const double r1 = cfg.r1_factor * scale;
  const double rmax = cfg.r_max_factor * scale;
  const int n = cfg.n_radii;
  if (n < 8) throw std::invalid_argument("make_radial_grid: n_radii < 8");
  const double rho = std::pow(rmax / r1, 1.0 / (n - 2));
  std::vector<double> grid(n);
  grid[0] = 0.0;
  for (int i = 1; i < n; ++i) grid[i] = r1 * std::pow(rho, i - 1);
  grid[n - 1] = rmax;  // exact endpoint
  // Merge in Chebyshev-Lobatto nodes in s = r^2.  The geometric set is dense
  // near the origin but leaves only a handful of nodes in the outer half of
  // [0, s_max]; a global polynomial fit of the stored radial function is then
  // unconstrained between those nodes and can oscillate by many orders of
  // magnitude.  Lobatto spacing in s places samples exactly where polynomial
  // approximation needs them, at both ends and across the middle.
  const double s_max = rmax * rmax;
  const int n_cheb = 48;
  for (int k = 1; k < n_cheb; ++k) {
    const double s = s_max * 0.5 * (1.0 - std::cos(M_PI * k / n_cheb));
    grid.push_back(std::sqrt(s));
  }
  std::sort(grid.begin(), grid.end());
  std::vector<double> out;
  out.reserve(grid.size());
  for (double r : grid)
    if (out.empty() || r - out.back() > 1e-6 * rmax) out.push_back(r);
  return out;
}

EffectivePotential initial_potential(cplx lambda, cplx mu,
                                     const FlowConfig& cfg) {
  EffectivePotential U;
  U.coupling = CouplingState{0, lambda, mu, cfg.c0};
  const auto grid = make_radial_grid(std::abs(lambda), cfg);
  for (int n = 0; n < 3; ++n) {
    U.R[n].grid = grid;
    U.R[n].values.assign(grid.size(), n == 0 ? cplx(1.0) : cplx(0.0));
    U.R[n].log_interp = (n == 0);
    U.R[n].build_spline();
    U.R[n].taylor = {n == 0 ? cplx(1.0) : cplx(0.0), 0.0, 0.0, 0.0};
  }
  return U;
}

// ---------------------------------------------------------------------------
// The 15-dimensional commutative ring C[p,q] / (total degree >= 5)
// ---------------------------------------------------------------------------
namespace {

struct Poly15 {
  // c[a*5+b] is the coefficient of p^a q^b; only a+b <= 4 is used.
  std::array<cplx, 25> c{};
};

Poly15 mul15(const Poly15& x, const Poly15& y) {
  Poly15 r;
  for (int a = 0; a <= 4; ++a)
    for (int b = 0; a + b <= 4; ++b) {
      const cplx xv = x.c[a * 5 + b];
      if (xv == cplx(0.0)) continue;
      for (int a2 = 0; a + a2 <= 4; ++a2)
        for (int b2 = 0; a + b + a2 + b2 <= 4; ++b2)
          r.c[(a + a2) * 5 + (b + b2)] += xv * y.c[a2 * 5 + b2];
    }
  return r;
}

Poly15 pow15(Poly15 base, long e) {
  Poly15 r;
  r.c[0] = 1.0;
  while (e > 0) {
    if (e & 1) r = mul15(r, base);
    e >>= 1;
    if (e) base = mul15(base, base);
  }
  return r;
}

int idx15(int a, int b) { return a * 5 + b; }

}  // namespace

// ---------------------------------------------------------------------------
// NodeEvaluator
// ---------------------------------------------------------------------------
NodeEvaluator::NodeEvaluator(const CouplingState& st,
                             const std::array<RadialFunction, 3>& R, int L)
    : lambda_(st.lambda), mu_(st.mu), L_(L), R_(&R) {
  if (L < 2 || L % 2 != 0)
    throw std::invalid_argument("NodeEvaluator: L must be even >= 2");
  half_power_ = L * L * L / 2;
  const double al = std::abs(lambda_);
  decay_scale_ =
      al > 0.0 ? std::pow(40.0 / (al * L * L * L), 0.25) : 1.0;
  set_radius(0.0);
}

void NodeEvaluator::set_radius(double r_phi) {
  r_phi_ = r_phi;
  // Monomials P_+^a P_-^b in the full algebra, Berezin-integrated, multiplied
  // by the nilpotent prefactor strip, reduced to (psi.psi)^n coefficients.
  const double invL = 1.0 / L_;
  GrassmannPoly y = psi_dot_psi();
  GrassmannPoly m = psi_dot_zeta();
  GrassmannPoly z = zeta_dot_zeta();
  GrassmannPoly Pp = GrassmannPoly::zero(), Pm = GrassmannPoly::zero();
  {
    GrassmannPoly t = y;
    t *= cplx(invL * invL);
    Pp += t;
    Pm += t;
    t = m;
    t *= cplx(2.0 * invL);
    Pp += t;
    t *= cplx(-1.0);
    Pm += t;
    Pp += z;
    Pm += z;
  }
  // Strip of the nilpotent part of the scale-(h+1) exponential prefactor:
  //   exp(+ (lambda/L) (2 r_phi^2 y + y^2) + i mu L y).
  GrassmannPoly strip_arg = y;
  strip_arg *= (lambda_ / cplx(static_cast<double>(L_))) *
                   cplx(2.0 * r_phi * r_phi) +
               cplx(0.0, 1.0) * mu_ * cplx(static_cast<double>(L_));
  {
    GrassmannPoly y2 = mul(y, y);
    y2 *= lambda_ / cplx(static_cast<double>(L_));
    strip_arg += y2;
  }
  const GrassmannPoly strip = exp_even(strip_arg);

  const GrassmannPoly one = GrassmannPoly::scalar(1.0);
  GrassmannPoly half_z = zeta_dot_zeta();
  half_z *= cplx(0.5);
  for (int a = 0; a <= 4; ++a) {
    GrassmannPoly pa = a == 0 ? one : power(Pp, a);
    for (int b = 0; a + b <= 4; ++b) {
      GrassmannPoly mono = mul(pa, b == 0 ? one : power(Pm, b));
      {
        GrassmannPoly integrated = berezin_fluct_integral(mono);
        GrassmannPoly stripped = mul(integrated, strip);
        const PsiPsiCoeffs pc = psi_psi_coefficients(stripped);
        extract_[idx15(a, b)] = {pc.c0, pc.c1, pc.c2};
      }
      {
        GrassmannPoly integrated = berezin_fluct_integral(mul(mono, half_z));
        GrassmannPoly stripped = mul(integrated, strip);
        const PsiPsiCoeffs pc = psi_psi_coefficients(stripped);
        extract_fins_[idx15(a, b)] = {pc.c0, pc.c1, pc.c2};
      }
    }
  }
}

cplx NodeEvaluator::vb_tilde(double r_zeta, double u) const {
  const double rp2 = r_phi_ * r_phi_, rz2 = r_zeta * r_zeta;
  const double L3 = static_cast<double>(L_) * L_ * L_;
  return lambda_ * cplx(4.0 * L_ * u * u * rp2 * rz2) +
         lambda_ * cplx(2.0 * L_ * rp2 * rz2) +
         lambda_ * cplx(L3 * rz2 * rz2) +
         cplx(0.0, 1.0) * mu_ * cplx(L3 * rz2);
}

void NodeEvaluator::eval(double r_zeta, double u, cplx* out) const {
  eval_core(r_zeta, u, out, nullptr, false);
}

void NodeEvaluator::eval_fermion_insertion(double r_zeta, double u,
                                           cplx* out) const {
  eval_core(r_zeta, u, out, nullptr, true);
}

void NodeEvaluator::eval_insertion_step(const std::array<RadialFunction, 3>& G,
                                        double r_zeta, double u,
                                        cplx* out) const {
  eval_core(r_zeta, u, out, &G, false);
}

void NodeEvaluator::eval_core(double r_zeta, double u, cplx* out,
                              const std::array<RadialFunction, 3>* G_step,
                              bool fermion_insertion) const {
  const double invL = 1.0 / L_;
  const double cross = 2.0 * u * r_phi_ * r_zeta * invL;
  const double base = r_phi_ * r_phi_ * invL * invL + r_zeta * r_zeta;
  const double sp = std::max(0.0, base + cross);
  const double sm = std::max(0.0, base - cross);
  const double p = static_cast<double>(half_power_);

  // exp( p*(a_+ + a_-) ) where a_pm = -(2 lambda s_pm + i mu) P_pm
  //                                   - lambda P_pm^2.
  const cplx a1 = p * (-2.0 * lambda_ * sp - cplx(0.0, 1.0) * mu_);
  const cplx a2 = p * (-2.0 * lambda_ * sm - cplx(0.0, 1.0) * mu_);
  const cplx a3 = p * (-lambda_);
  auto hermite = [](cplx t, cplx s) {  // sum_{i+2k=a} t^i s^k / (i! k!)
    std::array<cplx, 5> A;
    A[0] = 1.0;
    A[1] = t;
    A[2] = t * t / 2.0 + s;
    A[3] = t * t * t / 6.0 + t * s;
    A[4] = t * t * t * t / 24.0 + t * t * s / 2.0 + s * s / 2.0;
    return A;
  };
  const auto A = hermite(a1, a3);
  const auto B = hermite(a2, a3);

  Poly15 expw;
  for (int a = 0; a <= 4; ++a)
    for (int b = 0; a + b <= 4; ++b) expw.c[idx15(a, b)] = A[a] * B[b];

  // (F_+ F_-)^{L^3/2} with F_pm = G(s_pm) + G'(s_pm) P_pm + G''(s_pm)/2 P_pm^2
  // where G is the single radial superfunction R_0: a potential of this shape
  // is supersymmetric exactly when R_1 = R_0' and R_2 = R_0''/2, so both are
  // taken as exact derivatives of the stored interpolant rather than as
  // independently interpolated tables (independent tables reintroduce a
  // symmetry-breaking noise floor that the iterated map amplifies).
  Poly15 G;
  std::array<cplx, 3> rho, sig;
  (*R_)[0].eval_jet(sp, rho.data());
  (*R_)[0].eval_jet(sm, sig.data());
  rho[2] *= 0.5;
  sig[2] *= 0.5;
  if (rho[0] == cplx(0.0) || sig[0] == cplx(0.0)) {
    out[0] = out[1] = out[2] = 0.0;
    return;
  }
  // Factor the scalar magnitude out of the power: G = rho0 sig0 * Ghat with
  // Ghat's scalar part 1, and fold rho0^p sig0^p into the exponential weight.
  // The remainder can reach e^{+O(10^2)} at the grid edge, so the naive p-th
  // power overflows doubles even though the weighted integrand is tame; with
  // integer p, exp(p log z) = z^p exactly for any log branch, so this
  // factorization is lossless.
  const cplx inv_r0 = 1.0 / rho[0], inv_s0 = 1.0 / sig[0];
  const std::array<cplx, 3> rh{1.0, rho[1] * inv_r0, rho[2] * inv_r0};
  const std::array<cplx, 3> sh{1.0, sig[1] * inv_s0, sig[2] * inv_s0};
  Poly15 W;
  cplx weight;
  if (G_step == nullptr) {
    for (int a = 0; a <= 2; ++a)
      for (int b = 0; b <= 2; ++b) G.c[idx15(a, b)] = rh[a] * sh[b];
    W = mul15(expw, pow15(G, half_power_));
    weight = std::exp(p * (std::log(rho[0]) + std::log(sig[0])) -
                      vb_tilde(r_zeta, u));
  } else {
    // Insertion step: one "+" factor is replaced by the inserted radial
    // triple, so the "+" branch enters with power p-1 and the insertion is
    // G_0(s_+) + G_1(s_+) P_+ + G_2(s_+) P_+^2.  The exponential prefactors
    // are unchanged (the inserted factor carries its own), so expw and the
    // bosonic weight keep their multiplicities at p.
    Poly15 Pp, Qq, Gf;
    for (int a = 0; a <= 2; ++a) Pp.c[idx15(a, 0)] = rh[a];
    for (int b = 0; b <= 2; ++b) Qq.c[idx15(0, b)] = sh[b];
    for (int a = 0; a <= 2; ++a)
      Gf.c[idx15(a, 0)] = (*G_step)[a].eval_s(sp);
    W = mul15(expw,
              mul15(pow15(Pp, half_power_ - 1), mul15(pow15(Qq, half_power_), Gf)));
    weight = std::exp((p - 1.0) * std::log(rho[0]) + p * std::log(sig[0]) -
                      vb_tilde(r_zeta, u));
  }
  const auto& table = fermion_insertion ? extract_fins_ : extract_;
  out[0] = out[1] = out[2] = 0.0;
  for (int a = 0; a <= 4; ++a)
    for (int b = 0; a + b <= 4; ++b) {
      const cplx w = W.c[idx15(a, b)];
      if (w == cplx(0.0)) continue;
      const auto& e = table[idx15(a, b)];
      out[0] += w * e[0];
      out[1] += w * e[1];
      out[2] += w * e[2];
    }
  out[0] *= weight;
  out[1] *= weight;
  out[2] *= weight;
}

// ---------------------------------------------------------------------------
// compute_En
// ---------------------------------------------------------------------------
std::array<RadialFunction, 3> compute_En(const EffectivePotential& U,
                                         const FlowConfig& cfg,
                                         const std::vector<double>& phi_grid,
                                         double* err_out) {
  const size_t n_r = phi_grid.size();
  std::array<RadialFunction, 3> E;
  for (int n = 0; n < 3; ++n) {
    E[n].grid = phi_grid;
    E[n].values.assign(n_r, 0.0);
  }
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
      f.eval = [&ev](double r, double u, cplx* out) { ev.eval(r, u, out); };
      if (cfg.mode == EnMode::kStationaryPhase) {
        const SpeResult res = stationary_phase_value(f, cfg.spe_order, opts);
        for (int n = 0; n < 3; ++n) E[n].values[i] = res.value[n];
        errs[i] = *std::max_element(res.remainder_estimate.begin(),
                                    res.remainder_estimate.end());
      } else {
        const OracleResult res = regulated_value(f, default_epsilon_schedule(),
                                                 opts);
        for (int n = 0; n < 3; ++n) E[n].values[i] = res.value[n];
        errs[i] = res.extrapolation_error;
      }
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

  for (int n = 0; n < 3; ++n) E[n].build_spline();
  if (err_out) *err_out = *std::max_element(errs.begin(), errs.end());
  return E;
}

// ---------------------------------------------------------------------------
// localize
// ---------------------------------------------------------------------------
namespace {
struct TaylorFit {
  std::array<std::array<cplx, 4>, 3> taylor{};
  double cond = 0.0;
};

// Fit E_n(s) - E_n(0) = sum_{k=1..deg} c_k s^k on the innermost n_pts grid
// points; the constant term is taken exactly from the r = 0 grid value.
TaylorFit fit_taylor(const std::array<RadialFunction, 3>& E, int n_pts,
                     int deg) {
  const double s_max = E[0].grid[n_pts - 1] * E[0].grid[n_pts - 1];
  Eigen::MatrixXd V(n_pts - 1, deg);
  for (int i = 1; i < n_pts; ++i) {
    const double t = E[0].grid[i] * E[0].grid[i] / s_max;
    double tk = t;
    for (int k = 0; k < deg; ++k) {
      V(i - 1, k) = tk;
      tk *= t;
    }
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      V, Eigen::ComputeThinU | Eigen::ComputeThinV);
  TaylorFit out;
  out.cond = svd.singularValues()(0) /
             svd.singularValues()(svd.singularValues().size() - 1);
  for (int n = 0; n < 3; ++n) {
    Eigen::VectorXd br(n_pts - 1), bi(n_pts - 1);
    const cplx v0 = E[n].values[0];
    for (int i = 1; i < n_pts; ++i) {
      const cplx d = E[n].values[i] - v0;
      br(i - 1) = d.real();
      bi(i - 1) = d.imag();
    }
    const Eigen::VectorXd cr = svd.solve(br), ci = svd.solve(bi);
    out.taylor[n][0] = v0;
    double sk = s_max;
    for (int k = 1; k <= 3 && k <= deg; ++k) {
      out.taylor[n][k] = cplx(cr(k - 1), ci(k - 1)) / sk;
      sk *= s_max;
    }
  }
  return out;
}
}  // namespace

LocalizeResult localize(const std::array<RadialFunction, 3>& E,
                        double abs_lambda, const FlowConfig& cfg) {
  const auto& grid = E[0].grid;
  const int n_grid = static_cast<int>(grid.size());
  const int deg = cfg.fit_degree;

  // The optimal window trades truncation (dominant when the potential still
  // varies over s ~ |lambda|^{-1/2}) against value noise amplified by 1/s^2
  // in the quadratic coefficient (dominant late in a tuned flow, where the
  // quartic coefficients decay to the table noise floor).  Fit each candidate
  // window at degrees deg and deg+1: the coefficient change under the degree
  // bump estimates the total error, and the window minimizing it (summed over
  // the coefficients actually used, relative to their size) wins.
  const double windows[] = {0.1, 0.2, 0.5, 1.0, 2.0};
  const double s_full = grid[n_grid - 1] * grid[n_grid - 1];
  double best_score = std::numeric_limits<double>::infinity();
  TaylorFit best{};
  std::array<double, 3> best_est{};
  int last_n = -1;
  for (const double w : windows) {
    const double s_cut =
        abs_lambda > 0.0 ? std::min(w / std::sqrt(abs_lambda), s_full) : s_full;
    int n_pts = 1;
    while (n_pts < n_grid && grid[n_pts] * grid[n_pts] <= s_cut) ++n_pts;
    if (n_pts < deg + 3 || n_pts == last_n) continue;
    last_n = n_pts;
    const TaylorFit f1 = fit_taylor(E, n_pts, deg);
    const TaylorFit f2 = fit_taylor(E, n_pts, deg + 1);
    const double e01 = std::abs(f1.taylor[0][1] - f2.taylor[0][1]);
    const double e02 = std::abs(f1.taylor[0][2] - f2.taylor[0][2]);
    const double e11 = std::abs(f1.taylor[1][1] - f2.taylor[1][1]);
    const double tiny = std::numeric_limits<double>::min();
    const double score =
        e01 / std::max(std::abs(f1.taylor[0][1]), tiny) +
        e02 / std::max(std::abs(f1.taylor[0][2]), tiny) +
        e11 / std::max(std::abs(f1.taylor[1][1]), tiny);
    if (score < best_score) {
      best_score = score;
      best = f1;
      best_est = {e01, e11 / 2.0, e11 / 2.0 + e02};
    }
  }
  if (!std::isfinite(best_score)) {
    // Fallback for grids too small for any candidate window.
    const int n_pts = std::min(cfg.fit_points, n_grid);
    if (n_pts < deg + 2)
      throw std::invalid_argument("localize: too few points for fit degree");
    best = fit_taylor(E, n_pts, deg);
  }

  LocalizeResult res;
  res.taylor = best.taylor;
  res.fit_condition = best.cond;
  res.error_estimates = best_est;
  res.gamma_psi2 = res.taylor[1][0];
  res.gamma_phi2 = res.taylor[0][1];
  res.gamma_psipsi4 = res.taylor[2][0];
  res.gamma_phipsi4 = res.taylor[1][1];
  res.gamma_phiphi4 = res.taylor[0][2];
  return res;
}

// ---------------------------------------------------------------------------
// update_couplings / rg_step
// ---------------------------------------------------------------------------
CouplingState update_couplings(const CouplingState& st, cplx gamma2,
                               cplx gamma4, const FlowConfig& cfg) {
  CouplingState out;
  out.h = st.h + 1;
  out.lambda = st.lambda / cplx(static_cast<double>(cfg.L)) - gamma4 -
               gamma2 * gamma2 / 2.0;
  out.mu = cplx(static_cast<double>(cfg.L)) * st.mu +
           cplx(0.0, 1.0) * gamma2;
  out.c = st.c + cfg.c_growth * std::pow(std::abs(st.lambda),
                                         cfg.eps_exponent);
  return out;
}

std::pair<EffectivePotential, FlowDiagnostics> rg_step(
    const EffectivePotential& U, const FlowConfig& cfg) {
  const double abs_lp =
      std::abs(U.coupling.lambda) / static_cast<double>(cfg.L);
  // The low-order expansion is only uniformly accurate on the small-field
  // window r <= |lambda'|^{-1/4}; restrict the grid there in that mode so the
  // reweighting exponent beta4 * s^2 stays within the method's error budget.
  FlowConfig grid_cfg = cfg;
  if (cfg.mode == EnMode::kStationaryPhase)
    grid_cfg.r_max_factor = std::min(cfg.r_max_factor, 1.0);
  const auto grid = make_radial_grid(abs_lp, grid_cfg);

  double integ_err = 0.0;
  auto E = compute_En(U, cfg, grid, &integ_err);

  // The exact map preserves the zero-field normalization E_0(0) = 1; the
  // computed value drifts by the integration error (oracle mode) or by the
  // truncation error of the low-order expansion (O(|lambda| L^3) at order 2).
  // Enforce the identity by dividing out the computed normalization, and treat
  // drift beyond the mode's accuracy class as a hard failure.
  const cplx norm = E[0].values[0];
  const double drift = std::abs(norm - cplx(1.0));
  const double drift_tol =
      cfg.mode == EnMode::kOracle ? cfg.r0_drift_tol : 0.2;
  if (drift > drift_tol) {
    std::ostringstream os;
    os << "rg_step: E_0(0) drift " << drift << " exceeds " << drift_tol
       << " at scale " << U.coupling.h;
    throw std::runtime_error(os.str());
  }
  for (int n = 0; n < 3; ++n)
    for (auto& v : E[n].values) v /= norm;
  for (int n = 0; n < 3; ++n) E[n].build_spline();

  const auto loc = localize(E, abs_lp, cfg);

  const cplx g2 = loc.gamma_psi2, g4 = loc.gamma_psipsi4;
  const CouplingState next = update_couplings(U.coupling, g2, g4, cfg);
  const cplx beta2 = cplx(0.0, 1.0) * g2;
  const cplx beta4 = -g4 - g2 * g2 / 2.0;

  EffectivePotential V;
  V.coupling = next;
  for (int n = 0; n < 3; ++n) {
    V.R[n].grid = grid;
    V.R[n].values.resize(grid.size());
  }
  for (size_t i = 0; i < grid.size(); ++i) {
    const double s = grid[i] * grid[i];
    const cplx A = std::exp(beta4 * s * s + cplx(0.0, 1.0) * beta2 * s);
    const cplx B = 2.0 * beta4 * s + cplx(0.0, 1.0) * beta2;
    const cplx e0 = E[0].values[i], e1 = E[1].values[i], e2 = E[2].values[i];
    V.R[0].values[i] = A * e0;
    V.R[1].values[i] = A * (e1 + B * e0);
    V.R[2].values[i] = A * (e2 + B * e1 + (beta4 + B * B / 2.0) * e0);
  }
  V.R[0].log_interp = true;
  for (int n = 0; n < 3; ++n) {
    V.R[n].build_spline();
    V.R[n].taylor[0] = V.R[n].values[0];
  }

  FlowDiagnostics diag;
  diag.gamma_psi2 = loc.gamma_psi2;
  diag.gamma_phi2 = loc.gamma_phi2;
  diag.gamma_psipsi4 = loc.gamma_psipsi4;
  diag.gamma_phipsi4 = loc.gamma_phipsi4;
  diag.gamma_phiphi4 = loc.gamma_phiphi4;
  diag.beta2 = beta2;
  diag.beta4 = beta4;
  diag.susy_residuals = {
      std::abs(loc.gamma_psi2 - loc.gamma_phi2),
      std::abs(loc.gamma_psipsi4 - loc.gamma_phipsi4 / 2.0),
      std::abs(loc.gamma_phipsi4 / 2.0 - loc.gamma_phiphi4)};
  diag.susy_error_estimates = loc.error_estimates;
  diag.e0_at_zero = norm;
  diag.integration_error = integ_err;
  diag.fit_condition = loc.fit_condition;
  // Sampled small-field envelope margins on r <= |lambda'|^{-1/4}.
  const double r_small = abs_lp > 0.0 ? std::pow(abs_lp, -0.25) : grid.back();
  const double l2 = abs_lp * abs_lp;
  std::array<double, 3> margins{0.0, 0.0, 0.0};
  for (size_t i = 1; i < grid.size() && grid[i] <= r_small; ++i) {
    const double s = grid[i] * grid[i];
    if (l2 > 0.0) {
      margins[2] = std::max(margins[2],
                            std::abs(V.R[2].values[i]) / (l2 * s));
      margins[1] = std::max(margins[1],
                            std::abs(V.R[1].values[i]) / (l2 * s * s));
      margins[0] = std::max(
          margins[0], std::abs(V.R[0].values[i] - cplx(1.0)) / (l2 * s * s * s));
    }
  }
  diag.small_field_margins = margins;
  return {std::move(V), diag};
}

// ---------------------------------------------------------------------------
// run_flow / tune_mu
// ---------------------------------------------------------------------------
FlowTrace run_flow(cplx lambda, cplx mu, const FlowConfig& cfg,
                   std::vector<EffectivePotential>* potentials) {
  FlowTrace trace;
  EffectivePotential U = initial_potential(lambda, mu, cfg);
  if (potentials != nullptr) {
    potentials->clear();
    potentials->push_back(U);
  }
  for (int h = 0; h < cfg.N; ++h) {
    const CouplingState st = U.coupling;
    if (trace.first_disk_exit < 0 &&
        std::abs(st.mu) > 2.0 * cfg.cbar * std::abs(st.lambda)) {
      trace.first_disk_exit = h;
      trace.status = "exited_disk";
    }
    try {
      auto [V, diag] = rg_step(U, cfg);
      trace.scales.push_back({st, diag});
      U = std::move(V);
      if (potentials != nullptr) potentials->push_back(U);
    } catch (const std::exception& e) {
      trace.scales.push_back({st, FlowDiagnostics{}});
      trace.status = std::string("hard_failure: ") + e.what();
      return trace;
    }
  }
  if (trace.first_disk_exit < 0 &&
      std::abs(U.coupling.mu) > 2.0 * cfg.cbar * std::abs(U.coupling.lambda)) {
    trace.first_disk_exit = cfg.N;
    trace.status = "exited_disk";
  }
  trace.scales.push_back({U.coupling, FlowDiagnostics{}});
  return trace;
}

namespace {
// Survival depth: first scale violating the disk; N+1 if none.
int survival_depth(const FlowTrace& t, const FlowConfig& cfg) {
  if (t.status.rfind("hard_failure", 0) == 0)
    return static_cast<int>(t.scales.size()) - 1;
  return t.first_disk_exit < 0 ? cfg.N + 1 : t.first_disk_exit;
}

cplx final_mu(const FlowTrace& t) { return t.scales.back().state.mu; }
}  // namespace

TuneResult tune_mu(double lambda, const FlowConfig& cfg,
                   const std::vector<cplx>& seeds) {
  if (!(lambda > 0.0))
    throw std::invalid_argument("tune_mu: lambda must be > 0");
  TuneResult result;

  struct Cand {
    cplx mu;
    int depth;
    double final_abs;
    FlowTrace trace;
  };
  auto eval = [&](cplx mu) {
    FlowTrace t = run_flow(lambda, mu, cfg);
    ++result.flow_evaluations;
    return Cand{mu, survival_depth(t, cfg), std::abs(final_mu(t)),
                std::move(t)};
  };
  auto better = [](const Cand& a, const Cand& b) {
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.final_abs < b.final_abs;
  };

  // Coarse grid on the disk |mu| <= 2*cbar*lambda, biased toward the real
  // axis where the counterterm is expected.
  std::vector<Cand> cands;
  const double rmax = 2.0 * cfg.cbar;
  if (seeds.empty()) {
    for (double x : {0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 6.0, 8.0,
                     12.0, rmax})
      for (double y : {0.0, 0.5, -0.5}) {
        if (std::hypot(x, y) > rmax + 1e-12) continue;
        cands.push_back(eval(lambda * cplx(x, y)));
      }
  } else {
    for (const cplx& mu : seeds) cands.push_back(eval(mu));
    if (cands.size() == 1)
      cands.push_back(eval(seeds[0] + lambda * 0.02));
  }
  std::sort(cands.begin(), cands.end(), better);

  Cand best = cands[0], second = cands[1];
  if (best.depth <= 1) {  // nothing survives even one scale
    result.mu_star = best.mu;
    result.trace = std::move(best.trace);
    result.converged = false;
    return result;
  }

  // Complex secant iteration on mu -> mu_N.
  Cand a = second, b = best;
  for (int it = 0; it < cfg.tune_max_secant; ++it) {
    const cplx fa = final_mu(a.trace), fb = final_mu(b.trace);
    if (fb == fa) break;
    const cplx mu_next = b.mu - fb * (b.mu - a.mu) / (fb - fa);
    if (!(std::abs(mu_next) <= rmax * lambda * 2.0)) break;  // diverged
    Cand c = eval(mu_next);
    a = std::move(b);
    b = std::move(c);
    if (better(b, best)) best = b;
    const double step = std::abs(b.mu - a.mu);
    // Stop only once the whole trajectory survives inside the disk (the
    // terminal scales need |mu| resolved to ~ lambda * L^{-2N}) or the
    // iteration has hit the floor of what it can resolve.
    if ((best.depth == cfg.N + 1 && step <= cfg.tune_secant_tol * lambda) ||
        step <= 1e-14 * lambda)
      break;
  }

  result.mu_star = best.mu;
  result.converged = best.depth == cfg.N + 1;
  result.trace = std::move(best.trace);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------
std::string flow_trace_to_json(const FlowTrace& trace,
                               const std::string& config_snapshot) {
  nlohmann::json j;
  j["status"] = trace.status;
  j["first_disk_exit"] = trace.first_disk_exit;
  j["config"] = config_snapshot;
  j["scales"] = nlohmann::json::array();
  for (const auto& rec : trace.scales) {
    nlohmann::json s;
    s["h"] = rec.state.h;
    s["lambda"] = {rec.state.lambda.real(), rec.state.lambda.imag()};
    s["mu"] = {rec.state.mu.real(), rec.state.mu.imag()};
    s["gamma2"] = {rec.diag.gamma_psi2.real(), rec.diag.gamma_psi2.imag()};
    s["gamma4"] = {rec.diag.gamma_psipsi4.real(),
                   rec.diag.gamma_psipsi4.imag()};
    s["beta2"] = {rec.diag.beta2.real(), rec.diag.beta2.imag()};
    s["beta4"] = {rec.diag.beta4.real(), rec.diag.beta4.imag()};
    s["susy_residuals"] = rec.diag.susy_residuals;
    s["susy_error_estimates"] = rec.diag.susy_error_estimates;
    s["e0_at_zero"] = {rec.diag.e0_at_zero.real(),
                       rec.diag.e0_at_zero.imag()};
    j["scales"].push_back(std::move(s));
  }
  return j.dump(2);
}

std::string flow_trace_to_csv(const FlowTrace& trace) {
  std::ostringstream os;
  os.precision(17);
  os << "h,lambda_re,lambda_im,mu_re,mu_im,gamma2_re,gamma2_im,"
        "gamma4_re,gamma4_im,beta2_re,beta2_im,beta4_re,beta4_im,"
        "susy_res_2,susy_res_4a,susy_res_4b,e0_at_zero_re,e0_at_zero_im\n";
  for (const auto& rec : trace.scales) {
    os << rec.state.h << ',' << rec.state.lambda.real() << ','
       << rec.state.lambda.imag() << ',' << rec.state.mu.real() << ','
       << rec.state.mu.imag() << ',' << rec.diag.gamma_psi2.real() << ','
       << rec.diag.gamma_psi2.imag() << ',' << rec.diag.gamma_psipsi4.real()
       << ',' << rec.diag.gamma_psipsi4.imag() << ','
       << rec.diag.beta2.real() << ',' << rec.diag.beta2.imag() << ','
       << rec.diag.beta4.real() << ',' << rec.diag.beta4.imag() << ','
       << rec.diag.susy_residuals[0] << ',' << rec.diag.susy_residuals[1]
       << ',' << rec.diag.susy_residuals[2] << ','
       << rec.diag.e0_at_zero.real() << ',' << rec.diag.e0_at_zero.imag()
       << '\n';
  }
  return os.str();
}

}  // namespace hsrg
