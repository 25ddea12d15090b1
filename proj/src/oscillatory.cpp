#include "oscillatory.hpp"

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>
#include <Eigen/SVD>

namespace hsrg {

namespace {
constexpr double kPi = std::numbers::pi;

// d_j = (-i)^j / (4^j j!)
cplx d_coeff(int j) {
  cplx num(1.0, 0.0);
  double den = 1.0;
  for (int k = 1; k <= j; ++k) {
    num *= cplx(0.0, -1.0);
    den *= 4.0 * k;
  }
  return num / den;
}

// (Lap^j f)(0) = a_j * 4^j j! (j+1)!  where a_j is the r^{2j} coefficient of
// the spherical mean M(r).
double moment_factor(int j) {
  double f = 1.0;
  for (int k = 1; k <= j; ++k) f *= 4.0 * k * (k + 1);
  // 4^j j! (j+1)! = prod_{k=1..j} 4 k (k+1)
  return f;
}

struct AngularRule {
  std::vector<double> u, w;  // weights include the (2/pi) normalization
};

AngularRule angular_rule(int n) {
  AngularRule rule;
  rule.u.resize(n);
  rule.w.resize(n);
  for (int i = 1; i <= n; ++i) {
    const double t = i * kPi / (n + 1);
    rule.u[i - 1] = std::cos(t);
    const double s = std::sin(t);
    rule.w[i - 1] = (2.0 / (n + 1)) * s * s;  // (2/pi) * (pi/(n+1)) sin^2
  }
  return rule;
}

// Angular average M(r) for all components.
void spherical_mean(const ReducedIntegrand& f, const AngularRule& rule,
                    double r, cplx* out) {
  const int nc = f.n_comp;
  std::vector<cplx> tmp(nc);
  std::vector<std::vector<cplx>> contrib(nc,
                                         std::vector<cplx>(rule.u.size()));
  for (size_t i = 0; i < rule.u.size(); ++i) {
    f.eval(r, rule.u[i], tmp.data());
    for (int c = 0; c < nc; ++c) contrib[c][i] = rule.w[i] * tmp[c];
  }
  for (int c = 0; c < nc; ++c) out[c] = pairwise_sum(contrib[c]);
}

}  // namespace

template <class C>
static C pairwise_sum_impl(const std::vector<C>& v) {
  if (v.empty()) return C(0);
  std::vector<C> cur = v;
  while (cur.size() > 1) {
    std::vector<C> next((cur.size() + 1) / 2);
    for (size_t i = 0; i + 1 < cur.size(); i += 2) next[i / 2] = cur[i] + cur[i + 1];
    if (cur.size() & 1) next.back() = cur.back();
    cur = std::move(next);
  }
  return cur[0];
}

cplx pairwise_sum(const std::vector<cplx>& v) { return pairwise_sum_impl(v); }

ReducedIntegrand scalar_integrand(std::function<cplx(double, double)> eval,
                                  double decay_scale) {
  ReducedIntegrand f;
  f.n_comp = 1;
  f.decay_scale = decay_scale;
  f.eval = [eval = std::move(eval)](double r, double u, cplx* out) {
    out[0] = eval(r, u);
  };
  return f;
}

// ---- stencil fit of the spherical-mean Taylor coefficients ------------------
namespace {

// Returns the r^{2j} coefficients a_j (j = 0..degree) per component.
std::vector<std::vector<cplx>> mean_taylor(const ReducedIntegrand& f,
                                           int degree,
                                           const SpeOptions& opts) {
  const int n = opts.stencil_radii;
  if (degree + 1 > n)
    throw std::runtime_error("spherical_moments: fit degree exceeds stencil");
  // The stencil must span a window on which the integrand actually varies,
  // or the higher Taylor coefficients drown in quadrature noise.
  const double r0 = opts.r0_factor * f.decay_scale;
  const AngularRule rule = angular_rule(opts.angular_order);

  std::vector<double> radii(n);
  for (int j = 0; j < n; ++j) radii[j] = r0 * std::pow(2.0, 0.5 * j);
  const double s_scale = radii.back() * radii.back();

  Eigen::MatrixXd A(n, degree + 1);
  Eigen::MatrixXcd B(n, f.n_comp);
  std::vector<cplx> mean(f.n_comp);
  for (int j = 0; j < n; ++j) {
    const double t = radii[j] * radii[j] / s_scale;
    double tk = 1.0;
    for (int k = 0; k <= degree; ++k) {
      A(j, k) = tk;
      tk *= t;
    }
    spherical_mean(f, rule, radii[j], mean.data());
    for (int c = 0; c < f.n_comp; ++c) B(j, c) = mean[c];
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double cond =
      svd.singularValues()(0) / svd.singularValues()(degree);
  if (!(cond < opts.cond_threshold))
    throw std::runtime_error("spherical_moments: stencil fit ill-conditioned");
  Eigen::MatrixXcd coef = svd.solve(B);

  std::vector<std::vector<cplx>> a(degree + 1,
                                   std::vector<cplx>(f.n_comp));
  double sk = 1.0;
  for (int k = 0; k <= degree; ++k) {
    for (int c = 0; c < f.n_comp; ++c) a[k][c] = coef(k, c) / sk;
    sk *= s_scale;
  }
  return a;
}

}  // namespace

std::vector<std::vector<cplx>> spherical_moments(const ReducedIntegrand& f,
                                                 int j_max,
                                                 const SpeOptions& opts) {
  SpeOptions o = opts;
  const int degree = (o.fit_degree >= 0) ? o.fit_degree : (j_max + 1);
  auto a = mean_taylor(f, degree, o);
  std::vector<std::vector<cplx>> lap(j_max + 1, std::vector<cplx>(f.n_comp));
  for (int j = 0; j <= j_max; ++j) {
    const double fac = moment_factor(j);
    for (int c = 0; c < f.n_comp; ++c) lap[j][c] = a[j][c] * fac;
  }
  return lap;
}

SpeResult stationary_phase_value(const ReducedIntegrand& f, int m,
                                 const SpeOptions& opts) {
  if (m < 1) throw std::invalid_argument("stationary_phase_value: m >= 1");
  SpeOptions o = opts;
  const int degree = (o.fit_degree >= 0) ? o.fit_degree : (m + 2);
  o.fit_degree = degree;
  const int j_have = std::min(degree, m + 1);
  auto lap = spherical_moments(f, j_have, o);

  SpeResult res;
  res.order = m;
  res.value.assign(f.n_comp, 0.0);
  res.remainder_estimate.assign(f.n_comp, 0.0);
  res.w_scaling_bound.assign(f.n_comp, 0.0);
  for (int j = 0; j < m; ++j) res.d_coeffs.push_back(d_coeff(j));

  for (int c = 0; c < f.n_comp; ++c) {
    std::vector<cplx> terms;
    for (int j = 0; j < m && j <= j_have; ++j)
      terms.push_back(d_coeff(j) * lap[j][c]);
    res.value[c] = pairwise_sum(terms);
    // Next-terms heuristic: magnitude of the first one or two omitted terms.
    double rem = 0.0;
    for (int j = m; j <= j_have; ++j) rem += std::abs(d_coeff(j) * lap[j][c]);
    res.remainder_estimate[c] = 2.5 * rem + 1e-15 * std::abs(res.value[c]);
  }

  // Strip-width diagnostic bound K_m W^{-4-2m} F_W.
  double W = (o.W > 0.0) ? o.W : f.decay_scale;
  double FW = o.FW;
  if (FW <= 0.0) {
    double peak = 0.0;
    std::vector<cplx> tmp(f.n_comp);
    for (int i = 0; i <= 8; ++i) {
      const double r = 0.25 * i * f.decay_scale;
      for (double u : {-0.9, 0.0, 0.9}) {
        f.eval(r, u, tmp.data());
        for (int c = 0; c < f.n_comp; ++c)
          peak = std::max(peak, std::abs(tmp[c]));
      }
    }
    FW = peak * 0.5 * kPi * kPi * std::pow(f.decay_scale, 4.0);
  }
  double Km = 1.0;
  for (int k = 1; k <= m; ++k) Km *= 4.0 * k;
  const double bound = Km * std::pow(W, -4.0 - 2.0 * m) * FW;
  for (int c = 0; c < f.n_comp; ++c) res.w_scaling_bound[c] = bound;
  return res;
}

// ---- regulated oracle -------------------------------------------------------
std::vector<double> default_epsilon_schedule() {
  std::vector<double> eps;
  for (int k = 0; k <= 10; ++k) eps.push_back(0.5 * std::pow(2.0, -k));
  return eps;
}

OracleResult regulated_value(const ReducedIntegrand& f,
                             const std::vector<double>& eps_schedule,
                             const SpeOptions& opts) {
  if (eps_schedule.size() < 2)
    throw std::invalid_argument("regulated_value: need >= 2 epsilons");

  // Panels cover one full oscillation period (width 2 pi) so that successive
  // panel values decay like e^{-eps s} instead of alternating with magnitude
  // ~ s e^{-eps s}; this keeps the summation condition number ~ 1/eps rather
  // than 1/eps^2.  A 31-point Kronrod rule is exact far beyond the ~23 local
  // wavelengths-per-degree needed on a 2 pi panel.
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  using G7 = boost::math::quadrature::gauss<double, 15>;
  // Full Kronrod rule on [-1, 1] from the positive-half tables.
  std::vector<double> xs, wk, wg;  // wg: embedded 7-point Gauss weights
  {
    const auto& ab = GK::abscissa();
    const auto& wt = GK::weights();
    const auto& gab = G7::abscissa();
    const auto& gwt = G7::weights();
    for (size_t i = 0; i < ab.size(); ++i) {
      xs.push_back(ab[i]);
      wk.push_back(wt[i]);
      double g = 0.0;
      for (size_t j = 0; j < gab.size(); ++j)
        if (std::abs(ab[i] - gab[j]) < 1e-14) g = gwt[j];
      wg.push_back(g);
      if (ab[i] != 0.0) {
        xs.push_back(-ab[i]);
        wk.push_back(wt[i]);
        wg.push_back(g);
      }
    }
  }
  const size_t n_nodes = xs.size();
  const AngularRule rule = angular_rule(opts.angular_order);
  const int nc = f.n_comp;

  const double kPanel = 2.0 * kPi;
  // Cache of spherical means at the panel nodes, shared by every epsilon.
  // panel k covers s in [k, k+1] * 2 pi.
  std::vector<std::vector<cplx>> mean_cache;  // [panel*n_nodes + node][comp]
  std::vector<double> s_cache;
  auto ensure_panel = [&](size_t k) {
    while (mean_cache.size() < (k + 1) * n_nodes) {
      const size_t kk = mean_cache.size() / n_nodes;
      const double mid = (kk + 0.5) * kPanel, half = 0.5 * kPanel;
      for (size_t i = mean_cache.size() % n_nodes; i < n_nodes; ++i) {
        const double s = mid + half * xs[i];
        std::vector<cplx> m(nc);
        spherical_mean(f, rule, std::sqrt(s), m.data());
        s_cache.push_back(s);
        mean_cache.push_back(std::move(m));
      }
    }
  };

  const size_t max_panels = 400000;
  std::vector<std::vector<cplx>> I(eps_schedule.size(),
                                   std::vector<cplx>(nc));
  double quad_err = 0.0;

  for (size_t e = 0; e < eps_schedule.size(); ++e) {
    const double eps = eps_schedule[e];
    const cplx z(eps, 1.0);  // i + eps
    using lcplx = std::complex<long double>;
    std::vector<std::vector<lcplx>> panel_sums(nc);
    double acc_mag = 0.0, panel_err = 0.0;
    int negligible_run = 0;
    for (size_t k = 0; k < max_panels; ++k) {
      ensure_panel(k);
      const double half = 0.5 * kPanel;
      // Accumulate the node sum in extended precision: individual terms grow
      // like s * |mean|, so double-precision partial sums would inject an
      // O(s * 1e-16) error per panel that integrates up to ~1/eps^2 noise in
      // I(eps).  Extended-precision phases and partial sums push that floor
      // three orders of magnitude down.
      std::vector<lcplx> contrib(nc, 0.0L), contrib_g(nc, 0.0L);
      for (size_t i = 0; i < n_nodes; ++i) {
        const long double s = s_cache[k * n_nodes + i];
        const long double damp = std::exp(-static_cast<long double>(eps) * s);
        const lcplx phase = s * damp *
                            lcplx(std::cos(s), -std::sin(s)) *
                            static_cast<long double>(half);
        const auto& m = mean_cache[k * n_nodes + i];
        for (int c = 0; c < nc; ++c) {
          const lcplx mv(m[c].real(), m[c].imag());
          contrib[c] += static_cast<long double>(wk[i]) * phase * mv;
          contrib_g[c] += static_cast<long double>(wg[i]) * phase * mv;
        }
      }
      double cmag = 0.0;
      for (int c = 0; c < nc; ++c) {
        panel_sums[c].push_back(contrib[c]);
        cmag = std::max(cmag, static_cast<double>(std::abs(contrib[c])));
        const double diff =
            static_cast<double>(std::abs(contrib[c] - contrib_g[c]));
        panel_err += std::min(diff, std::pow(200.0 * diff, 1.5));
      }
      acc_mag = std::max(acc_mag, cmag);
      if (k >= 3 && cmag <= 1e-17 * std::max(acc_mag, 1e-300)) {
        if (++negligible_run >= 3) break;
      } else {
        negligible_run = 0;
      }
    }
    for (int c = 0; c < nc; ++c) {
      const lcplx total =
          lcplx(z.real(), z.imag()) * lcplx(z.real(), z.imag()) *
          pairwise_sum_impl(panel_sums[c]);
      I[e][c] = cplx(static_cast<double>(total.real()),
                     static_cast<double>(total.imag()));
    }
    quad_err = std::max(quad_err, std::abs(z) * std::abs(z) * panel_err);
  }

  // Neville extrapolation in eps (geometric schedule, ratio 2).  The deepest
  // diagonal entries can sit below the quadrature noise floor, so instead of
  // always taking the full-depth entry we pick the diagonal position where the
  // successive corrections are smallest and report that correction as the
  // extrapolation error.
  const int n_eps = static_cast<int>(eps_schedule.size());
  OracleResult res;
  res.value.assign(nc, 0.0);
  double extrap_err = 0.0, value_scale = 0.0, best_corr_all = 0.0;
  for (int c = 0; c < nc; ++c) {
    std::vector<std::vector<cplx>> T(n_eps);
    std::vector<double> corr(n_eps, 0.0);  // |T[k][k] - T[k-1][k-1]|
    for (int k = 0; k < n_eps; ++k) {
      T[k].resize(k + 1);
      T[k][0] = I[k][c];
      for (int j = 1; j <= k; ++j)
        T[k][j] =
            T[k][j - 1] + (T[k][j - 1] - T[k - 1][j - 1]) / (std::pow(2.0, j) - 1.0);
      if (k > 0) corr[k] = std::abs(T[k][k] - T[k - 1][k - 1]);
    }
    int best = 1;
    for (int k = 2; k < n_eps; ++k) {
      const double ck = corr[k] + (k + 1 < n_eps ? corr[k + 1] : 0.0);
      const double cb = corr[best] + (best + 1 < n_eps ? corr[best + 1] : 0.0);
      if (ck < cb) best = k;
    }
    res.value[c] = T[best][best];
    value_scale = std::max(value_scale, std::abs(res.value[c]));
    const double neighbor = best + 1 < n_eps ? corr[best + 1] : corr[best];
    extrap_err = std::max(extrap_err, corr[best] + neighbor);
    best_corr_all = std::max(best_corr_all, corr[best]);
  }
  // Divergence guard: even the best diagonal correction never became small
  // relative to the value, so the eps -> 0 limit is not converging.
  if (n_eps >= 4 && best_corr_all > 1e-6 * std::max(value_scale, 1e-300))
    throw std::runtime_error(
        "regulated_value: oracle divergence (extrapolation not converging)");
  res.extrapolation_error = extrap_err + quad_err;
  return res;
}

}  // namespace hsrg
