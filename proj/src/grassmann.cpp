#include "grassmann.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace hsrg {

// ---- sign table -------------------------------------------------------------
// sign(a,b) = (-1)^{#{(i,j) : i in a, j in b, i > j}}: the parity of moving
// every generator of b left through the generators of a that exceed it.
namespace {

struct SignTable {
  std::array<std::int8_t, 256 * 256> s;
  SignTable() {
    for (int a = 0; a < 256; ++a) {
      for (int b = 0; b < 256; ++b) {
        int inversions = 0;
        for (int j = 0; j < 8; ++j) {
          if (!(b & (1 << j))) continue;
          // generators of a strictly above position j
          inversions += std::popcount(static_cast<unsigned>(a) >> (j + 1));
        }
        s[a * 256 + b] = (inversions & 1) ? -1 : 1;
      }
    }
  }
};

const SignTable& sign_table() {
  static const SignTable t;
  return t;
}

}  // namespace

int reorder_sign(std::uint8_t a, std::uint8_t b) {
  return sign_table().s[a * 256 + b];
}

// ---- element basics ---------------------------------------------------------
GrassmannPoly GrassmannPoly::generator(int i) {
  GrassmannPoly p;
  p.c[1 << i] = 1.0;
  return p;
}

GrassmannPoly& GrassmannPoly::operator+=(const GrassmannPoly& o) {
  for (int m = 0; m < 256; ++m) c[m] += o.c[m];
  return *this;
}

GrassmannPoly& GrassmannPoly::operator-=(const GrassmannPoly& o) {
  for (int m = 0; m < 256; ++m) c[m] -= o.c[m];
  return *this;
}

GrassmannPoly& GrassmannPoly::operator*=(cplx v) {
  for (int m = 0; m < 256; ++m) c[m] *= v;
  return *this;
}

double GrassmannPoly::max_abs() const {
  double mx = 0.0;
  for (int m = 0; m < 256; ++m) mx = std::max(mx, std::abs(c[m]));
  return mx;
}

bool GrassmannPoly::is_even() const {
  for (int m = 0; m < 256; ++m) {
    if ((std::popcount(static_cast<unsigned>(m)) & 1) && c[m] != cplx(0.0, 0.0))
      return false;
  }
  return true;
}

// ---- product ----------------------------------------------------------------
GrassmannPoly mul(const GrassmannPoly& p, const GrassmannPoly& q) {
  // Collect nonzero masks first; typical flow elements populate well under
  // half of the 256 slots, so the sparse double loop pays off.
  static thread_local std::vector<int> pa, qa;
  pa.clear();
  qa.clear();
  for (int m = 0; m < 256; ++m)
    if (p.c[m] != cplx(0.0, 0.0)) pa.push_back(m);
  for (int m = 0; m < 256; ++m)
    if (q.c[m] != cplx(0.0, 0.0)) qa.push_back(m);

  GrassmannPoly out;
  const std::int8_t* signs = sign_table().s.data();
  for (int a : pa) {
    const cplx va = p.c[a];
    const std::int8_t* row = signs + a * 256;
    for (int b : qa) {
      if (a & b) continue;  // repeated generator annihilates
      out.c[a | b] += static_cast<double>(row[b]) * va * q.c[b];
    }
  }
  return out;
}

// ---- exponential of a nilpotent even element --------------------------------
GrassmannPoly exp_even(const GrassmannPoly& p) {
  if (p.has_scalar())
    throw std::invalid_argument("exp_even: scalar part must be factored out");
  if (!p.is_even())
    throw std::invalid_argument("exp_even: input must be even-degree");
  // Degree >= 2 per factor and max degree 8: p^5 = 0, series stops at j = 4.
  GrassmannPoly result = GrassmannPoly::scalar(1.0);
  GrassmannPoly term = p;
  double fact = 1.0;
  for (int j = 1; j <= 4; ++j) {
    fact *= j;
    result += term * (1.0 / fact);
    if (j < 4) term = mul(term, p);
  }
  return result;
}

// ---- integer power ----------------------------------------------------------
GrassmannPoly power(const GrassmannPoly& p, long k) {
  if (k < 1) throw std::invalid_argument("power: exponent must be >= 1");
  GrassmannPoly base = p;
  GrassmannPoly result = GrassmannPoly::scalar(1.0);
  bool have = false;
  while (k > 0) {
    if (k & 1) {
      result = have ? mul(result, base) : base;
      have = true;
    }
    k >>= 1;
    if (k > 0) base = mul(base, base);
  }
  return result;
}

// ---- Berezin integration of the fluctuation block ---------------------------
GrassmannPoly berezin_fluct_integral(const GrassmannPoly& p) {
  // Multiply in the Gaussian weight exp(-i zeta.zeta) and read off the
  // coefficient of the full zeta monomial for each psi monomial.  The measure
  // normalization (the overall minus sign of the weight's top form) is fixed
  // by dividing by the top coefficient of the weight itself, so that the
  // constant 1 integrates to 1.
  static const GrassmannPoly weight = exp_even(cplx(0.0, -1.0) * zeta_dot_zeta());
  static const cplx norm = weight.c[kZetaMaskBits];  // = -1
  GrassmannPoly full = mul(p, weight);
  GrassmannPoly out;
  for (int a = 0; a < 16; ++a) out.c[a] = full.c[a | kZetaMaskBits] / norm;
  return out;
}

// ---- (psi.psi)-polynomial coefficients --------------------------------------
PsiPsiCoeffs psi_psi_coefficients(const GrassmannPoly& p, double tol) {
  constexpr int kUp = 0b0011;       // psi^+_up psi^-_up
  constexpr int kDown = 0b1100;     // psi^+_down psi^-_down
  constexpr int kTop = 0b1111;      // (psi.psi)^2 / 2
  const double scale = p.max_abs();
  const double thresh = tol * std::max(scale, 1e-300);
  for (int m = 0; m < 256; ++m) {
    if (m == 0 || m == kUp || m == kDown || m == kTop) continue;
    if (std::abs(p.c[m]) > thresh)
      throw std::runtime_error(
          "psi_psi_coefficients: symmetry violation at monomial mask " +
          std::to_string(m));
  }
  if (std::abs(p.c[kUp] - p.c[kDown]) > thresh)
    throw std::runtime_error(
        "psi_psi_coefficients: spin-channel coefficient mismatch");
  return {p.c[0], 0.5 * (p.c[kUp] + p.c[kDown]), 0.5 * p.c[kTop]};
}

// ---- coefficient envelope certificate ---------------------------------------
KnmCertificate knm_certify(const GrassmannPoly& p, double N, double M) {
  double kappa = 0.0;
  for (int m = 0; m < 256; ++m) {
    const double mag = std::abs(p.c[m]);
    if (mag == 0.0) continue;
    const int da = std::popcount(static_cast<unsigned>(m) & kPsiMaskBits);
    const int db = std::popcount(static_cast<unsigned>(m) >> 4);
    if ((N == 0.0 && da > 0) || (M == 0.0 && db > 0))
      throw std::invalid_argument(
          "knm_certify: zero weight with nonzero coefficient at that degree");
    kappa = std::max(kappa, mag / (std::pow(N, da) * std::pow(M, db)));
  }
  return {kappa, N, M};
}

// ---- fixed bilinears --------------------------------------------------------
namespace {

GrassmannPoly make_psi_dot_psi() {
  auto g = [](int i) { return GrassmannPoly::generator(i); };
  return mul(g(kPsiPlusUp), g(kPsiMinusUp)) +
         mul(g(kPsiPlusDown), g(kPsiMinusDown));
}

GrassmannPoly make_zeta_dot_zeta() {
  auto g = [](int i) { return GrassmannPoly::generator(i); };
  return mul(g(kZetaPlusUp), g(kZetaMinusUp)) +
         mul(g(kZetaPlusDown), g(kZetaMinusDown));
}

GrassmannPoly make_psi_dot_zeta() {
  auto g = [](int i) { return GrassmannPoly::generator(i); };
  GrassmannPoly s = mul(g(kPsiPlusUp), g(kZetaMinusUp)) +
                    mul(g(kZetaPlusUp), g(kPsiMinusUp)) +
                    mul(g(kPsiPlusDown), g(kZetaMinusDown)) +
                    mul(g(kZetaPlusDown), g(kPsiMinusDown));
  return s * cplx(0.5);
}

}  // namespace

const GrassmannPoly& psi_dot_psi() {
  static const GrassmannPoly p = make_psi_dot_psi();
  return p;
}

const GrassmannPoly& zeta_dot_zeta() {
  static const GrassmannPoly p = make_zeta_dot_zeta();
  return p;
}

const GrassmannPoly& psi_dot_zeta() {
  static const GrassmannPoly p = make_psi_dot_zeta();
  return p;
}

}  // namespace hsrg
