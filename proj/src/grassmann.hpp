// Exact arithmetic in the 256-dimensional Grassmann algebra over 8
// anticommuting generators: four "external" fermion components psi^{+-}_{s}
// and four "fluctuation" components zeta^{+-}_{s} (s = up/down spin).
// Provides graded products, the truncated exponential of even elements,
// integer powers, Berezin integration of the fluctuation block against the
// normalized imaginary Gaussian weight, extraction of (psi.psi)-polynomial
// coefficients, and power-law envelope certificates on the coefficients.
#pragma once

#include <array>
#include <complex>
#include <cstdint>

namespace hsrg {

using cplx = std::complex<double>;

// ---- generator order --------------------------------------------------------
// Bit positions in the monomial mask.  This order is fixed once and for all;
// every sign in the algebra is derived from transposition parity against it.
enum Generator : int {
  kPsiPlusUp = 0,
  kPsiMinusUp = 1,
  kPsiPlusDown = 2,
  kPsiMinusDown = 3,
  kZetaPlusUp = 4,
  kZetaMinusUp = 5,
  kZetaPlusDown = 6,
  kZetaMinusDown = 7,
};

constexpr std::uint8_t kPsiMaskBits = 0x0F;   // generators 0..3
constexpr std::uint8_t kZetaMaskBits = 0xF0;  // generators 4..7

// ---- element ----------------------------------------------------------------
// Dense coefficient vector indexed by monomial mask; mask bit i set means the
// ordered monomial contains generator i.  Mask 0 is the scalar part.
struct GrassmannPoly {
  std::array<cplx, 256> c{};

  static GrassmannPoly zero() { return GrassmannPoly{}; }
  static GrassmannPoly scalar(cplx v) {
    GrassmannPoly p;
    p.c[0] = v;
    return p;
  }
  static GrassmannPoly generator(int i);

  GrassmannPoly& operator+=(const GrassmannPoly& o);
  GrassmannPoly& operator-=(const GrassmannPoly& o);
  GrassmannPoly& operator*=(cplx v);
  friend GrassmannPoly operator+(GrassmannPoly a, const GrassmannPoly& b) {
    a += b;
    return a;
  }
  friend GrassmannPoly operator-(GrassmannPoly a, const GrassmannPoly& b) {
    a -= b;
    return a;
  }
  friend GrassmannPoly operator*(GrassmannPoly a, cplx v) {
    a *= v;
    return a;
  }
  friend GrassmannPoly operator*(cplx v, GrassmannPoly a) {
    a *= v;
    return a;
  }

  double max_abs() const;
  bool is_even() const;       // only even-degree monomials present
  bool has_scalar() const { return c[0] != cplx(0.0, 0.0); }
};

// Sign of reordering the concatenation (ordered monomial a)(ordered monomial b)
// into the ordered monomial a|b; masks must be disjoint.
int reorder_sign(std::uint8_t a, std::uint8_t b);

// ---- operations -------------------------------------------------------------
GrassmannPoly mul(const GrassmannPoly& p, const GrassmannPoly& q);

// exp of a nilpotent even element: sum_{j=0}^{4} p^j/j!, exact by nilpotency.
// Rejects odd-degree or nonzero-scalar input.
GrassmannPoly exp_even(const GrassmannPoly& p);

// p^k by repeated squaring, k >= 1.
GrassmannPoly power(const GrassmannPoly& p, long k);

// Integrates out the four zeta generators against the normalized measure
// -[prod_s dzeta^+_s dzeta^-_s] e^{-i sum_s zeta^+_s zeta^-_s}; the constant 1
// integrates to 1 and <zeta^-_s zeta^+_s'> = -i delta_{ss'}.  The result
// contains psi generators only.
GrassmannPoly berezin_fluct_integral(const GrassmannPoly& p);

// Coefficients of p = C0 + C1 (psi.psi) + C2 (psi.psi)^2 for p in the
// invariant (spin-rotation) subalgebra; throws if any residual monomial
// exceeds tol * max|coefficient|.
struct PsiPsiCoeffs {
  cplx c0, c1, c2;
};
PsiPsiCoeffs psi_psi_coefficients(const GrassmannPoly& p, double tol = 1e-12);

// Minimal kappa with |f_ab| <= kappa N^{|a|} M^{|b|} over all monomials
// (|a| = psi-degree, |b| = zeta-degree, 0^0 = 1).
struct KnmCertificate {
  double kappa, N, M;
};
KnmCertificate knm_certify(const GrassmannPoly& p, double N, double M);

// ---- fixed bilinears used throughout the flow -------------------------------
// psi.psi  = sum_s psi^+_s psi^-_s                     (masks 0b0011, 0b1100)
// zeta.zeta = sum_s zeta^+_s zeta^-_s                  (masks 0x30, 0xC0)
// psi.zeta = (1/2) sum_s (psi^+_s zeta^-_s + zeta^+_s psi^-_s), the symmetric
//            mixed bilinear appearing in (a + b).(a + b) expansions.
const GrassmannPoly& psi_dot_psi();
const GrassmannPoly& zeta_dot_zeta();
const GrassmannPoly& psi_dot_zeta();

}  // namespace hsrg
