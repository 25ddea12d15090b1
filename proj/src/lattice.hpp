#pragma once
// Hierarchical lattice geometry: the block hierarchy on {0..L^N-1}^3, the
// ultrametric scale k(x,y), the oscillating block signs A_x, and the exact
// free two-point function assembled from the scale decomposition.

#include <array>
#include <complex>
#include <cstdint>

namespace hsrg {

using cplx = std::complex<double>;

struct HierLattice {
  int L = 2;  // block side, even, >= 2
  int N = 1;  // number of hierarchy levels, >= 1

  HierLattice(int L_, int N_);
  // Number of sites per side at the finest level.
  std::int64_t side() const;
};

struct Site {
  std::array<std::int64_t, 3> coords{0, 0, 0};
  int level = 0;  // 0 = finest
};

// Hierarchical scale k(x,y) = min { k : floor(x / L^{k+1}) == floor(y / L^{k+1}) }.
// Both sites must be at level 0 and inside the lattice.
int hier_scale(const HierLattice& lat, const Site& x, const Site& y);

// Ultrametric distance d(x,y) = L^{k(x,y)}.
double hier_distance(const HierLattice& lat, const Site& x, const Site& y);

// Oscillating sign A_x = (-1)^{x_1 mod L}; block sums vanish for even L and
// the pattern is invariant under translations by L.
int a_sign(const HierLattice& lat, const Site& x);

// Block coordinate of x at the given level: floor(coords / L^level).
Site block_of(const HierLattice& lat, const Site& x, int level);

// Exact free two-point function of the full superfield: diagonal in spin,
//   C(x,y) = -i * sum_{j=k(x,y)}^{N-1} L^{-2j} A_{floor(x/L^j)} A_{floor(y/L^j)}.
// spin indices are 0/1; off-diagonal spin pairs give 0.
cplx free_covariance(const HierLattice& lat, const Site& x, const Site& y,
                     int spin_a, int spin_b);

}  // namespace hsrg
