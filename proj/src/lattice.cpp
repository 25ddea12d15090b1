#include "lattice.hpp"

#include <cmath>
#include <stdexcept>

namespace hsrg {

HierLattice::HierLattice(int L_, int N_) : L(L_), N(N_) {
  if (L < 2 || (L % 2) != 0)
    throw std::invalid_argument("HierLattice: L must be an even integer >= 2");
  if (N < 1) throw std::invalid_argument("HierLattice: N must be >= 1");
}

std::int64_t HierLattice::side() const {
  std::int64_t s = 1;
  for (int i = 0; i < N; ++i) s *= L;
  return s;
}

namespace {
void check_level0(const HierLattice& lat, const Site& x, const char* who) {
  if (x.level != 0)
    throw std::invalid_argument(std::string(who) + ": site must be at level 0");
  const std::int64_t s = lat.side();
  for (int d = 0; d < 3; ++d)
    if (x.coords[d] < 0 || x.coords[d] >= s)
      throw std::invalid_argument(std::string(who) + ": coordinates out of range");
}
}  // namespace

int hier_scale(const HierLattice& lat, const Site& x, const Site& y) {
  check_level0(lat, x, "hier_scale");
  check_level0(lat, y, "hier_scale");
  std::int64_t div = lat.L;  // L^{k+1} with k = 0
  for (int k = 0; k <= lat.N; ++k) {
    bool same = true;
    for (int d = 0; d < 3; ++d)
      if (x.coords[d] / div != y.coords[d] / div) same = false;
    if (same) return k;
    div *= lat.L;
  }
  throw std::logic_error("hier_scale: no common block found");  // unreachable
}

double hier_distance(const HierLattice& lat, const Site& x, const Site& y) {
  return std::pow(static_cast<double>(lat.L), hier_scale(lat, x, y));
}

int a_sign(const HierLattice& lat, const Site& x) {
  const std::int64_t r = x.coords[0] % lat.L;
  return (r % 2 == 0) ? 1 : -1;
}

Site block_of(const HierLattice& lat, const Site& x, int level) {
  if (level < x.level)
    throw std::invalid_argument("block_of: target level below site level");
  std::int64_t div = 1;
  for (int i = x.level; i < level; ++i) div *= lat.L;
  Site b;
  for (int d = 0; d < 3; ++d) b.coords[d] = x.coords[d] / div;
  b.level = level;
  return b;
}

cplx free_covariance(const HierLattice& lat, const Site& x, const Site& y,
                     int spin_a, int spin_b) {
  if (spin_a != spin_b) return 0.0;
  const int k = hier_scale(lat, x, y);
  double sum = 0.0;
  double weight = std::pow(static_cast<double>(lat.L), -2.0 * k);
  for (int j = k; j < lat.N; ++j) {
    sum += weight * a_sign(lat, block_of(lat, x, j)) *
           a_sign(lat, block_of(lat, y, j));
    weight /= static_cast<double>(lat.L) * lat.L;
  }
  return cplx(0.0, -sum);
}

}  // namespace hsrg
