#include "erg/lattice.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace erg {

LatticeGrid::LatticeGrid(int d_, int extent_, double spacing_) : d(d_), extent(extent_), spacing(spacing_) {
  if (d < 1 || d > 3) throw std::invalid_argument("LatticeGrid: d must be 1, 2 or 3");
  if (extent < 1) throw std::invalid_argument("LatticeGrid: extent must be positive");
  if (!(spacing > 0.0)) throw std::invalid_argument("LatticeGrid: spacing must be positive");
}

std::size_t LatticeGrid::size() const {
  std::size_t n = 1;
  for (int a = 0; a < d; ++a) n *= static_cast<std::size_t>(extent);
  return n;
}

Site LatticeGrid::coords(std::size_t index) const {
  Site s{0, 0, 0};
  for (int a = d - 1; a >= 0; --a) {
    s[a] = static_cast<int>(index % extent);
    index /= extent;
  }
  return s;
}

std::size_t LatticeGrid::index(Site s) const {
  std::size_t idx = 0;
  for (int a = 0; a < d; ++a) {
    int c = s[a] % extent;
    if (c < 0) c += extent;
    idx = idx * extent + static_cast<std::size_t>(c);
  }
  return idx;
}

Point LatticeGrid::position(std::size_t index) const {
  const Site s = coords(index);
  return {spacing * s[0], spacing * s[1], spacing * s[2]};
}

double LatticeGrid::displacement_length(Site disp) const {
  double sum = 0.0;
  for (int a = 0; a < d; ++a) {
    int c = disp[a] % extent;
    if (c < 0) c += extent;
    const int m = std::min(c, extent - c);
    sum += static_cast<double>(m) * m;
  }
  return spacing * std::sqrt(sum);
}

double LatticeGrid::distance(std::size_t a, std::size_t b) const {
  const Site sa = coords(a), sb = coords(b);
  return displacement_length({sa[0] - sb[0], sa[1] - sb[1], sa[2] - sb[2]});
}

std::size_t LatticeGrid::site_of(const Point& p) const {
  Site s{0, 0, 0};
  for (int a = 0; a < 3; ++a) {
    const double x = p[a] / spacing;
    const double r = std::round(x);
    if (std::abs(x - r) > 1e-9 || (a >= d && r != 0.0))
      throw std::invalid_argument("LatticeGrid: point is not a lattice site");
    if (a < d) s[a] = static_cast<int>(r);
  }
  return index(s);
}

void LatticeGrid::require_no_wrap(double range) const {
  if (!(0.5 * length() > range))
    throw std::invalid_argument("LatticeGrid: half the torus length " + std::to_string(0.5 * length()) +
                                " does not exceed the kernel range " + std::to_string(range));
}

LatticeField::LatticeField(LatticeGrid g, std::vector<double> v, std::optional<int> n)
    : values(std::move(v)), grid(g), scale_index(n) {
  if (values.size() != grid.size()) throw std::invalid_argument("LatticeField: value count does not match grid");
  for (double x : values)
    if (!std::isfinite(x)) throw std::invalid_argument("LatticeField: non-finite value");
}

FieldFunction LatticeField::as_function() const {
  return [values = values, grid = grid](const Point& p) { return values[grid.site_of(p)]; };
}

}  // namespace erg
