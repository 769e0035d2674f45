#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace erg {

using Point = std::array<double, 3>;
using Site = std::array<int, 3>;

/// Field configuration evaluated at continuum positions.
using FieldFunction = std::function<double(const Point&)>;

/// Periodic cubic lattice with `extent` points per axis and the given spacing; sites sit at
/// spacing * (i, j, k) with unused axes fixed at zero.
struct LatticeGrid {
  int d = 1;
  int extent = 0;
  double spacing = 1.0;

  LatticeGrid() = default;
  LatticeGrid(int d, int extent, double spacing);

  std::size_t size() const;
  double length() const { return extent * spacing; }
  Site coords(std::size_t index) const;
  /// Row-major index of a site, with periodic wrapping of every coordinate.
  std::size_t index(Site s) const;
  Point position(std::size_t index) const;
  /// Euclidean distance between two sites under the minimum-image convention.
  double distance(std::size_t a, std::size_t b) const;
  double displacement_length(Site disp) const;
  /// Site corresponding to a continuum point; throws std::invalid_argument when the point is
  /// not a lattice site (up to 1e-9 relative to the spacing).
  std::size_t site_of(const Point& p) const;

  /// Throws std::invalid_argument unless extent * spacing / 2 > range.
  void require_no_wrap(double range) const;

  friend bool operator==(const LatticeGrid&, const LatticeGrid&) = default;
};

struct LatticeField {
  std::vector<double> values;
  LatticeGrid grid;
  std::optional<int> scale_index;

  LatticeField() = default;
  LatticeField(LatticeGrid grid, std::vector<double> values, std::optional<int> scale_index = std::nullopt);

  double at(Site s) const { return values[grid.index(s)]; }
  /// Value at a continuum point that must coincide with a lattice site.
  double at(const Point& p) const { return values[grid.site_of(p)]; }
  FieldFunction as_function() const;
};

}  // namespace erg
