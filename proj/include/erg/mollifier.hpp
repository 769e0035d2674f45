#pragma once

#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "erg/quadrature.hpp"

namespace erg {

/// Spatial dimension d together with the canonical field dimension [phi].
class FieldDimension {
 public:
  FieldDimension(int d, double phi_dim);

  /// [phi] = (d - alpha) / 2 with 0 < alpha <= 2.
  static FieldDimension from_alpha(int d, double alpha);
  /// Standard massless free field, [phi] = (d - 2) / 2 (requires d > 2).
  static FieldDimension canonical(int d);
  /// d = 3 with [phi] = (3 - eps) / 4.
  static FieldDimension epsilon_model(double eps);

  int d() const { return d_; }
  double phi_dim() const { return phi_dim_; }

  friend bool operator==(const FieldDimension&, const FieldDimension&) = default;

 private:
  int d_;
  double phi_dim_;
};

/// Surface area of the unit sphere S^{n-1} in R^n (2 for n = 1).
double unit_sphere_area(int n);

using RadialProfile = std::function<double(double)>;

/// c * (1/4 - r^2)_+^4, with c chosen so that (g*g)(0) = 1 in dimension d.
RadialProfile bump_profile(int d);
/// The unnormalized bump (1/4 - r^2)_+^4.
RadialProfile raw_bump_profile();

/// Finite-range mollifier u = g*g, tabulated as a piecewise Chebyshev interpolant on [0, 1].
/// u(r) is exactly zero for r >= 1.
class MollifierU {
 public:
  int d() const { return d_; }
  double range() const { return 1.0; }
  int smoothness_order() const { return smoothness_order_; }
  double panel_width() const { return panel_width_; }

  double operator()(double r) const;
  double at_origin() const { return origin_; }

  /// Tabulation points (r, u(r)) used by the interpolant.
  std::vector<std::pair<double, double>> table() const;

  /// The same mollifier multiplied by a positive factor.
  MollifierU scaled(double factor) const;

 private:
  friend MollifierU build_mollifier(const RadialProfile&, int, double, int);

  int d_ = 1;
  int smoothness_order_ = 0;
  double panel_width_ = 0.0;
  int panels_ = 0;
  double origin_ = 0.0;
  std::vector<double> values_;  // panels_ * kNodes values
};

/// Builds u = g*g in dimension d by quadrature of the d-dimensional convolution.
/// grid_resolution is the maximal panel width of the tabulation. profile_smoothness is the
/// number of continuous derivatives of g, recorded as metadata (u has 2*k + 2).
/// Throws std::invalid_argument if g does not vanish beyond radius 1/2 or is negative,
/// NumericalError if the convolution quadrature fails.
MollifierU build_mollifier(const RadialProfile& profile_g, int d, double grid_resolution = 1.0 / 32.0,
                           int profile_smoothness = 3);

/// Direct evaluation of (g*g)(r) by quadrature, without tabulation.
double convolve_radial(const RadialProfile& g, int d, double r, const QuadratureOptions& opts = {});

/// Smallest eigenvalue of the Gram matrix f(|x_i - x_j|) over the given points.
double min_gram_eigenvalue(const std::function<double(double)>& f, const std::vector<std::vector<double>>& points);

}  // namespace erg
