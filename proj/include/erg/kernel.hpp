#pragma once

#include <iosfwd>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "erg/mollifier.hpp"
#include "erg/quadrature.hpp"

namespace erg {

enum class KernelKind { unit_cutoff, fluctuation, rescaled_fluctuation, scaled };

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& s);

/// Uniform radial grid r_i = i * dr, i = 0 .. points - 1.
struct RadialGrid {
  double dr = 0.0;
  std::size_t points = 0;

  double r(std::size_t i) const { return dr * static_cast<double>(i); }
  double r_max() const { return points == 0 ? 0.0 : r(points - 1); }

  /// Grid of `points` nodes spanning [0, r_max].
  static RadialGrid covering(double r_max, std::size_t points);
  friend bool operator==(const RadialGrid&, const RadialGrid&) = default;
};

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// The integral
///   int_{lower}^{upper} (dl / l) l^{-2[phi]} u(x / l),
/// which represents every kernel built here: C is [1, inf), Gamma_L is [1, L], Gamma_n is
/// [L^n, L^{n+1}], and S_lambda maps [a, b] to [lambda a, lambda b].
struct ScaleIntegral {
  std::shared_ptr<const MollifierU> u;
  double lower = 1.0;
  double upper = kInfinity;

  double evaluate(double r, double phi_dim, const QuadratureOptions& opts = {}) const;
};

/// Numerical options used for kernel construction.
struct KernelOptions {
  QuadratureOptions quadrature{};
};

/// A radial covariance kernel tabulated on a RadialGrid, with cubic interpolation between
/// nodes. Kernels built from a mollifier keep their integral representation, so they can be
/// re-evaluated exactly off the grid. Values at r >= range are exactly zero.
class CovarianceKernel {
 public:
  CovarianceKernel(KernelKind kind, FieldDimension dim, double L, int n, double range, RadialGrid grid,
                   std::vector<double> values, std::optional<ScaleIntegral> generator = std::nullopt);

  KernelKind kind() const { return kind_; }
  const FieldDimension& dim() const { return dim_; }
  /// Scale parameter; NaN for the unit cutoff covariance.
  double L() const { return L_; }
  /// Scale index for rescaled fluctuations; -1 otherwise.
  int n() const { return n_; }
  double range() const { return range_; }
  bool finite_range() const { return range_ < kInfinity; }
  const RadialGrid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  const std::optional<ScaleIntegral>& generator() const { return generator_; }

  /// Cubic interpolation of the table; exact zero beyond the range; falls back to the
  /// integral representation beyond the table if one is available.
  double operator()(double r) const;
  /// Integral-representation value when available, interpolation otherwise.
  double exact(double r) const;
  double at_origin() const { return values_.front(); }

 private:
  double interpolate(double r) const;

  KernelKind kind_;
  FieldDimension dim_;
  double L_;
  int n_;
  double range_;
  RadialGrid grid_;
  std::vector<double> values_;
  std::optional<ScaleIntegral> generator_;
  QuadratureOptions quadrature_{};
};

/// The zero kernel, useful as a degenerate covariance.
CovarianceKernel zero_kernel(FieldDimension dim, double range, RadialGrid grid);

/// C(x) = int_1^inf (dl/l) l^{-2[phi]} u(x/l).
CovarianceKernel unit_cutoff_covariance(std::shared_ptr<const MollifierU> u, FieldDimension dim, RadialGrid grid,
                                        const KernelOptions& opts = {});
/// Gamma_L(x) = int_1^L (dl/l) l^{-2[phi]} u(x/l); default grid spans 1.05 L.
CovarianceKernel fluctuation_covariance(std::shared_ptr<const MollifierU> u, FieldDimension dim, double L,
                                        std::optional<RadialGrid> grid = std::nullopt, const KernelOptions& opts = {});
/// S_L k(x) = L^{-2[phi]} k(x/L), tabulated on the grid stretched by L (so no interpolation).
CovarianceKernel scale_kernel(const CovarianceKernel& k, double L);
/// Gamma_n = S_{L^n} Gamma_L, with range L^{n+1}.
CovarianceKernel rescaled_fluctuation(std::shared_ptr<const MollifierU> u, FieldDimension dim, double L, int n,
                                      std::optional<RadialGrid> grid = std::nullopt, const KernelOptions& opts = {});
/// The same kernel tabulated on another grid (exactly via the integral when available).
CovarianceKernel resample(const CovarianceKernel& k, RadialGrid grid);

struct DecompositionReport {
  double max_residual = 0.0;
  double max_relative = 0.0;  // max residual divided by C(0)
  double argmax_r = 0.0;
};

/// max over C's grid of |C - Gamma_L - S_L C|. Throws std::invalid_argument when the
/// kernels disagree on dimension or grid, or are not (unit_cutoff, fluctuation with this L).
DecompositionReport verify_scaling_decomposition(const CovarianceKernel& C, const CovarianceKernel& gamma, double L,
                                                 const KernelOptions& opts = {});

/// CSV export: header `# kind=<...> L=<...> n=<...> d=<...> phi_dim=<...> range=<...>`, then `r,value`
/// rows at 17 significant digits.
void write_kernel_csv(std::ostream& os, const CovarianceKernel& k);
/// Imported kernels carry no integral representation.
CovarianceKernel read_kernel_csv(std::istream& is);

}  // namespace erg
