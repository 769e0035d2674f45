#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "erg/sampling.hpp"
#include "erg/wick.hpp"

namespace erg {

/// A functional of the field: an evaluator, the points it reads, and an optional Wick tag that
/// enables the exact treatment of T_L.
struct Functional {
  std::string name;
  std::function<double(const FieldFunction&)> evaluate;
  std::vector<Point> support;
  std::optional<WickMonomial> tag;
};

Functional constant_functional(double value);
Functional monomial_functional(const WickMonomial& p);
/// phi(x0)^k.
Functional point_power_functional(const Point& x0, int k);
/// Re exp(i t phi(x0)) = cos(t phi(x0)).
Functional characteristic_functional(double t, const Point& x0);

/// A smooth deterministic test configuration: a sum of `modes` cosines with wavelengths of
/// order `scale` and unit total amplitude times `amplitude`.
FieldFunction random_smooth_field(std::uint64_t seed, int d, int modes = 3, double scale = 4.0, double amplitude = 1.0);

/// S_L phi(x) = L^{-[phi]} phi(x / L).
FieldFunction scale_field(const FieldFunction& phi, double L, double phi_dim);

struct AnalyticTL {
  double factor = 0.0;       // L^{d - m[phi] - n}
  ScalingClass scaling;      // exponent used for the factor
  WickMonomial monomial;     // P(L^{-1} X), ordered with respect to C at the new spacing
  double decomposition_residual = 0.0;

  double evaluate(const FieldFunction& phi) const { return factor * monomial.evaluate(phi); }
};

/// T_L P = L^{d - m[phi] - n} P(L^{-1} X) for a monomial ordered with respect to C. The
/// identity is checked by re-ordering with the fluctuation covariance and rescaling.
/// Throws std::invalid_argument when P is not C-ordered or gamma is not the fluctuation
/// covariance for L, and NumericalError when |C - gamma - S_L C| exceeds `tolerance` at the
/// points the monomial depends on.
AnalyticTL apply_TL_analytic(const WickMonomial& p, double L, const CovarianceKernel& C,
                             const CovarianceKernel& gamma, double tolerance = 1e-10);

/// (T_L P)(phi) = E[P(zeta + S_L phi)] computed by exact Gaussian integration over zeta ~ gamma,
/// without using the decomposition identity.
double gaussian_TL_value(const WickMonomial& p, double L, const CovarianceKernel& gamma, const FieldFunction& phi);

/// Monte Carlo estimate of (T_L F)(phi) = E[F(zeta + S_L phi)], zeta ~ gamma on `grid`.
/// L must be an integer >= 2 so that the rescaled field is read at lattice sites, and the
/// support of F must consist of lattice sites.
Estimate apply_TL_mc(const Functional& F, double L, const CovarianceKernel& gamma, const LatticeGrid& grid,
                     const FieldFunction& phi, std::uint64_t seed, std::size_t count);

struct Discrepancy {
  Estimate lhs;
  Estimate rhs;
  double difference = 0.0;
  double std_error = 0.0;  // combined
  double zscore = 0.0;
  std::optional<double> reference;  // closed form when available
};

/// Exact semigroup check on the analytic path: T_L T_{L^n} P against T_{L^{n+1}} P. The
/// lhs/rhs values hold the composite and direct factors; difference also covers any mismatch
/// in the resulting monomials.
Discrepancy semigroup_check_analytic(const WickMonomial& p, double L, int n, const CovarianceKernel& C,
                                     const CovarianceKernel& gamma_L, const CovarianceKernel& gamma_Ln,
                                     const CovarianceKernel& gamma_Ln1);

/// Monte Carlo semigroup check. The composite side draws zeta_1 ~ Gamma_L and zeta_2 ~ the
/// fluctuation covariance for L^n and evaluates F(zeta_2 + S_{L^n}(zeta_1 + S_L phi)); the direct
/// side draws from the fluctuation covariance for L^{n+1}. The support of F must lie on the
/// sublattice of spacing L^n times the grid spacing. For characteristic functionals the closed
/// form is attached as the reference.
Discrepancy semigroup_check_mc(const Functional& F, int L, int n, const CovarianceKernel& gamma_L,
                               const CovarianceKernel& gamma_Ln, const CovarianceKernel& gamma_Ln1,
                               const LatticeGrid& grid, const FieldFunction& phi, std::uint64_t seed,
                               std::size_t count, std::optional<double> characteristic_t = std::nullopt);

/// E_{mu_C}[T_L F] (lhs, phi ~ C on the support scaled by 1/L and zeta ~ gamma) against
/// E_{mu_C}[F] (rhs, independent draws).
Discrepancy invariance_check(const Functional& F, int L, const CovarianceKernel& C, const CovarianceKernel& gamma,
                             const LatticeGrid& grid, std::uint64_t seed, std::size_t count);

/// E_{mu_C}[(T_L F)^2] (lhs) against E_{mu_C}[F^2] (rhs) from the same draws, with T_L F given
/// exactly by `TF`. The statistic passes when lhs <= rhs + 3 std_error.
Discrepancy contraction_check(const Functional& F, const Functional& TF, const CovarianceKernel& C,
                              std::uint64_t seed, std::size_t count);

/// T_L F in closed form as a functional, for Wick-tagged or characteristic functionals.
Functional analytic_TL_functional(const WickMonomial& p, double L, const CovarianceKernel& C,
                                  const CovarianceKernel& gamma);
Functional characteristic_TL_functional(double t, const Point& x0, double L, const CovarianceKernel& gamma);

struct ReportRow {
  std::string check;
  std::string name;
  double value = 0.0;
  double std_error = 0.0;
  double reference = 0.0;
  double zscore = 0.0;
};

/// CSV with columns check,name,value,stderr,reference,zscore.
void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows);

}  // namespace erg
