#pragma once

#include <array>
#include <string>
#include <vector>

#include "erg/kernel.hpp"
#include "erg/lattice.hpp"

namespace erg {

/// Polynomial in one variable, coefficients in ascending powers.
using Polynomial = std::vector<double>;

double evaluate_polynomial(const Polynomial& p, double x);

/// Power coefficients of :phi^m: ordered with variance c, from the recursion
/// :phi^m: = phi :phi^{m-1}: - (m - 1) c :phi^{m-2}:.
Polynomial wick_order(int m, double variance);

/// Coefficients in the Wick basis {:phi^k:_{c1}} re-expressed in the basis {:phi^k:_{c2}}:
/// :phi^m:_{c1} = sum_k C(m, 2k) (2k - 1)!! (c2 - c1)^k :phi^{m-2k}:_{c2}.
Polynomial reorder_wick(const Polynomial& wick_coeffs, double c1, double c2);
/// Wick-basis coefficients at variance c to power coefficients, and back.
Polynomial wick_to_power(const Polynomial& wick_coeffs, double variance);
Polynomial power_to_wick(const Polynomial& power_coeffs, double variance);

/// Power coefficients of phi -> E[p(phi + zeta)] for zeta ~ N(0, gamma).
Polynomial gaussian_smear(const Polynomial& power_coeffs, double gamma);

/// E[zeta^k] for zeta ~ N(0, variance).
double gaussian_moment(int k, double variance);

/// Variance of a forward difference quotient (phi(x + h e) - phi(x)) / h under a stationary
/// Gaussian with covariance ordering(r): 2 (ordering(0) - ordering(h)) / h^2.
double gradient_variance(const CovarianceKernel& ordering, double spacing);

/// Wick-ordered local monomial :phi^m: (n_derivs = 0) or :|grad phi|^2: (m = 2, n_derivs = 2)
/// summed over a lattice region X with volume element spacing^d. The gradient uses forward
/// differences, and its ordering variance is per direction.
struct WickMonomial {
  int m = 1;
  int n_derivs = 0;
  double ordering_variance = 0.0;
  int d = 1;
  double spacing = 1.0;
  std::vector<Point> region;

  double evaluate(const FieldFunction& phi) const;
  /// Points at which the field is read: the region, and forward neighbours for gradients.
  std::vector<Point> support() const;
  /// Local density at one site (no volume factor).
  double density(const FieldFunction& phi, const Point& x) const;
};

/// :phi^m: over `region`, ordered with respect to the variance C(0) of `ordering`.
WickMonomial power_monomial(int m, std::vector<Point> region, double spacing, const CovarianceKernel& ordering);
/// :|grad phi|^2: over `region`, ordered with respect to `ordering` at this spacing.
WickMonomial gradient_monomial(std::vector<Point> region, double spacing, const CovarianceKernel& ordering);

enum class ScalingClassKind { relevant, irrelevant, marginal };
std::string to_string(ScalingClassKind k);

struct ScalingClass {
  double exponent = 0.0;
  ScalingClassKind kind = ScalingClassKind::marginal;
};

/// Exponent d - m[phi] - n; marginal when |exponent| <= 1e-12.
ScalingClass classify(int m, int n_derivs, const FieldDimension& dim);

/// Local potential sum_{x in X} spacing^d [xi :|grad phi|^2: + sum_k power[k] :phi^k:].
/// Power terms are Wick ordered with power_variance (0 gives plain powers); the gradient term
/// uses gradient_variance per direction.
struct LocalPotential {
  std::array<double, 5> power{};  // coefficients of :phi^0: .. :phi^4:
  double xi = 0.0;
  double power_variance = 0.0;
  double gradient_variance = 0.0;
  int d = 1;
  double spacing = 1.0;

  double g() const { return power[4]; }
  double mu() const { return power[2]; }

  static LocalPotential phi4(double g, double mu, double xi, int d, double spacing, double power_variance = 0.0,
                             double gradient_variance = 0.0);

  double density(const FieldFunction& phi, const Point& x) const;
  double evaluate(const FieldFunction& phi, const std::vector<Point>& region) const;

  friend bool operator==(const LocalPotential&, const LocalPotential&) = default;
};

}  // namespace erg
