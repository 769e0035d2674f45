#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

namespace erg {

/// Raised when an adaptive quadrature or an iterative solve fails to reach its tolerance.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gauss-Legendre nodes and weights on [-1, 1], computed by Newton iteration on P_n.
class GaussLegendre {
 public:
  explicit GaussLegendre(int order);

  int order() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

  template <class F>
  double integrate(F&& f, double a, double b) const {
    const double half = 0.5 * (b - a);
    const double mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) sum += weights_[i] * f(mid + half * nodes_[i]);
    return half * sum;
  }

 private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

/// Shared 10-point rule used by the adaptive integrator.
const GaussLegendre& default_rule();

struct QuadratureOptions {
  double rel_tol = 1e-13;
  double abs_tol = 1e-300;
  int max_depth = 30;
  /// Refinement stops (unconverged) once this many integrand evaluations have been spent.
  long max_evaluations = 2'000'000;
  /// When positive, use a fixed composite rule with this many panels instead of adapting.
  int fixed_panels = 0;
  /// Order of the per-panel rule in fixed mode.
  int fixed_order = 2;
};

struct QuadratureResult {
  double value = 0.0;
  double error = 0.0;
  long evaluations = 0;
  bool converged = true;
};

namespace detail {

template <class F>
void adapt(F& f, const GaussLegendre& rule, double a, double b, double whole, double tol, double floor, int depth,
           long budget, QuadratureResult& out) {
  const double m = 0.5 * (a + b);
  const double left = rule.integrate(f, a, m);
  const double right = rule.integrate(f, m, b);
  out.evaluations += 2 * rule.order();
  const double diff = std::abs(left + right - whole);
  // Differences below the rounding floor of the whole integral cannot be resolved further.
  const double accept = std::max(tol, floor);
  if (diff <= accept || depth <= 0 || out.evaluations > budget || !(m > a && m < b)) {
    if (diff > accept) out.converged = false;
    out.value += left + right;
    out.error += diff;
    return;
  }
  adapt(f, rule, a, m, left, 0.5 * tol, floor, depth - 1, budget, out);
  adapt(f, rule, m, b, right, 0.5 * tol, floor, depth - 1, budget, out);
}

}  // namespace detail

/// Integrates f over [a, b]. Adaptive bisection compares each panel against the sum of its
/// halves; the tolerance is max(abs_tol, rel_tol * |coarse estimate|) split across panels.
template <class F>
QuadratureResult integrate(F&& f, double a, double b, const QuadratureOptions& opts = {}) {
  QuadratureResult out;
  if (!(b > a)) return out;
  if (opts.fixed_panels > 0) {
    const GaussLegendre rule(opts.fixed_order);
    const double h = (b - a) / opts.fixed_panels;
    for (int p = 0; p < opts.fixed_panels; ++p) out.value += rule.integrate(f, a + p * h, a + (p + 1) * h);
    out.evaluations = static_cast<long>(opts.fixed_panels) * rule.order();
    return out;
  }
  const GaussLegendre& rule = default_rule();
  // Seed with four panels so that narrow features are not missed by a single coarse estimate.
  constexpr int seeds = 4;
  double coarse[seeds];
  double estimate = 0.0;
  const double h = (b - a) / seeds;
  for (int p = 0; p < seeds; ++p) {
    coarse[p] = rule.integrate(f, a + p * h, a + (p + 1) * h);
    estimate += coarse[p];
  }
  out.evaluations = seeds * rule.order();
  const double tol = std::max(opts.abs_tol, opts.rel_tol * std::abs(estimate));
  const double floor = 64.0 * std::numeric_limits<double>::epsilon() * std::abs(estimate);
  for (int p = 0; p < seeds; ++p)
    detail::adapt(f, rule, a + p * h, a + (p + 1) * h, coarse[p], tol / seeds, floor, opts.max_depth,
                  opts.max_evaluations, out);
  return out;
}

/// Integrates over consecutive pieces [points[i], points[i+1]], which should contain every
/// point where f is not smooth.
template <class F>
QuadratureResult integrate_pieces(F&& f, const std::vector<double>& points, const QuadratureOptions& opts = {}) {
  QuadratureResult total;
  // The relative tolerance refers to the whole integral, not to each piece.
  double coarse = 0.0;
  for (std::size_t i = 0; i + 1 < points.size(); ++i)
    if (points[i + 1] > points[i]) coarse += std::abs(default_rule().integrate(f, points[i], points[i + 1]));
  QuadratureOptions piece_opts = opts;
  piece_opts.abs_tol = std::max(opts.abs_tol, opts.rel_tol * coarse / static_cast<double>(points.size()));
  for (std::size_t i = 0; i + 1 < points.size(); ++i) {
    const QuadratureResult piece = integrate(f, points[i], points[i + 1], piece_opts);
    total.value += piece.value;
    total.error += piece.error;
    total.evaluations += piece.evaluations;
    total.converged = total.converged && piece.converged;
  }
  return total;
}

}  // namespace erg
