#include "erg/wick.hpp"

#include <cmath>
#include <stdexcept>

namespace erg {

namespace {

double binomial(int n, int k) {
  double b = 1.0;
  for (int i = 1; i <= k; ++i) b = b * (n - k + i) / i;
  return b;
}

double double_factorial(int n) {  // n!! for odd n >= -1
  double f = 1.0;
  for (int i = n; i > 1; i -= 2) f *= i;
  return f;
}

Point shifted(const Point& x, int axis, double h) {
  Point y = x;
  y[axis] += h;
  return y;
}

}  // namespace

double evaluate_polynomial(const Polynomial& p, double x) {
  double v = 0.0;
  for (auto it = p.rbegin(); it != p.rend(); ++it) v = v * x + *it;
  return v;
}

Polynomial wick_order(int m, double c) {
  if (m < 0) throw std::invalid_argument("wick_order: m must be >= 0");
  if (c < 0.0) throw std::invalid_argument("wick_order: ordering variance must be >= 0");
  Polynomial prev{1.0};
  if (m == 0) return prev;
  Polynomial cur{0.0, 1.0};
  for (int k = 2; k <= m; ++k) {
    Polynomial next(k + 1, 0.0);
    for (int j = 0; j < k; ++j) next[j + 1] += cur[j];
    for (int j = 0; j < k - 1; ++j) next[j] -= (k - 1) * c * prev[j];
    prev = std::move(cur);
    cur = std::move(next);
  }
  return cur;
}

Polynomial reorder_wick(const Polynomial& w, double c1, double c2) {
  Polynomial out(w.size(), 0.0);
  const double delta = c2 - c1;
  for (std::size_t m = 0; m < w.size(); ++m) {
    if (w[m] == 0.0) continue;
    double power = 1.0;
    for (int k = 0; 2 * k <= static_cast<int>(m); ++k) {
      out[m - 2 * k] += w[m] * binomial(static_cast<int>(m), 2 * k) * double_factorial(2 * k - 1) * power;
      power *= delta;
    }
  }
  return out;
}

Polynomial wick_to_power(const Polynomial& w, double c) {
  Polynomial out(w.size(), 0.0);
  for (std::size_t m = 0; m < w.size(); ++m) {
    if (w[m] == 0.0) continue;
    const Polynomial h = wick_order(static_cast<int>(m), c);
    for (std::size_t j = 0; j < h.size(); ++j) out[j] += w[m] * h[j];
  }
  return out;
}

Polynomial power_to_wick(const Polynomial& p, double c) {
  // Plain powers are Wick ordered with variance zero.
  return reorder_wick(p, 0.0, c);
}

double gaussian_moment(int k, double variance) {
  if (k % 2 == 1) return 0.0;
  return double_factorial(k - 1) * std::pow(variance, k / 2);
}

Polynomial gaussian_smear(const Polynomial& p, double gamma) {
  Polynomial out(p.size(), 0.0);
  for (std::size_t k = 0; k < p.size(); ++k)
    for (std::size_t j = 0; j <= k; j += 2)
      out[k - j] += p[k] * binomial(static_cast<int>(k), static_cast<int>(j)) * gaussian_moment(static_cast<int>(j), gamma);
  return out;
}

double gradient_variance(const CovarianceKernel& ordering, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("gradient_variance: spacing must be positive");
  return 2.0 * (ordering.exact(0.0) - ordering.exact(h)) / (h * h);
}

double WickMonomial::density(const FieldFunction& phi, const Point& x) const {
  if (n_derivs == 0) return evaluate_polynomial(wick_order(m, ordering_variance), phi(x));
  const double f0 = phi(x);
  double sum = 0.0;
  for (int a = 0; a < d; ++a) {
    const double q = (phi(shifted(x, a, spacing)) - f0) / spacing;
    sum += q * q - ordering_variance;
  }
  return sum;
}

double WickMonomial::evaluate(const FieldFunction& phi) const {
  double sum = 0.0;
  for (const Point& x : region) sum += density(phi, x);
  return std::pow(spacing, d) * sum;
}

std::vector<Point> WickMonomial::support() const {
  std::vector<Point> pts = region;
  if (n_derivs == 2)
    for (const Point& x : region)
      for (int a = 0; a < d; ++a) pts.push_back(shifted(x, a, spacing));
  return pts;
}

WickMonomial power_monomial(int m, std::vector<Point> region, double spacing, const CovarianceKernel& ordering) {
  if (m < 1) throw std::invalid_argument("power_monomial: m must be >= 1");
  WickMonomial p;
  p.m = m;
  p.n_derivs = 0;
  p.ordering_variance = ordering.exact(0.0);
  p.d = ordering.dim().d();
  p.spacing = spacing;
  p.region = std::move(region);
  return p;
}

WickMonomial gradient_monomial(std::vector<Point> region, double spacing, const CovarianceKernel& ordering) {
  WickMonomial p;
  p.m = 2;
  p.n_derivs = 2;
  p.ordering_variance = gradient_variance(ordering, spacing);
  p.d = ordering.dim().d();
  p.spacing = spacing;
  p.region = std::move(region);
  return p;
}

std::string to_string(ScalingClassKind k) {
  switch (k) {
    case ScalingClassKind::relevant: return "relevant";
    case ScalingClassKind::irrelevant: return "irrelevant";
    case ScalingClassKind::marginal: return "marginal";
  }
  return "unknown";
}

ScalingClass classify(int m, int n_derivs, const FieldDimension& dim) {
  if (m < 1 || (n_derivs != 0 && n_derivs != 2)) throw std::invalid_argument("classify: invalid monomial signature");
  ScalingClass s;
  s.exponent = dim.d() - m * dim.phi_dim() - n_derivs;
  if (std::abs(s.exponent) <= 1e-12) {
    s.kind = ScalingClassKind::marginal;
  } else {
    s.kind = s.exponent > 0 ? ScalingClassKind::relevant : ScalingClassKind::irrelevant;
  }
  return s;
}

LocalPotential LocalPotential::phi4(double g, double mu, double xi, int d, double spacing, double power_variance,
                                    double gradient_variance) {
  LocalPotential v;
  v.power[4] = g;
  v.power[2] = mu;
  v.xi = xi;
  v.d = d;
  v.spacing = spacing;
  v.power_variance = power_variance;
  v.gradient_variance = gradient_variance;
  return v;
}

namespace {

double potential_density(const LocalPotential& v, const Polynomial& p, const FieldFunction& phi, const Point& x) {
  const double f0 = phi(x);
  double out = evaluate_polynomial(p, f0);
  if (v.xi != 0.0) {
    double grad = 0.0;
    for (int a = 0; a < v.d; ++a) {
      const double q = (phi(shifted(x, a, v.spacing)) - f0) / v.spacing;
      grad += q * q - v.gradient_variance;
    }
    out += v.xi * grad;
  }
  return out;
}

}  // namespace

double LocalPotential::density(const FieldFunction& phi, const Point& x) const {
  return potential_density(*this, wick_to_power(Polynomial(power.begin(), power.end()), power_variance), phi, x);
}

double LocalPotential::evaluate(const FieldFunction& phi, const std::vector<Point>& region) const {
  const Polynomial p = wick_to_power(Polynomial(power.begin(), power.end()), power_variance);
  double sum = 0.0;
  for (const Point& x : region) sum += potential_density(*this, p, phi, x);
  return std::pow(spacing, d) * sum;
}

}  // namespace erg
