#include "erg/rg_map.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <stdexcept>

namespace erg {

namespace {

bool same_scale(double a, double b) { return std::abs(a - b) <= 1e-12 * std::abs(b); }

void require_fluctuation(const CovarianceKernel& gamma, double L, const char* who) {
  if (gamma.kind() != KernelKind::fluctuation || !same_scale(gamma.L(), L))
    throw std::invalid_argument(std::string(who) + ": expected the fluctuation covariance for L = " + std::to_string(L));
}

int admissible_L(double L, const char* who) {
  const double r = std::round(L);
  if (!(L >= 2.0) || std::abs(L - r) > 1e-12)
    throw std::invalid_argument(std::string(who) + ": L = " + std::to_string(L) +
                                " cannot be represented on the lattice; the Monte Carlo path needs an integer L >= 2 "
                                "(use apply_TL_analytic for real L > 1)");
  return static_cast<int>(r);
}

Point scaled_point(const Point& p, double s) { return {p[0] * s, p[1] * s, p[2] * s}; }

Estimate combine(const Estimate& a, const Estimate& b, Discrepancy& out) {
  out.lhs = a;
  out.rhs = b;
  out.difference = a.value - b.value;
  out.std_error = std::hypot(a.std_error, b.std_error);
  if (out.std_error > 0.0) {
    out.zscore = out.difference / out.std_error;
  } else {
    out.zscore = out.difference == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), out.difference);
  }
  return a;
}

}  // namespace

Functional constant_functional(double value) {
  return Functional{"constant", [value](const FieldFunction&) { return value; }, {}, std::nullopt};
}

Functional monomial_functional(const WickMonomial& p) {
  const std::string name = p.n_derivs == 0 ? ":phi^" + std::to_string(p.m) + ":" : ":|grad phi|^2:";
  return Functional{name, [p](const FieldFunction& phi) { return p.evaluate(phi); }, p.support(), p};
}

Functional point_power_functional(const Point& x0, int k) {
  return Functional{"phi(x0)^" + std::to_string(k), [x0, k](const FieldFunction& phi) { return std::pow(phi(x0), k); },
                    {x0}, std::nullopt};
}

Functional characteristic_functional(double t, const Point& x0) {
  return Functional{"cos(t phi(x0))", [t, x0](const FieldFunction& phi) { return std::cos(t * phi(x0)); }, {x0},
                    std::nullopt};
}

FieldFunction random_smooth_field(std::uint64_t seed, int d, int modes, double scale, double amplitude) {
  std::mt19937_64 rng(derive_seed(seed, 0x5eed));
  struct Mode {
    Point k;
    double phase, amp;
  };
  std::vector<Mode> ms(static_cast<std::size_t>(modes));
  double total = 0.0;
  for (auto& m : ms) {
    Point dir{0, 0, 0};
    double norm = 0.0;
    for (int a = 0; a < d; ++a) {
      dir[a] = standard_normal(rng);
      norm += dir[a] * dir[a];
    }
    norm = std::sqrt(norm);
    const double wavelength = scale * (1.0 + uniform01(rng));
    for (int a = 0; a < d; ++a) m.k[a] = 2.0 * std::numbers::pi / wavelength * dir[a] / norm;
    m.phase = 2.0 * std::numbers::pi * uniform01(rng);
    m.amp = 0.5 + uniform01(rng);
    total += m.amp;
  }
  for (auto& m : ms) m.amp *= amplitude / total;
  return [ms](const Point& x) {
    double v = 0.0;
    for (const auto& m : ms) v += m.amp * std::cos(m.k[0] * x[0] + m.k[1] * x[1] + m.k[2] * x[2] + m.phase);
    return v;
  };
}

FieldFunction scale_field(const FieldFunction& phi, double L, double phi_dim) {
  const double lambda = std::pow(L, -phi_dim);
  const double inv = 1.0 / L;
  return [phi, lambda, inv](const Point& x) { return lambda * phi(scaled_point(x, inv)); };
}

AnalyticTL apply_TL_analytic(const WickMonomial& p, double L, const CovarianceKernel& C, const CovarianceKernel& gamma,
                             double tolerance) {
  if (!(L > 1.0)) throw std::invalid_argument("apply_TL_analytic: L must exceed 1");
  if (C.kind() != KernelKind::unit_cutoff) throw std::invalid_argument("apply_TL_analytic: C must be the unit cutoff covariance");
  require_fluctuation(gamma, L, "apply_TL_analytic");
  if (!(C.dim() == gamma.dim()) || C.dim().d() != p.d) throw std::invalid_argument("apply_TL_analytic: dimension mismatch");
  const bool gradient = p.n_derivs == 2;
  if (gradient && p.m != 2) throw std::invalid_argument("apply_TL_analytic: derivative monomials are :|grad phi|^2: only");
  const double phi_dim = C.dim().phi_dim();
  const double a = p.spacing;

  const double c_ord = gradient ? gradient_variance(C, a) : C.exact(0.0);
  if (std::abs(p.ordering_variance - c_ord) > 1e-12 * std::abs(c_ord))
    throw std::invalid_argument("apply_TL_analytic: monomial is not Wick ordered with respect to C");

  AnalyticTL out;
  const double scale2 = std::pow(L, -2.0 * phi_dim);
  for (double r : gradient ? std::vector<double>{0.0, a} : std::vector<double>{0.0}) {
    const double res = std::abs(C.exact(r) - gamma.exact(r) - scale2 * C.exact(r / L));
    out.decomposition_residual = std::max(out.decomposition_residual, res);
  }
  if (out.decomposition_residual > tolerance)
    throw NumericalError("apply_TL_analytic: decomposition residual " + std::to_string(out.decomposition_residual) +
                         " exceeds tolerance; T_L cannot be applied exactly");

  // Convolution with gamma moves the ordering from c to c - gamma; rescaling by S_L must then
  // restore the C-ordering at the new spacing.
  const double c_shift = c_ord - (gradient ? gradient_variance(gamma, a) : gamma.exact(0.0));
  const double lambda = std::pow(L, gradient ? -phi_dim - 1.0 : -phi_dim);
  const double target = gradient ? gradient_variance(C, a / L) : C.exact(0.0);
  const double restored = c_shift / (lambda * lambda);
  if (std::abs(restored - target) > tolerance * std::max(1.0, std::abs(target)) / std::min(1.0, a * a))
    throw NumericalError("apply_TL_analytic: rescaled ordering variance does not match C");
  if (!gradient) {
    // Coefficientwise :(lambda psi)^m:_{c_shift} = lambda^m :psi^m:_{target}.
    const Polynomial lhs = wick_order(p.m, c_shift), rhs = wick_order(p.m, target);
    const double lm = std::pow(lambda, p.m);
    for (std::size_t j = 0; j < lhs.size(); ++j) {
      const double diff = std::abs(lhs[j] * std::pow(lambda, static_cast<double>(j)) - lm * rhs[j]);
      if (diff > 1e-8 * std::max(1.0, std::abs(lm * rhs[j])))
        throw NumericalError("apply_TL_analytic: Wick coefficients do not rescale consistently");
    }
  }

  out.scaling = classify(p.m, p.n_derivs, C.dim());
  out.factor = std::pow(L, out.scaling.exponent);
  out.monomial = p;
  out.monomial.spacing = a / L;
  out.monomial.ordering_variance = target;
  for (Point& x : out.monomial.region) x = scaled_point(x, 1.0 / L);
  return out;
}

double gaussian_TL_value(const WickMonomial& p, double L, const CovarianceKernel& gamma, const FieldFunction& phi) {
  const FieldFunction sphi = scale_field(phi, L, gamma.dim().phi_dim());
  double sum = 0.0;
  if (p.n_derivs == 0) {
    const Polynomial smeared = gaussian_smear(wick_order(p.m, p.ordering_variance), gamma.exact(0.0));
    for (const Point& x : p.region) sum += evaluate_polynomial(smeared, sphi(x));
  } else {
    const double shift = gradient_variance(gamma, p.spacing) - p.ordering_variance;
    for (const Point& x : p.region) {
      const double f0 = sphi(x);
      for (int a = 0; a < p.d; ++a) {
        Point y = x;
        y[a] += p.spacing;
        const double q = (sphi(y) - f0) / p.spacing;
        sum += q * q + shift;
      }
    }
  }
  return std::pow(p.spacing, p.d) * sum;
}

Estimate apply_TL_mc(const Functional& F, double L, const CovarianceKernel& gamma, const LatticeGrid& grid,
                     const FieldFunction& phi, std::uint64_t seed, std::size_t count) {
  const int Li = admissible_L(L, "apply_TL_mc");
  require_fluctuation(gamma, Li, "apply_TL_mc");
  for (const Point& x : F.support) grid.site_of(x);
  const TorusSampler sampler(gamma, grid);
  const FieldFunction sphi = scale_field(phi, Li, gamma.dim().phi_dim());
  std::vector<double> obs(count);
  for (std::size_t i = 0; i < count; ++i) {
    const LatticeField zeta = sampler.sample(seed, i);
    obs[i] = F.evaluate([&](const Point& x) { return zeta.at(x) + sphi(x); });
  }
  return mean_estimate(obs);
}

Discrepancy semigroup_check_analytic(const WickMonomial& p, double L, int n, const CovarianceKernel& C,
                                     const CovarianceKernel& gamma_L, const CovarianceKernel& gamma_Ln,
                                     const CovarianceKernel& gamma_Ln1) {
  if (n < 1) throw std::invalid_argument("semigroup_check_analytic: n must be >= 1");
  const double Ln = std::pow(L, n);
  const AnalyticTL inner = apply_TL_analytic(p, Ln, C, gamma_Ln);
  const AnalyticTL outer = apply_TL_analytic(inner.monomial, L, C, gamma_L);
  const AnalyticTL direct = apply_TL_analytic(p, Ln * L, C, gamma_Ln1);
  Discrepancy d;
  d.lhs.value = inner.factor * outer.factor;
  d.rhs.value = direct.factor;
  double mismatch = std::abs(d.lhs.value - d.rhs.value);
  mismatch += std::abs(outer.monomial.spacing - direct.monomial.spacing);
  mismatch += std::abs(outer.monomial.ordering_variance - direct.monomial.ordering_variance);
  for (std::size_t i = 0; i < direct.monomial.region.size(); ++i)
    for (int a = 0; a < 3; ++a) mismatch += std::abs(outer.monomial.region[i][a] - direct.monomial.region[i][a]);
  d.difference = mismatch;
  d.reference = std::pow(L, (n + 1) * direct.scaling.exponent);
  return d;
}

Discrepancy semigroup_check_mc(const Functional& F, int L, int n, const CovarianceKernel& gamma_L,
                               const CovarianceKernel& gamma_Ln, const CovarianceKernel& gamma_Ln1,
                               const LatticeGrid& grid, const FieldFunction& phi, std::uint64_t seed, std::size_t count,
                               std::optional<double> characteristic_t) {
  admissible_L(L, "semigroup_check_mc");
  if (n < 1) throw std::invalid_argument("semigroup_check_mc: n must be >= 1");
  const double Ln = std::pow(L, n), Ln1 = Ln * L;
  require_fluctuation(gamma_L, L, "semigroup_check_mc");
  require_fluctuation(gamma_Ln, Ln, "semigroup_check_mc");
  require_fluctuation(gamma_Ln1, Ln1, "semigroup_check_mc");
  const double phi_dim = gamma_L.dim().phi_dim();
  for (const Point& x : F.support) grid.site_of(scaled_point(x, 1.0 / Ln));

  const TorusSampler s1(gamma_L, grid), s2(gamma_Ln, grid), s3(gamma_Ln1, grid);
  const std::uint64_t seed1 = derive_seed(seed, 1), seed2 = derive_seed(seed, 2), seed3 = derive_seed(seed, 3);
  const double lam_n = std::pow(Ln, -phi_dim);
  const FieldFunction sphi = scale_field(phi, Ln1, phi_dim);
  std::vector<double> composite(count), direct(count);
  for (std::size_t i = 0; i < count; ++i) {
    const LatticeField z1 = s1.sample(seed1, i), z2 = s2.sample(seed2, i), z3 = s3.sample(seed3, i);
    composite[i] = F.evaluate(
        [&](const Point& x) { return z2.at(x) + lam_n * z1.at(scaled_point(x, 1.0 / Ln)) + sphi(x); });
    direct[i] = F.evaluate([&](const Point& x) { return z3.at(x) + sphi(x); });
  }
  Discrepancy d;
  combine(mean_estimate(composite), mean_estimate(direct), d);
  if (characteristic_t) {
    const double t = *characteristic_t;
    const Point& x0 = F.support.at(0);
    d.reference = std::exp(-0.5 * t * t * gamma_Ln1.exact(0.0)) * std::cos(t * sphi(x0));
  }
  return d;
}

Discrepancy invariance_check(const Functional& F, int L, const CovarianceKernel& C, const CovarianceKernel& gamma,
                             const LatticeGrid& grid, std::uint64_t seed, std::size_t count) {
  admissible_L(L, "invariance_check");
  require_fluctuation(gamma, L, "invariance_check");
  const double phi_dim = C.dim().phi_dim();
  auto cov = [&C](double r) { return C.exact(r); };
  std::vector<Point> scaled;
  for (const Point& x : F.support) scaled.push_back(scaled_point(x, 1.0 / L));
  const PointSetSampler coarse(cov, scaled), fine(cov, F.support);
  const TorusSampler zeta_sampler(gamma, grid);
  const double lambda = std::pow(static_cast<double>(L), -phi_dim);
  const std::uint64_t s_phi = derive_seed(seed, 11), s_zeta = derive_seed(seed, 12), s_direct = derive_seed(seed, 13);
  std::vector<double> lhs(count), rhs(count);
  for (std::size_t i = 0; i < count; ++i) {
    const FieldFunction phi = coarse.sample_function(s_phi, i);
    const LatticeField zeta = zeta_sampler.sample(s_zeta, i);
    lhs[i] = F.evaluate([&](const Point& x) { return zeta.at(x) + lambda * phi(scaled_point(x, 1.0 / L)); });
    rhs[i] = F.evaluate(fine.sample_function(s_direct, i));
  }
  Discrepancy d;
  combine(mean_estimate(lhs), mean_estimate(rhs), d);
  return d;
}

Discrepancy contraction_check(const Functional& F, const Functional& TF, const CovarianceKernel& C, std::uint64_t seed,
                              std::size_t count) {
  std::vector<Point> pts = F.support;
  for (const Point& x : TF.support) {
    bool seen = false;
    for (const Point& y : pts)
      if (std::abs(x[0] - y[0]) < 1e-12 && std::abs(x[1] - y[1]) < 1e-12 && std::abs(x[2] - y[2]) < 1e-12) seen = true;
    if (!seen) pts.push_back(x);
  }
  const PointSetSampler sampler([&C](double r) { return C.exact(r); }, pts);
  std::vector<double> tf2(count), f2(count), diff(count);
  for (std::size_t i = 0; i < count; ++i) {
    const FieldFunction phi = sampler.sample_function(seed, i);
    const double f = F.evaluate(phi), t = TF.evaluate(phi);
    tf2[i] = t * t;
    f2[i] = f * f;
    diff[i] = tf2[i] - f2[i];
  }
  Discrepancy d;
  d.lhs = mean_estimate(tf2);
  d.rhs = mean_estimate(f2);
  const Estimate paired = mean_estimate(diff);
  d.difference = paired.value;
  d.std_error = paired.std_error;
  d.zscore = paired.std_error > 0.0 ? paired.value / paired.std_error : 0.0;
  return d;
}

Functional analytic_TL_functional(const WickMonomial& p, double L, const CovarianceKernel& C,
                                  const CovarianceKernel& gamma) {
  const AnalyticTL t = apply_TL_analytic(p, L, C, gamma);
  return Functional{"T_L " + monomial_functional(p).name, [t](const FieldFunction& phi) { return t.evaluate(phi); },
                    t.monomial.support(), std::nullopt};
}

Functional characteristic_TL_functional(double t, const Point& x0, double L, const CovarianceKernel& gamma) {
  require_fluctuation(gamma, L, "characteristic_TL_functional");
  const double damp = std::exp(-0.5 * t * t * gamma.exact(0.0));
  const double lambda = std::pow(L, -gamma.dim().phi_dim());
  const Point y = scaled_point(x0, 1.0 / L);
  return Functional{"T_L cos(t phi(x0))",
                    [=](const FieldFunction& phi) { return damp * std::cos(t * lambda * phi(y)); }, {y}, std::nullopt};
}

void write_report_csv(std::ostream& os, const std::vector<ReportRow>& rows) {
  os << "check,name,value,stderr,reference,zscore\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g", r.value, r.std_error, r.reference, r.zscore);
    os << r.check << "," << r.name << "," << buf << "\n";
  }
}

}  // namespace erg
