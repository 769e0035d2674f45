#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>
#include <sstream>

#include "erg/rg_map.hpp"

using namespace erg;

namespace {

std::shared_ptr<const MollifierU> mollifier(int d) {
  static std::shared_ptr<const MollifierU> cache[8];
  if (!cache[d]) cache[d] = std::make_shared<const MollifierU>(build_mollifier(bump_profile(d), d));
  return cache[d];
}

struct Setup1d {
  FieldDimension dim{1, 0.25};
  double a = 0.25;
  LatticeGrid grid{1, 64, 0.25};
  CovarianceKernel C = unit_cutoff_covariance(mollifier(1), dim, RadialGrid::covering(8.0, 65));
  CovarianceKernel G2 = fluctuation_covariance(mollifier(1), dim, 2.0);
  std::vector<Point> region{{1.0, 0, 0}, {1.25, 0, 0}, {1.5, 0, 0}, {2.0, 0, 0}};
};

const Setup1d& setup() {
  static const Setup1d s;
  return s;
}

// Monic orthogonal polynomials for the N(0, c) inner product by Gram-Schmidt on 1, x, x^2, ...
std::vector<Polynomial> gram_schmidt(int up_to, double c) {
  auto inner = [c](const Polynomial& p, const Polynomial& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (std::size_t j = 0; j < q.size(); ++j) {
        const int k = static_cast<int>(i + j);
        if (k % 2 == 0) {
          double m = 1.0;
          for (int t = k - 1; t > 1; t -= 2) m *= t;
          s += p[i] * q[j] * m * std::pow(c, k / 2);
        }
      }
    return s;
  };
  std::vector<Polynomial> basis;
  for (int m = 0; m <= up_to; ++m) {
    Polynomial p(m + 1, 0.0);
    p[m] = 1.0;
    for (const auto& q : basis) {
      const double coef = inner(p, q) / inner(q, q);
      for (std::size_t j = 0; j < q.size(); ++j) p[j] -= coef * q[j];
    }
    basis.push_back(p);
  }
  return basis;
}

}  // namespace

TEST_CASE("Wick polynomials") {
  const double c = 0.7;
  const auto p2 = wick_order(2, c);
  CHECK(p2 == Polynomial{-c, 0.0, 1.0});
  const auto p4 = wick_order(4, c);
  CHECK(p4[0] == doctest::Approx(3 * c * c));
  CHECK(p4[2] == doctest::Approx(-6 * c));
  CHECK(p4[4] == 1.0);
  CHECK(p4[1] == 0.0);
  CHECK(p4[3] == 0.0);
  for (double var : {0.3, 1.0, 2.5}) {
    const auto gs = gram_schmidt(8, var);
    for (int m = 1; m <= 8; ++m) {
      const auto w = wick_order(m, var);
      for (int j = 0; j <= m; ++j) CHECK(std::abs(w[j] - gs[m][j]) <= 1e-12 * std::max(1.0, std::abs(gs[m][j])));
    }
  }
}

TEST_CASE("Wick monomials have zero mean under the ordering Gaussian") {
  const double c = 1.3;
  std::mt19937_64 rng(1);
  for (int m = 1; m <= 6; ++m) {
    std::vector<double> obs(200000);
    const auto w = wick_order(m, c);
    for (auto& o : obs) o = evaluate_polynomial(w, std::sqrt(c) * standard_normal(rng));
    CHECK(std::abs(mean_estimate(obs).zscore(0.0)) <= 3.0);
  }
}

TEST_CASE("reordering Wick coefficients") {
  const Polynomial w4{0, 0, 0, 0, 1};
  CHECK(reorder_wick(w4, 0.4, 0.4) == w4);
  const auto r2 = reorder_wick({0, 0, 1}, 0.4, 1.1);
  CHECK(r2[2] == 1.0);
  CHECK(r2[0] == doctest::Approx(1.1 - 0.4));
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const double c1 = 0.2 + 2.0 * uniform01(rng), c2 = 0.2 + 2.0 * uniform01(rng);
    Polynomial w(7);
    for (auto& x : w) x = standard_normal(rng);
    const auto lhs = wick_to_power(w, c1), rhs = wick_to_power(reorder_wick(w, c1, c2), c2);
    for (std::size_t j = 0; j < w.size(); ++j) CHECK(lhs[j] == doctest::Approx(rhs[j]).epsilon(1e-12));
    const auto back = power_to_wick(lhs, c1);
    for (std::size_t j = 0; j < w.size(); ++j) CHECK(back[j] == doctest::Approx(w[j]).epsilon(1e-10).scale(1.0));
  }
}

TEST_CASE("Gaussian shift of a Wick monomial lowers its ordering variance") {
  const double c1 = 1.7, gamma = 0.6, phi = 0.8;
  const auto target = evaluate_polynomial(wick_order(4, c1 - gamma), phi);
  CHECK(evaluate_polynomial(gaussian_smear(wick_order(4, c1), gamma), phi) == doctest::Approx(target).epsilon(1e-13));
  std::mt19937_64 rng(8);
  const auto w = wick_order(4, c1);
  std::vector<double> obs(1000000);
  for (auto& o : obs) o = evaluate_polynomial(w, phi + std::sqrt(gamma) * standard_normal(rng));
  CHECK(std::abs(mean_estimate(obs).zscore(target)) <= 3.0);
}

TEST_CASE("scaling classes") {
  auto s = classify(2, 0, FieldDimension(3, 0.5));
  CHECK(s.exponent == 2.0);
  CHECK(s.kind == ScalingClassKind::relevant);
  s = classify(4, 0, FieldDimension(4, 1.0));
  CHECK(s.kind == ScalingClassKind::marginal);
  s = classify(4, 0, FieldDimension::epsilon_model(0.1));
  CHECK(s.exponent == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(s.kind == ScalingClassKind::relevant);
  s = classify(4, 0, FieldDimension(6, 2.0));
  CHECK(s.kind == ScalingClassKind::irrelevant);
  CHECK(classify(2, 2, FieldDimension(3, 0.5)).exponent == 0.0);
  CHECK_THROWS_AS(classify(2, 1, FieldDimension(3, 0.5)), std::invalid_argument);
}

TEST_CASE("analytic T_L prefactors in several dimensions") {
  struct Case {
    int m, d;
    double phi, expected_exponent;
  };
  for (const Case& cs : {Case{2, 3, 0.5, 2.0}, Case{4, 4, 1.0, 0.0}, Case{4, 6, 2.0, -2.0}}) {
    const FieldDimension dim(cs.d, cs.phi);
    const RadialGrid rg = RadialGrid::covering(1.0, 3);
    const auto C = unit_cutoff_covariance(mollifier(cs.d), dim, rg);
    for (double L : {2.0, 3.5}) {
      const auto G = fluctuation_covariance(mollifier(cs.d), dim, L, rg);
      const auto p = power_monomial(cs.m, {{0, 0, 0}}, 1.0, C);
      const auto t = apply_TL_analytic(p, L, C, G);
      CHECK(t.factor == doctest::Approx(std::pow(L, cs.expected_exponent)).epsilon(1e-12));
      CHECK(t.monomial.spacing == doctest::Approx(1.0 / L));
    }
  }
}

TEST_CASE("analytic T_L agrees with exact Gaussian integration and Monte Carlo") {
  const auto& s = setup();
  const FieldFunction phi = random_smooth_field(21, 1, 3, 4.0, 1.5);
  for (int m = 1; m <= 4; ++m) {
    const auto p = power_monomial(m, s.region, s.a, s.C);
    const auto t = apply_TL_analytic(p, 2.0, s.C, s.G2);
    const double analytic = t.evaluate(phi);
    CHECK(gaussian_TL_value(p, 2.0, s.G2, phi) == doctest::Approx(analytic).epsilon(1e-12).scale(1.0));
    const auto mc = apply_TL_mc(monomial_functional(p), 2.0, s.G2, s.grid, phi, 100 + m, 10000);
    CHECK(std::abs(mc.zscore(analytic)) <= 3.0);
  }
  const auto grad = gradient_monomial(s.region, s.a, s.C);
  const auto tg = apply_TL_analytic(grad, 2.0, s.C, s.G2);
  CHECK(tg.factor == doctest::Approx(std::pow(2.0, 1 - 0.5 - 2)).epsilon(1e-12));
  CHECK(gaussian_TL_value(grad, 2.0, s.G2, phi) == doctest::Approx(tg.evaluate(phi)).epsilon(1e-9));
  const auto mc = apply_TL_mc(monomial_functional(grad), 2.0, s.G2, s.grid, phi, 7, 10000);
  CHECK(std::abs(mc.zscore(tg.evaluate(phi))) <= 3.0);
}

TEST_CASE("Monte Carlo T_L on constants and on the quadratic monomial at zero field") {
  const auto& s = setup();
  const auto one = apply_TL_mc(constant_functional(1.0), 2.0, s.G2, s.grid, [](const Point&) { return 0.0; }, 1, 100);
  CHECK(one.value == 1.0);
  CHECK(one.std_error == 0.0);
  const auto p2 = power_monomial(2, s.region, s.a, s.C);
  const auto zero = [](const Point&) { return 0.0; };
  const double analytic = apply_TL_analytic(p2, 2.0, s.C, s.G2).evaluate(zero);
  // The tadpole does not vanish pointwise: it is -|X| a^d S_L C(0).
  CHECK(analytic == doctest::Approx(-4 * s.a * std::pow(2.0, -0.5) * s.C.at_origin()).epsilon(1e-12));
  CHECK(std::abs(apply_TL_mc(monomial_functional(p2), 2.0, s.G2, s.grid, zero, 2, 10000).zscore(analytic)) <= 3.0);
}

TEST_CASE("T_L refuses inadmissible inputs") {
  const auto& s = setup();
  const auto p = power_monomial(2, s.region, s.a, s.C);
  const FieldFunction phi = random_smooth_field(1, 1);
  CHECK_THROWS_AS(apply_TL_mc(monomial_functional(p), 2.5, s.G2, s.grid, phi, 1, 10), std::invalid_argument);
  CHECK_THROWS_AS(apply_TL_analytic(p, 3.0, s.C, s.G2), std::invalid_argument);
  auto bad = p;
  bad.ordering_variance *= 1.1;
  CHECK_THROWS_AS(apply_TL_analytic(bad, 2.0, s.C, s.G2), std::invalid_argument);
  std::vector<double> v = s.G2.values();
  for (double& x : v) x *= 1.001;
  const CovarianceKernel fake(KernelKind::fluctuation, s.dim, 2.0, -1, 2.0, s.G2.grid(), v);
  CHECK_THROWS_AS(apply_TL_analytic(p, 2.0, s.C, fake), NumericalError);
  auto off = monomial_functional(power_monomial(2, {{0.3, 0, 0}}, s.a, s.C));
  CHECK_THROWS_AS(apply_TL_mc(off, 2.0, s.G2, s.grid, phi, 1, 10), std::invalid_argument);
}

TEST_CASE("semigroup property") {
  const auto& s = setup();
  for (int n : {1, 2}) {
    const double Ln = std::pow(2.0, n);
    const auto GLn = fluctuation_covariance(mollifier(1), s.dim, Ln);
    const auto GLn1 = fluctuation_covariance(mollifier(1), s.dim, 2.0 * Ln);
    for (int m = 1; m <= 4; ++m) {
      const auto d = semigroup_check_analytic(power_monomial(m, s.region, s.a, s.C), 2.0, n, s.C, s.G2, GLn, GLn1);
      CHECK(d.difference <= 1e-12 * std::abs(d.rhs.value));
      CHECK(d.lhs.value == doctest::Approx(*d.reference).epsilon(1e-12));
    }
    const LatticeGrid grid(1, 128, 0.25);
    const Point x0{Ln * 1.0, 0, 0};
    const double t = 1.3;
    const FieldFunction phi = random_smooth_field(4, 1);
    const auto d = semigroup_check_mc(characteristic_functional(t, x0), 2, n, s.G2, GLn, GLn1, grid, phi, 40 + n, 10000, t);
    CHECK(std::abs(d.zscore) <= 3.0);
    CHECK(std::abs(d.lhs.zscore(*d.reference)) <= 3.0);
    CHECK(std::abs(d.rhs.zscore(*d.reference)) <= 3.0);
    const auto c = semigroup_check_mc(constant_functional(2.0), 2, n, s.G2, GLn, GLn1, grid, phi, 1, 50);
    CHECK(c.difference == 0.0);
  }
}

TEST_CASE("mu_C is invariant under T_L") {
  const auto& s = setup();
  const Point x0{2.0, 0, 0};
  const double c0 = s.C.at_origin();
  const auto d2 = invariance_check(point_power_functional(x0, 2), 2, s.C, s.G2, s.grid, 5, 10000);
  CHECK(std::abs(d2.zscore) <= 3.0);
  CHECK(std::abs(d2.lhs.zscore(c0)) <= 3.0);
  CHECK(std::abs(d2.rhs.zscore(c0)) <= 3.0);
  const auto d4 = invariance_check(point_power_functional(x0, 4), 2, s.C, s.G2, s.grid, 6, 10000);
  CHECK(std::abs(d4.zscore) <= 3.0);
  CHECK(std::abs(d4.lhs.zscore(3 * c0 * c0)) <= 3.0);
  const auto dc = invariance_check(constant_functional(1.5), 2, s.C, s.G2, s.grid, 7, 100);
  CHECK(dc.difference == 0.0);
}

TEST_CASE("T_L contracts in L2(mu_C)") {
  const auto& s = setup();
  for (int m = 1; m <= 4; ++m) {
    const auto p = power_monomial(m, s.region, s.a, s.C);
    const auto d = contraction_check(monomial_functional(p), analytic_TL_functional(p, 2.0, s.C, s.G2), s.C, 9, 10000);
    CHECK(d.difference <= 3.0 * d.std_error);
  }
  const Point x0{1.0, 0, 0};
  const auto d = contraction_check(characteristic_functional(2.0, x0), characteristic_TL_functional(2.0, x0, 2.0, s.G2), s.C, 3, 10000);
  CHECK(d.difference <= 3.0 * d.std_error);
}

TEST_CASE("local potentials are additive over disjoint regions") {
  const auto& s = setup();
  const auto V = LocalPotential::phi4(0.3, -0.2, 0.1, 1, s.a, s.C.at_origin(), gradient_variance(s.C, s.a));
  const FieldFunction phi = random_smooth_field(2, 1);
  const std::vector<Point> X{{0, 0, 0}, {0.25, 0, 0}}, Y{{0.5, 0, 0}, {1.0, 0, 0}};
  std::vector<Point> XY = X;
  XY.insert(XY.end(), Y.begin(), Y.end());
  CHECK(V.evaluate(phi, XY) == doctest::Approx(V.evaluate(phi, X) + V.evaluate(phi, Y)).epsilon(1e-14));
  CHECK(V.g() == 0.3);
  CHECK(V.mu() == -0.2);
  // Plain-power potential: g phi^4 + mu phi^2 at a constant field.
  const auto W = LocalPotential::phi4(0.5, 0.25, 0.0, 1, 1.0);
  CHECK(W.evaluate([](const Point&) { return 2.0; }, {{0, 0, 0}}) == doctest::Approx(0.5 * 16 + 0.25 * 4));
}

TEST_CASE("report CSV layout") {
  std::ostringstream os;
  write_report_csv(os, {{"invariance", "phi^2", 1.0, 0.1, 1.05, -0.5}});
  CHECK(os.str().rfind("check,name,value,stderr,reference,zscore\ninvariance,phi^2,1,", 0) == 0);
}
