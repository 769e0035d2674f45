#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "erg/sampling.hpp"

using namespace erg;

namespace {

std::shared_ptr<const MollifierU> mollifier(int d) {
  static std::shared_ptr<const MollifierU> cache[4];
  if (!cache[d]) cache[d] = std::make_shared<const MollifierU>(build_mollifier(bump_profile(d), d));
  return cache[d];
}

const FieldDimension dim1(1, 0.25);

}  // namespace

TEST_CASE("lattice indexing wraps periodically") {
  const LatticeGrid g(2, 8, 0.5);
  CHECK(g.size() == 64);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.index(g.coords(i)) == i);
  CHECK(g.index({-1, 9, 0}) == g.index({7, 1, 0}));
  CHECK(g.displacement_length({7, 0, 0}) == doctest::Approx(0.5));
  CHECK(g.site_of({1.5, 2.0, 0.0}) == g.index({3, 4, 0}));
  CHECK_THROWS_AS(g.site_of({0.3, 0.0, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(LatticeGrid(4, 8, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(g.require_no_wrap(2.0), std::invalid_argument);
  CHECK_NOTHROW(g.require_no_wrap(1.99));
}

TEST_CASE("zero kernel gives identically zero samples") {
  const LatticeGrid g(1, 16, 0.25);
  const auto z = zero_kernel(dim1, 1.0, RadialGrid::covering(1.0, 5));
  const auto e = sample_gaussian(z, g, 3, 10);
  for (const auto& f : e.samples)
    for (double v : f.values) CHECK(v == 0.0);
}

TEST_CASE("FFT eigenvalues agree with a dense circulant eigendecomposition") {
  const LatticeGrid g(2, 10, 0.5);
  const auto G = fluctuation_covariance(mollifier(2), FieldDimension(2, 0.5), 2.0);
  const TorusSampler s(G, g);
  const auto n = static_cast<Eigen::Index>(g.size());
  Eigen::MatrixXd dense(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) dense(i, j) = G.exact(g.distance(i, j));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(dense, Eigen::EigenvaluesOnly);
  CHECK(std::abs(solver.eigenvalues().minCoeff() - s.min_eigenvalue()) < 1e-10);
  for (Eigen::Index i = 0; i < n; ++i) CHECK(s.covariance()[i] == doctest::Approx(dense(0, i)).epsilon(1e-14));
}

TEST_CASE("samples reproduce the fluctuation covariance") {
  const LatticeGrid g(1, 64, 0.25);
  const auto G = fluctuation_covariance(mollifier(1), dim1, 2.0);
  const auto e = sample_gaussian(G, g, 11, 10000);
  const auto c0 = empirical_covariance(e, {0, 0, 0});
  CHECK(std::abs(c0.zscore(G(0.0))) <= 3.0);
  for (int k : {1, 3, 5}) CHECK(std::abs(empirical_covariance(e, {k, 0, 0}).zscore(G(0.25 * k))) <= 3.0);
  // beyond the range the samples decorrelate
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> far(8, 56);
  for (int t = 0; t < 20; ++t) {
    const int k = far(rng);
    CHECK(std::abs(empirical_covariance(e, {k, 0, 0}).zscore(0.0)) <= 3.0);
  }
}

TEST_CASE("statistical error shrinks like one over root count") {
  const LatticeGrid g(1, 32, 0.25);
  const auto G = fluctuation_covariance(mollifier(1), dim1, 2.0);
  const auto small = empirical_covariance(sample_gaussian(G, g, 1, 2000), {1, 0, 0});
  const auto large = empirical_covariance(sample_gaussian(G, g, 2, 8000), {1, 0, 0});
  const double ratio = small.std_error / large.std_error;
  CHECK(ratio > 1.7);
  CHECK(ratio < 2.3);
}

TEST_CASE("sampling is bit-exact per seed") {
  const LatticeGrid g(2, 8, 0.5);
  const auto G = fluctuation_covariance(mollifier(2), FieldDimension(2, 0.5), 1.5);
  const auto a = sample_gaussian(G, g, 42, 5);
  const auto b = sample_gaussian(G, g, 42, 5);
  const auto c = sample_gaussian(G, g, 43, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(a.samples[i].values == b.samples[i].values);
    CHECK(a.samples[i].values != c.samples[i].values);
  }
}

TEST_CASE("non positive definite tables are rejected with their eigenvalue") {
  const LatticeGrid g(1, 32, 0.25);
  // An indicator of [0, 1) is not positive definite on this lattice.
  RadialGrid rg = RadialGrid::covering(1.6, 17);
  std::vector<double> v(rg.points);
  for (std::size_t i = 0; i < rg.points; ++i) v[i] = rg.r(i) < 1.0 ? 1.0 : 0.0;
  const CovarianceKernel box(KernelKind::fluctuation, dim1, 2.0, -1, 1.5, rg, v);
  try {
    TorusSampler s(box, g);
    FAIL("expected NotPositiveDefinite");
  } catch (const NotPositiveDefinite& ex) {
    CHECK(ex.min_eigenvalue() < 0.0);
  }
  const auto G = fluctuation_covariance(mollifier(1), dim1, 10.0);
  CHECK_THROWS_AS(TorusSampler(G, g), std::invalid_argument);
}

TEST_CASE("multiscale assembly") {
  const double L = 2.0;
  const LatticeGrid g(1, 64, 0.5);
  std::vector<FieldEnsemble> scales;
  for (int n = 0; n <= 2; ++n)
    scales.push_back(sample_gaussian(rescaled_fluctuation(mollifier(1), dim1, L, n), g, 100 + n, 10000, n));
  const auto single = multiscale_assemble({scales[0]});
  CHECK(single.samples[7].values == scales[0].samples[7].values);
  const auto phi = multiscale_assemble(scales);
  double expected = 0.0;
  for (int n = 0; n <= 2; ++n) expected += rescaled_fluctuation(mollifier(1), dim1, L, n).at_origin();
  CHECK(std::abs(empirical_covariance(phi, {0, 0, 0}).zscore(expected)) <= 3.0);
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> any(0, 63);
  for (int t = 0; t < 10; ++t) {
    const int k = any(rng);
    double ref = 0.0;
    for (int n = 0; n <= 2; ++n) ref += rescaled_fluctuation(mollifier(1), dim1, L, n).exact(g.displacement_length({k, 0, 0}));
    CHECK(std::abs(empirical_covariance(phi, {k, 0, 0}).zscore(ref)) <= 3.0);
  }
  CHECK(std::abs(empirical_covariance(scales[0], scales[1], {0, 0, 0}).zscore(0.0)) <= 3.0);
  CHECK_THROWS_AS(multiscale_assemble({scales[0], sample_gaussian(rescaled_fluctuation(mollifier(1), dim1, L, 0), LatticeGrid(1, 32, 0.5), 1, 10000)}),
                  std::invalid_argument);
}

TEST_CASE("slow variation probability respects the Chebyshev bound") {
  const double L = 2.0;
  const LatticeGrid g(1, 64, 0.25);
  const auto G1 = rescaled_fluctuation(mollifier(1), dim1, L, 1);
  const auto e = sample_gaussian(G1, g, 77, 10000, 1);
  const auto sv = slow_variation_probability(e, G1, 1.0, {8, 0, 0});
  CHECK(sv.probability.value <= sv.bound + 3.0 * sv.probability.std_error);
  CHECK(slow_variation_probability(e, G1, 1e6, {8, 0, 0}).probability.value == 0.0);
  CHECK(slow_variation_probability(e, G1, 1e-3, {0, 0, 0}).probability.value == 0.0);
  CHECK_THROWS_AS(slow_variation_probability(e, G1, 0.0, {1, 0, 0}), std::invalid_argument);
}

TEST_CASE("point set sampler reproduces C on scattered points") {
  const auto C = unit_cutoff_covariance(mollifier(2), FieldDimension(2, 0.5), RadialGrid::covering(4.0, 65));
  std::vector<Point> pts{{0, 0, 0}, {0.5, 0, 0}, {1.5, 1.0, 0}, {3.0, 0.2, 0}};
  const PointSetSampler s([&](double r) { return C.exact(r); }, pts);
  std::vector<double> prod01, prod03;
  for (std::uint64_t k = 0; k < 10000; ++k) {
    const auto v = s.sample(3, k);
    prod01.push_back(v[0] * v[1]);
    prod03.push_back(v[0] * v[3]);
  }
  CHECK(std::abs(mean_estimate(prod01).zscore(C.exact(0.5))) <= 3.0);
  CHECK(std::abs(mean_estimate(prod03).zscore(C.exact(std::hypot(3.0, 0.2)))) <= 3.0);
  const auto f = s.sample_function(3, 0);
  CHECK(f(pts[2]) == s.sample(3, 0)[2]);
  CHECK_THROWS_AS(f({9, 9, 0}), std::invalid_argument);
}

TEST_CASE("ensemble persistence round trip") {
  const LatticeGrid g(2, 8, 0.5);
  const auto G = fluctuation_covariance(mollifier(2), FieldDimension(2, 0.5), 1.5);
  const auto e = sample_gaussian(G, g, 5, 3, 0);
  const auto dir = std::filesystem::temp_directory_path() / "erg_test_fields";
  std::filesystem::create_directories(dir);
  write_ensemble(dir / "zeta0", e, G);
  const auto back = read_ensemble(dir / "zeta0.json");
  CHECK(back.seed == 5);
  CHECK(back.grid == g);
  CHECK(back.kernel_id == e.kernel_id);
  REQUIRE(back.count() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(back.samples[i].values == e.samples[i].values);
  CHECK(back.samples[0].scale_index == 0);
  std::filesystem::remove_all(dir);
}
