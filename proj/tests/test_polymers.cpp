#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>

#include "erg/polymer.hpp"
#include "erg/rg_map.hpp"

using namespace erg;

namespace {

constexpr Mask bit(int b) { return Mask{1} << b; }

// Connectivity by explicit coordinates, independent of BlockLattice::adjacent.
bool oracle_connected(const BlockLattice& lat, Mask X) {
  if (!X) return false;
  std::vector<int> blocks;
  for (int b = 0; b < lat.count(); ++b)
    if (X & bit(b)) blocks.push_back(b);
  std::vector<bool> seen(blocks.size(), false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  while (!stack.empty()) {
    const auto i = stack.back();
    stack.pop_back();
    for (std::size_t j = 0; j < blocks.size(); ++j) {
      if (seen[j]) continue;
      const auto a = lat.coords(blocks[i]), c = lat.coords(blocks[j]);
      if (std::abs(a[0] - c[0]) <= 1 && std::abs(a[1] - c[1]) <= 1 && std::abs(a[2] - c[2]) <= 1) {
        seen[j] = true;
        stack.push_back(j);
      }
    }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool s) { return s; });
}

bool oracle_touch(const BlockLattice& lat, Mask X, Mask Y) {
  for (int a = 0; a < lat.count(); ++a)
    for (int b = 0; b < lat.count(); ++b)
      if ((X & bit(a)) && (Y & bit(b))) {
        const auto p = lat.coords(a), q = lat.coords(b);
        if (std::abs(p[0] - q[0]) <= 1 && std::abs(p[1] - q[1]) <= 1 && std::abs(p[2] - q[2]) <= 1) return true;
      }
  return false;
}

bool compatible(const BlockLattice& lat, Mask X, Mask Y, Disjointness p) {
  if (X & Y) return false;
  return p == Disjointness::blocks || !oracle_touch(lat, X, Y);
}

std::vector<Mask> oracle_polymers(const BlockLattice& lat, Mask volume, int cap) {
  std::vector<Mask> out;
  for (Mask X = 1; X <= lat.all(); ++X)
    if (!(X & ~volume) && std::popcount(X) <= cap && oracle_connected(lat, X)) out.push_back(X);
  return out;
}

// Ordered sum over tuples of distinct compatible polymers with the 1/N! factor.
double ordered_oracle(const BlockLattice& lat, Mask volume, const std::vector<double>& vblock,
                      const std::map<Mask, double>& K, Disjointness p) {
  std::vector<std::pair<Mask, double>> polys(K.begin(), K.end());
  double total = 0.0;
  std::vector<Mask> chosen;
  auto rec = [&](auto&& self, Mask used, double prod, double fact) -> void {
    double v = 0.0;
    for (int b = 0; b < lat.count(); ++b)
      if ((volume & bit(b)) && !(used & bit(b))) v += vblock[b];
    total += std::exp(-v) * prod / fact;
    for (const auto& [X, k] : polys) {
      if (X & ~volume) continue;
      bool ok = true;
      for (Mask Y : chosen) ok = ok && compatible(lat, X, Y, p);
      if (!ok) continue;
      chosen.push_back(X);
      self(self, used | X, prod * k, fact * static_cast<double>(chosen.size()));
      chosen.pop_back();
    }
  };
  rec(rec, 0, 1.0, 1.0);
  return total;
}

struct Fluct {
  FieldDimension dim{1, 0.25};
  LatticeGrid grid{1, 64, 0.25};
  std::shared_ptr<const MollifierU> u = std::make_shared<const MollifierU>(build_mollifier(bump_profile(1), 1));
  CovarianceKernel G2 = fluctuation_covariance(u, dim, 2.0);
  TorusSampler sampler{G2, grid};
};

const Fluct& fluct() {
  static const Fluct f;
  return f;
}

FieldFunction lattice_fn(const LatticeField& f) {
  return [&f](const Point& x) { return f.at(x); };
}

PolymerActivity function_activity(std::function<double(Mask, const FieldFunction&)> f, int cap,
                                  Disjointness p = Disjointness::blocks) {
  return PolymerActivity{std::move(f), cap, p};
}

}  // namespace

TEST_CASE("polymer enumeration") {
  const BlockLattice two(1, {2, 1, 1}, 0.5), three(1, {3, 1, 1}, 0.5), sq(2, {2, 2, 1}, 0.5);
  CHECK(enumerate_polymers(two, two.all(), 5).size() == 3);
  const auto p3 = enumerate_polymers(three, three.all(), 3);
  CHECK(p3.size() == 6);
  CHECK(std::find(p3.begin(), p3.end(), Mask{0b101}) == p3.end());
  CHECK(enumerate_polymers(sq, sq.all(), 4).size() == 15);
  for (const BlockLattice& lat : {BlockLattice(2, {3, 3, 1}, 0.5), BlockLattice(2, {4, 2, 1}, 0.5),
                                  BlockLattice(1, {6, 1, 1}, 0.5), BlockLattice(3, {2, 2, 2}, 0.5)}) {
    for (int cap : {1, 3, 16}) {
      auto got = enumerate_polymers(lat, lat.all(), cap);
      std::sort(got.begin(), got.end());
      CHECK(got == oracle_polymers(lat, lat.all(), cap));
    }
    const Mask sub = lat.all() & 0b1011011;
    auto got = enumerate_polymers(lat, sub, 16);
    std::sort(got.begin(), got.end());
    CHECK(got == oracle_polymers(lat, sub, 16));
  }
}

TEST_CASE("L-closure") {
  const BlockLattice lat(2, {4, 4, 1}, 0.5);
  CHECK(l_closure(lat, bit(lat.index({3, 2, 0})), 2) == bit(lat.coarsen(2).index({1, 1, 0})));
  CHECK(l_closure(lat, bit(lat.index({1, 0, 0})) | bit(lat.index({2, 0, 0})), 2) == 0b11);
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    const Mask X = rng() & lat.all();
    if (!X) continue;
    Mask best = 0;
    int best_size = 99;
    for (Mask U = 0; U < 16; ++U) {
      if (expand_l_blocks(lat, U, 2) != (expand_l_blocks(lat, U, 2) | X)) continue;
      if (std::popcount(U) < best_size) {
        best_size = std::popcount(U);
        best = U;
      }
    }
    CHECK(l_closure(lat, X, 2) == best);
  }
  CHECK_THROWS_AS(l_closure(BlockLattice(1, {3, 1, 1}, 0.5), 1, 2), std::invalid_argument);
  CHECK(is_l_polymer(lat, expand_l_blocks(lat, 0b1001, 2), 2));
  CHECK_FALSE(is_l_polymer(lat, 0b1, 2));
}

TEST_CASE("partition density examples") {
  const BlockLattice lat(1, {2, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.2, 0.3, 0.0, 1, 0.25));
  const FieldFunction phi = random_smooth_field(3, 1);
  CHECK(partition_density(V, zero_activity(), lat.all(), phi) == doctest::Approx(std::exp(-V.value(lat.all(), phi))).epsilon(1e-14));
  const BlockLattice one(1, {1, 1, 1}, 0.25);
  const BlockPotential V1(one, LocalPotential::phi4(0.2, 0.3, 0.0, 1, 0.25));
  const auto k = function_activity([](Mask, const FieldFunction&) { return 0.37; }, 1);
  CHECK(partition_density(V1, k, 1, phi) == doctest::Approx(std::exp(-V1.value(Mask{1}, phi)) + 0.37).epsilon(1e-14));
  const auto K = function_activity(
      [](Mask X, const FieldFunction& f) { return 0.1 * X + f(Point{0.5, 0, 0}); }, 2);
  const double k1 = K(lat, 1, phi), k2 = K(lat, 2, phi), k12 = K(lat, 3, phi);
  const double e1 = std::exp(-V.block_value(0, phi)), e2 = std::exp(-V.block_value(1, phi));
  CHECK(partition_density(V, K, lat.all(), phi) == doctest::Approx(e1 * e2 + k1 * e2 + k2 * e1 + k1 * k2 + k12).epsilon(1e-14));
}

TEST_CASE("resummation matches the ordered oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  const std::vector<BlockLattice> vols{BlockLattice(1, {1, 1, 1}, 0.5), BlockLattice(1, {2, 1, 1}, 0.5),
                                       BlockLattice(1, {3, 1, 1}, 0.5), BlockLattice(1, {4, 1, 1}, 0.5),
                                       BlockLattice(2, {2, 1, 1}, 0.5), BlockLattice(2, {1, 3, 1}, 0.5),
                                       BlockLattice(2, {2, 2, 1}, 0.5)};
  int instances = 0;
  for (int t = 0; t < 100; ++t) {
    const BlockLattice& lat = vols[t % vols.size()];
    std::vector<double> vb(lat.count());
    for (auto& v : vb) v = U(rng);
    std::map<Mask, double> K;
    for (Mask X : oracle_polymers(lat, lat.all(), 4)) K[X] = U(rng);
    for (Disjointness p : {Disjointness::blocks, Disjointness::closed}) {
      std::vector<double> boltz(lat.count());
      for (int b = 0; b < lat.count(); ++b) boltz[b] = std::exp(-vb[b]);
      const double z = resum(lat, lat.all(), boltz, [&](Mask X) { return K.at(X); }, 4, p);
      const double o = ordered_oracle(lat, lat.all(), vb, K, p);
      CHECK(std::abs(z - o) <= 1e-12 * std::max(1.0, std::abs(o)));
    }
    ++instances;
  }
  CHECK(instances == 100);
}

TEST_CASE("activities are local in the field") {
  const BlockLattice lat(1, {3, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.3, -0.1, 0.0, 1, 0.25));
  const auto K = function_activity([&](Mask X, const FieldFunction& f) { return 0.2 * std::exp(-V.value(X, f)); }, 3);
  const FieldFunction phi = random_smooth_field(9, 1);
  for (Mask X : enumerate_polymers(lat, lat.all(), 3)) {
    const auto sites = lat.sites(X);
    const FieldFunction bumped = [&](const Point& x) {
      for (const Point& s : sites)
        if (std::abs(s[0] - x[0]) < 1e-12) return phi(x);
      return phi(x) + 5.0;
    };
    CHECK(K(lat, X, bumped) == K(lat, X, phi));
  }
  CHECK(K(lat, 0b101, phi) == 0.0);
}

TEST_CASE("fluctuation factor P") {
  const BlockLattice lat(1, {2, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.2, 0.1, 0.0, 1, 0.25));
  const BlockPotential Z(lat, LocalPotential::phi4(0.0, 0.0, 0.0, 1, 0.25));
  const FieldFunction phi = random_smooth_field(1, 1), zeta = random_smooth_field(2, 1, 3, 1.0, 0.3);
  const FieldFunction zero = [](const Point&) { return 0.0; };
  CHECK(p_fluctuation(V, V, 0, zero, phi) == 0.0);
  CHECK(p_fluctuation(Z, Z, 1, zeta, phi) == 0.0);
  double v = 0.0;
  for (const Point& x : lat.sites(1)) {
    const double s = zeta(x) + phi(x);
    v += 0.25 * (0.2 * std::pow(s, 4) + 0.1 * s * s);
  }
  CHECK(p_fluctuation(V, Z, 0, zeta, phi) == doctest::Approx(std::exp(-v) - 1.0).epsilon(1e-14));
}

TEST_CASE("B map") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  struct Geo {
    BlockLattice lat;
    int L;
  };
  for (const Geo& g : {Geo{BlockLattice(1, {2, 1, 1}, 0.25), 2}, Geo{BlockLattice(1, {3, 1, 1}, 0.25), 3},
                       Geo{BlockLattice(2, {2, 2, 1}, 0.5), 2}}) {
    for (int t = 0; t < 10; ++t) {
      const BlockPotential V(g.lat, LocalPotential::phi4(0.5 * U(rng), U(rng) - 0.5, 0.0, g.lat.d(), g.lat.spacing()));
      const BlockPotential Vt(g.lat, LocalPotential::phi4(0.5 * U(rng), U(rng) - 0.5, 0.0, g.lat.d(), g.lat.spacing()));
      const FieldFunction phi = random_smooth_field(rng(), g.lat.d());
      const FieldFunction zeta = random_smooth_field(rng(), g.lat.d(), 3, 1.0, 0.5);
      const FieldFunction psi = [&](const Point& x) { return zeta(x) + phi(x); };
      const Mask Y = g.lat.all();
      const double b = map_B(zero_activity(), V, Vt, g.L, Y, zeta, phi);
      CHECK(b == doctest::Approx(std::exp(-V.value(Y, psi)) - std::exp(-Vt.value(Y, phi))).epsilon(1e-12));
      double direct = 0.0;
      for (Mask D = 1; D <= Y; ++D) {
        double term = std::exp(-Vt.value(Y & ~D, phi));
        for (int k = 0; k < g.lat.count(); ++k)
          if (D & bit(k)) term *= p_fluctuation(V, Vt, k, zeta, phi);
        direct += term;
      }
      CHECK(b == doctest::Approx(direct).epsilon(1e-12));
    }
  }
  const BlockLattice lat(1, {2, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.3, 0.2, 0.0, 1, 0.25));
  const FieldFunction phi = random_smooth_field(4, 1), zero = [](const Point&) { return 0.0; };
  CHECK(map_B(zero_activity(), V, V, 2, lat.all(), zero, phi) == doctest::Approx(0.0).scale(1.0).epsilon(1e-15));
  const BlockPotential V0(lat, LocalPotential::phi4(0.0, 0.0, 0.0, 1, 0.25));
  for (int L : {2, 3}) {
    const BlockLattice l(1, {L, 1, 1}, 0.25);
    const BlockPotential z0(l, LocalPotential::phi4(0.0, 0.0, 0.0, 1, 0.25));
    const double k = 0.013;
    const auto K = function_activity([k](Mask, const FieldFunction&) { return k; }, 1);
    CHECK(map_B(K, z0, z0, L, l.all(), phi, phi) == doctest::Approx(std::pow(1 + k, L) - 1).epsilon(1e-13));
  }
  CHECK_THROWS_AS(map_B(zero_activity(), V, V, 2, 1, zero, phi), std::invalid_argument);
}

TEST_CASE("B map with activities against brute-force collections") {
  const BlockLattice lat(1, {4, 1, 1}, 0.25);
  const int L = 2;
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> U(-0.4, 0.4);
  for (Disjointness pol : {Disjointness::blocks, Disjointness::closed}) {
    const BlockPotential V(lat, LocalPotential::phi4(0.2, 0.1, 0.0, 1, 0.25));
    const BlockPotential Vt(lat, LocalPotential::phi4(0.25, 0.05, 0.0, 1, 0.25));
    std::map<Mask, double> coef;
    for (Mask X : oracle_polymers(lat, lat.all(), 3)) coef[X] = U(rng);
    const auto K = function_activity(
        [&coef](Mask X, const FieldFunction& f) { return coef.at(X) * (1.0 + 0.1 * f(Point{0.0, 0, 0})); }, 3, pol);
    const FieldFunction phi = random_smooth_field(7, 1), zeta = random_smooth_field(8, 1, 3, 1.0, 0.5);
    const FieldFunction psi = [&](const Point& x) { return zeta(x) + phi(x); };
    for (Mask Y : {Mask{0b0011}, Mask{0b1100}, Mask{0b1111}}) {
      // Collections of polymers (compatible) and a set D of P-blocks, with closure Y.
      std::vector<Mask> polys;
      for (const auto& [X, c] : coef)
        if (!(X & ~Y)) polys.push_back(X);
      double total = 0.0;
      std::vector<Mask> chosen;
      auto rec = [&](auto&& self, std::size_t start, Mask used, double prod) -> void {
        const Mask rest = Y & ~used;
        for (Mask D = rest;; D = (D - 1) & rest) {
          const Mask S = used | D;
          if (S && l_closure(lat, S, L) == l_closure(lat, Y, L)) {
            double term = prod * std::exp(-Vt.value(Y & ~S, phi));
            for (int k = 0; k < lat.count(); ++k)
              if (D & bit(k)) term *= p_fluctuation(V, Vt, k, zeta, phi);
            total += term;
          }
          if (D == 0) break;
        }
        for (std::size_t i = start; i < polys.size(); ++i) {
          bool ok = true;
          for (Mask Z : chosen) ok = ok && compatible(lat, polys[i], Z, pol);
          if (!ok) continue;
          chosen.push_back(polys[i]);
          self(self, i + 1, used | polys[i], prod * K(lat, polys[i], psi));
          chosen.pop_back();
        }
      };
      rec(rec, 0, 0, 1.0);
      CHECK(map_B(K, V, Vt, L, Y, zeta, phi) == doctest::Approx(total).epsilon(1e-12));
    }
  }
}

TEST_CASE("rescaled potential") {
  const FieldFunction phi = random_smooth_field(12, 1);
  LocalPotential v = LocalPotential::phi4(0.3, -0.2, 0.15, 1, 0.25, 0.4, 0.9);
  v.power[1] = 0.05;
  v.power[3] = -0.07;
  v.power[0] = 0.2;
  const auto vl = rescale_potential(v, 2.0, 0.25);
  const std::vector<Point> coarse{{0.0, 0, 0}, {0.125, 0, 0}, {0.25, 0, 0}, {0.375, 0, 0},
                                  {0.5, 0, 0}, {0.625, 0, 0}, {0.75, 0, 0}, {0.875, 0, 0}};
  std::vector<Point> fine;
  for (const Point& x : coarse) fine.push_back({2 * x[0], 0, 0});
  CHECK(vl.evaluate(phi, coarse) == doctest::Approx(v.evaluate(scale_field(phi, 2.0, 0.25), fine)).epsilon(1e-12));
}

TEST_CASE("one RG step preserves the representation") {
  const auto& f = fluct();
  auto ens = [&](std::uint64_t seed, std::size_t n) {
    FieldEnsemble e;
    e.grid = f.grid;
    for (std::size_t i = 0; i < n; ++i) e.samples.push_back(f.sampler.sample(seed, i));
    return std::make_shared<const FieldEnsemble>(std::move(e));
  };
  const BlockLattice lat(1, {4, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.05, 0.1, 0.0, 1, 0.25));
  const FieldFunction phi = random_smooth_field(3, 1, 3, 2.0, 0.5);
  const auto poly = ens(101, 2000), direct = ens(202, 2000);
  const auto step = rg_step_polymer(V, zero_activity(), V, 2, poly, 0.25);
  CHECK(step.coarse.count() == 2);
  const double zp = partition_density(step.V_L, step.K_tilde, step.coarse.all(), phi);
  const Estimate zd = direct_TL_partition_density(V, zero_activity(), 2, *direct, 0.25, phi);
  // Polymer side standard error: the representation is linear in the K~ averages here.
  std::vector<double> obs(poly->count());
  for (std::size_t i = 0; i < obs.size(); ++i) {
    FieldEnsemble one{{poly->samples[i]}, 0, "", f.grid};
    obs[i] = direct_TL_partition_density(V, zero_activity(), 2, one, 0.25, phi).value;
  }
  const Estimate zp_est = mean_estimate(obs);
  CHECK(zp == doctest::Approx(zp_est.value).epsilon(1e-12));
  const double se = std::hypot(zp_est.std_error, zd.std_error);
  CHECK(std::abs(zp - zd.value) <= 3 * se);

  const BlockPotential V0(lat, LocalPotential::phi4(0.0, 0.0, 0.0, 1, 0.25));
  const auto s0 = rg_step_polymer(V0, zero_activity(), V0, 2, ens(5, 20), 0.25);
  CHECK(partition_density(s0.V_L, s0.K_tilde, s0.coarse.all(), phi) == doctest::Approx(1.0).epsilon(1e-15));
  for (Mask Z : {Mask{1}, Mask{2}, Mask{3}}) CHECK(s0.K_tilde(s0.coarse, Z, phi) == 0.0);

  const FieldFunction probe = random_smooth_field(44, 1);
  CHECK(step.V_L.block_value(1, probe) == doctest::Approx(V.value(0b1100, scale_field(probe, 2.0, 0.25))).epsilon(1e-12));
  CHECK_THROWS_AS(rg_step_polymer(V, zero_activity(), V, 3, poly, 0.25), std::invalid_argument);
}

TEST_CASE("fluctuation integrals factorize over separated L-polymers") {
  const auto& f = fluct();
  const BlockLattice lat(1, {6, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.2, 0.1, 0.0, 1, 0.25));
  const auto K = function_activity(
      [&lat](Mask X, const FieldFunction& g) { return 0.1 * std::cos(g(lat.block_sites(std::countr_zero(X)).front())); }, 1);
  const FieldFunction phi = random_smooth_field(2, 1, 3, 2.0, 0.5);
  const Mask Y1 = 0b000011, Y3 = 0b110000;
  std::vector<double> a, b, ab;
  for (std::size_t i = 0; i < 4000; ++i) {
    const LatticeField z = f.sampler.sample(61, i);
    const double x = map_B(K, V, V, 2, Y1, lattice_fn(z), phi), y = map_B(K, V, V, 2, Y3, lattice_fn(z), phi);
    a.push_back(x);
    b.push_back(y);
    ab.push_back(x * y);
  }
  const Estimate ea = mean_estimate(a), eb = mean_estimate(b);
  std::vector<double> centred(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) centred[i] = (a[i] - ea.value) * (b[i] - eb.value);
  CHECK(std::abs(mean_estimate(centred).zscore(0.0)) <= 3.0);
  // Adjacent L-blocks are correlated through zeta, which the same statistic detects.
  std::vector<double> c(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const LatticeField z = f.sampler.sample(61, i);
    c[i] = map_B(K, V, V, 2, 0b001100, lattice_fn(z), phi);
  }
  const Estimate ec = mean_estimate(c);
  for (std::size_t i = 0; i < a.size(); ++i) centred[i] = (a[i] - ea.value) * (c[i] - ec.value);
  CHECK(std::abs(mean_estimate(centred).zscore(0.0)) > 3.0);
}

TEST_CASE("stability bound") {
  const BlockLattice lat(1, {2, 1, 1}, 0.25);
  const auto r0 = stability_bound_check(BlockPotential(lat, LocalPotential::phi4(0, 0, 0, 1, 0.25)), 0b11);
  CHECK(r0.norm == 1.0);
  CHECK(r0.bound == 4.0);
  CHECK(r0.holds);
  CHECK(stability_bound_check(BlockPotential(lat, LocalPotential::phi4(1e-3, 0, 0, 1, 0.25)), 0b11).holds);
  const auto bad = stability_bound_check(BlockPotential(lat, LocalPotential::phi4(10.0, -20.0, 0, 1, 0.25)), 0b11);
  CHECK_FALSE(bad.holds);
  CHECK(bad.worst_field.rfind("const", 0) == 0);
}

TEST_CASE("aggregate activity norm") {
  const BlockLattice lat(1, {3, 1, 1}, 0.25);
  CHECK(norm_aggregate(zero_activity(), lat, lat.all(), 2) == 0.0);
  const auto single = function_activity([](Mask, const FieldFunction&) { return -0.3; }, 1);
  CHECK(norm_aggregate(single, lat, lat.all(), 2) == doctest::Approx(8 * 0.3).epsilon(1e-15));
  const auto pair = function_activity(
      [](Mask X, const FieldFunction&) { return std::popcount(X) == 1 ? 0.3 : (std::popcount(X) == 2 ? 0.01 : 0.0); }, 3);
  CHECK(norm_aggregate(pair, lat, lat.all(), 2) == doctest::Approx(8 * 0.3 + 2 * 64 * 0.01).epsilon(1e-14));
  std::ostringstream os;
  write_polymer_report(os, pair, lat, lat.all(), 2);
  CHECK(os.str().find("\npolymer_id,blocks,size,activity_norm,A_weight\n") != std::string::npos);
  CHECK(os.str().find(",0;1,2,") != std::string::npos);
}

TEST_CASE("norm stability under T_L") {
  const auto& f = fluct();
  FieldEnsemble e;
  e.grid = f.grid;
  for (std::size_t i = 0; i < 500; ++i) e.samples.push_back(f.sampler.sample(77, i));
  const BlockLattice lat(1, {2, 1, 1}, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.1, 0.05, 0.0, 1, 0.25));
  const auto K = function_activity([&](Mask X, const FieldFunction& g) { return 0.5 * std::exp(-V.value(X, g)); }, 2);
  const double c = 2.0;
  for (Mask X : {Mask{1}, Mask{3}}) {
    const double ratio = norm_stability_ratio(K, lat, X, 2, e, 0.25);
    CHECK(ratio > 0.0);
    CHECK(ratio <= std::pow(c, std::popcount(X)));
  }
}

TEST_CASE("linear extraction") {
  const BlockLattice lat(1, {3, 1, 1}, 0.25);
  const FieldDimension dim(1, 0.25);
  const double c = 0.6;
  LocalPotential zero_v = LocalPotential::phi4(0, 0, 0, 1, 0.25, c);
  const BlockPotential V0(lat, zero_v);
  const FieldFunction phi = random_smooth_field(5, 1);
  auto block_monomial = [&](int m) {
    return [&lat, m, c](Mask X, const FieldFunction& f) {
      double s = 0.0;
      for (const Point& x : lat.sites(X)) s += evaluate_polynomial(wick_order(m, c), f(x));
      return 0.25 * s;
    };
  };
  const auto none = extract_relevant_linear(zero_activity(), V0, dim);
  CHECK(none.V.at(1) == zero_v);
  CHECK(none.K(lat, 1, phi) == 0.0);

  const double delta = 0.02;
  const auto quad = function_activity([&, m2 = block_monomial(2)](Mask X, const FieldFunction& f) { return delta * m2(X, f); }, 1);
  const auto e2 = extract_relevant_linear(quad, V0, dim);
  for (int b = 0; b < 3; ++b) {
    CHECK(e2.coefficients[b][2] == doctest::Approx(delta).epsilon(1e-10));
    CHECK(e2.V.at(b).power[2] == doctest::Approx(-delta).epsilon(1e-10));
    CHECK(std::abs(e2.K(lat, bit(b), phi)) <= 1e-8 * delta);
  }
  CHECK(e2.condition_number < 1e6);

  const auto six = function_activity([&, m6 = block_monomial(6)](Mask X, const FieldFunction& f) { return delta * m6(X, f); }, 1);
  const auto e6 = extract_relevant_linear(six, V0, dim);
  for (int b = 0; b < 3; ++b) {
    for (int k = 0; k < 6; ++k) CHECK(std::abs(e6.coefficients[b][k]) <= 1e-12);
    CHECK(e6.K(lat, bit(b), phi) == doctest::Approx(six(lat, bit(b), phi)).epsilon(1e-10));
  }
}

TEST_CASE("extraction leaves z unchanged to first order") {
  const BlockLattice lat(1, {3, 1, 1}, 0.25);
  const FieldDimension dim(1, 0.25);
  const BlockPotential V(lat, LocalPotential::phi4(0.1, 0.05, 0.0, 1, 0.25));
  const FieldFunction phi = random_smooth_field(8, 1, 3, 3.0, 0.7);
  std::vector<double> loglam, logdz;
  for (double lam : {1e-1, 1e-2, 1e-3}) {
    const auto K = function_activity(
        [&V, &lat, lam](Mask X, const FieldFunction& f) {
          if (std::popcount(X) == 1) {
            double s = 0.0;
            for (const Point& x : lat.sites(X)) {
              const double p = f(x);
              s += 0.25 * (0.2 + p * p + 0.3 * std::pow(p, 4) + 0.1 * std::pow(p, 6));
            }
            return lam * std::exp(-V.value(X, f)) * s;
          }
          double s = 0.0;
          for (const Point& x : lat.sites(X)) s += 0.25 * f(x) * f(x);
          return lam * 0.5 * std::exp(-s);
        },
        3);
    const auto e = extract_relevant_linear(K, V, dim);
    const double dz = partition_density(e.V, e.K, lat.all(), phi) - partition_density(V, K, lat.all(), phi);
    loglam.push_back(std::log(lam));
    logdz.push_back(std::log(std::abs(dz)));
  }
  const double slope = (logdz[2] - logdz[0]) / (loglam[2] - loglam[0]);
  CHECK(slope == doctest::Approx(2.0).epsilon(0.05));
}
