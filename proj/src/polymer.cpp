#include "erg/polymer.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "erg/rg_map.hpp"

namespace erg {

namespace {

constexpr Mask bit(int b) { return Mask{1} << b; }

int lowest(Mask m) { return std::countr_zero(m); }

struct PairHash {
  std::size_t operator()(const std::pair<Mask, Mask>& p) const {
    return std::hash<Mask>()(p.first * 0x9E3779B97F4A7C15ULL ^ p.second);
  }
};

FieldFunction sum_fields(const FieldFunction& a, const FieldFunction& b) {
  return [a, b](const Point& x) { return a(x) + b(x); };
}

FieldFunction lattice_function(const LatticeField& f) {
  return [&f](const Point& x) { return f.at(x); };
}

void check_ensemble(const BlockLattice& lattice, const FieldEnsemble& zeta, int L, const char* where) {
  if (zeta.count() == 0) throw std::invalid_argument(std::string(where) + ": empty ensemble");
  const LatticeGrid& g = zeta.grid;
  if (g.d != lattice.d() || std::abs(g.spacing - lattice.spacing()) > 1e-12 * lattice.spacing())
    throw std::invalid_argument(std::string(where) + ": ensemble grid does not match the block lattice");
  for (int a = 0; a < lattice.d(); ++a)
    if (g.length() < lattice.extent()[a] + L + 1)
      throw std::invalid_argument(std::string(where) + ": ensemble grid is too small for the volume");
}

}  // namespace

int block_count(Mask m) { return std::popcount(m); }

std::string mask_to_string(Mask m) {
  std::string s;
  for (int b = 0; m; ++b, m >>= 1)
    if (m & 1) s += (s.empty() ? "" : ";") + std::to_string(b);
  return s;
}

std::string to_string(Disjointness p) { return p == Disjointness::blocks ? "blocks" : "closed"; }

BlockLattice::BlockLattice(int d, std::array<int, 3> extent, double spacing) : d_(d), extent_(extent), spacing_(spacing) {
  if (d < 1 || d > 3) throw std::invalid_argument("BlockLattice: d must be 1, 2 or 3");
  count_ = 1;
  for (int a = 0; a < 3; ++a) {
    if (a >= d) extent_[a] = 1;
    if (extent_[a] < 1) throw std::invalid_argument("BlockLattice: extents must be positive");
    count_ *= extent_[a];
  }
  if (count_ > 64) throw std::invalid_argument("BlockLattice: at most 64 blocks");
  const double n = 1.0 / spacing;
  sites_per_side_ = static_cast<int>(std::lround(n));
  if (!(spacing > 0.0) || sites_per_side_ < 1 || std::abs(n - sites_per_side_) > 1e-9 * n)
    throw std::invalid_argument("BlockLattice: 1 / spacing must be a positive integer");
  sites_.resize(count_);
  for (int b = 0; b < count_; ++b) {
    const auto c = coords(b);
    const int n0 = sites_per_side_, n1 = d > 1 ? n0 : 1, n2 = d > 2 ? n0 : 1;
    for (int i = 0; i < n0; ++i)
      for (int j = 0; j < n1; ++j)
        for (int k = 0; k < n2; ++k) {
          Point x{c[0] + i * spacing, 0.0, 0.0};
          if (d > 1) x[1] = c[1] + j * spacing;
          if (d > 2) x[2] = c[2] + k * spacing;
          sites_[b].push_back(x);
        }
  }
}

Mask BlockLattice::all() const { return count_ == 64 ? ~Mask{0} : bit(count_) - 1; }

std::array<int, 3> BlockLattice::coords(int block) const {
  return {block % extent_[0], (block / extent_[0]) % extent_[1], block / (extent_[0] * extent_[1])};
}

int BlockLattice::index(const std::array<int, 3>& c) const { return c[0] + extent_[0] * (c[1] + extent_[1] * c[2]); }

bool BlockLattice::adjacent(int a, int b) const {
  if (a == b) return false;
  const auto ca = coords(a), cb = coords(b);
  for (int k = 0; k < 3; ++k)
    if (std::abs(ca[k] - cb[k]) > 1) return false;
  return true;
}

Mask BlockLattice::neighbours(Mask X) const {
  Mask out = 0;
  for (int b = 0; b < count_; ++b) {
    if (!(X & bit(b))) continue;
    for (int c = 0; c < count_; ++c)
      if (!(X & bit(c)) && adjacent(b, c)) out |= bit(c);
  }
  return out;
}

bool BlockLattice::connected(Mask X) const {
  if (X == 0) return false;
  Mask reached = bit(lowest(X)), frontier = reached;
  while (frontier) {
    const Mask next = neighbours(frontier) & X & ~reached;
    reached |= next;
    frontier = next;
  }
  return reached == X;
}

std::vector<Point> BlockLattice::sites(Mask X) const {
  std::vector<Point> out;
  for (int b = 0; b < count_; ++b)
    if (X & bit(b)) out.insert(out.end(), sites_[b].begin(), sites_[b].end());
  return out;
}

BlockLattice BlockLattice::coarsen(int L) const {
  if (L < 2) throw std::invalid_argument("BlockLattice::coarsen: L must be an integer >= 2");
  std::array<int, 3> e = extent_;
  for (int a = 0; a < d_; ++a) {
    if (e[a] % L != 0) throw std::invalid_argument("BlockLattice::coarsen: volume is not aligned to L-blocks");
    e[a] /= L;
  }
  return BlockLattice(d_, e, spacing_ / L);
}

std::vector<Mask> enumerate_polymers(const BlockLattice& lattice, Mask volume, int size_cap) {
  volume &= lattice.all();
  size_cap = std::min(size_cap, block_count(volume));
  std::vector<Mask> out;
  std::set<Mask> layer;
  for (int b = 0; b < lattice.count(); ++b)
    if (volume & bit(b)) layer.insert(bit(b));
  for (int size = 1; size <= size_cap && !layer.empty(); ++size) {
    out.insert(out.end(), layer.begin(), layer.end());
    if (size == size_cap) break;
    std::set<Mask> next;
    for (Mask X : layer) {
      Mask grow = lattice.neighbours(X) & volume;
      while (grow) {
        const int b = lowest(grow);
        grow &= grow - 1;
        next.insert(X | bit(b));
      }
    }
    layer = std::move(next);
  }
  return out;
}

Mask l_closure(const BlockLattice& fine, Mask X, int L) {
  const BlockLattice coarse = fine.coarsen(L);
  Mask out = 0;
  for (int b = 0; b < fine.count(); ++b) {
    if (!(X & bit(b))) continue;
    auto c = fine.coords(b);
    for (int a = 0; a < fine.d(); ++a) c[a] /= L;
    out |= bit(coarse.index(c));
  }
  return out;
}

Mask expand_l_blocks(const BlockLattice& fine, Mask coarse_mask, int L) {
  Mask out = 0;
  for (int b = 0; b < fine.count(); ++b) {
    auto c = fine.coords(b);
    for (int a = 0; a < fine.d(); ++a) c[a] /= L;
    if (coarse_mask & bit(fine.coarsen(L).index(c))) out |= bit(b);
  }
  return out;
}

bool is_l_polymer(const BlockLattice& fine, Mask Y, int L) {
  const Mask C = l_closure(fine, Y, L);
  return Y != 0 && expand_l_blocks(fine, C, L) == Y && fine.coarsen(L).connected(C);
}

BlockPotential::BlockPotential(BlockLattice lattice, const LocalPotential& uniform)
    : lattice_(std::move(lattice)), per_block_(lattice_.count(), uniform) {
  if (uniform.d != lattice_.d() || std::abs(uniform.spacing - lattice_.spacing()) > 1e-12)
    throw std::invalid_argument("BlockPotential: potential and lattice disagree on d or spacing");
}

BlockPotential::BlockPotential(BlockLattice lattice, std::vector<LocalPotential> per_block)
    : lattice_(std::move(lattice)), per_block_(std::move(per_block)) {
  if (static_cast<int>(per_block_.size()) != lattice_.count())
    throw std::invalid_argument("BlockPotential: one potential per block is required");
  for (const auto& v : per_block_)
    if (v.d != lattice_.d() || std::abs(v.spacing - lattice_.spacing()) > 1e-12)
      throw std::invalid_argument("BlockPotential: potential and lattice disagree on d or spacing");
}

double BlockPotential::block_value(int block, const FieldFunction& phi) const {
  return per_block_[block].evaluate(phi, lattice_.block_sites(block));
}

double BlockPotential::value(Mask X, const FieldFunction& phi) const {
  double s = 0.0;
  for (int b = 0; b < lattice_.count(); ++b)
    if (X & bit(b)) s += block_value(b, phi);
  return s;
}

LocalPotential rescale_potential(const LocalPotential& V, double L, double phi_dim) {
  LocalPotential out = V;
  const double d = V.d;
  for (int k = 0; k <= 4; ++k) out.power[k] = V.power[k] * std::pow(L, d - k * phi_dim);
  out.power_variance = V.power_variance * std::pow(L, 2 * phi_dim);
  out.xi = V.xi * std::pow(L, d - 2 * phi_dim - 2);
  out.gradient_variance = V.gradient_variance * std::pow(L, 2 * phi_dim + 2);
  out.spacing = V.spacing / L;
  return out;
}

double PolymerActivity::operator()(const BlockLattice& lattice, Mask X, const FieldFunction& phi) const {
  if (!evaluator || block_count(X) > size_cap || !lattice.connected(X)) return 0.0;
  return evaluator(X, phi);
}

PolymerActivity zero_activity(Disjointness p) { return PolymerActivity{nullptr, 0, p}; }

double resum(const BlockLattice& lattice, Mask volume, const std::vector<double>& boltzmann,
             const std::function<double(Mask)>& activity, int size_cap, Disjointness policy) {
  volume &= lattice.all();
  std::vector<std::vector<std::pair<Mask, double>>> by_lowest(lattice.count());
  if (size_cap > 0 && activity)
    for (Mask X : enumerate_polymers(lattice, volume, size_cap)) {
      const double k = activity(X);
      if (k != 0.0) by_lowest[lowest(X)].push_back({X, k});
    }
  std::vector<Mask> nbr(lattice.count());
  std::unordered_map<Mask, Mask> nbr_of;
  if (policy == Disjointness::closed)
    for (const auto& list : by_lowest)
      for (const auto& [X, k] : list) nbr_of[X] = lattice.neighbours(X);
  std::unordered_map<std::pair<Mask, Mask>, double, PairHash> memo;
  auto rec = [&](auto&& self, Mask S, Mask F) -> double {
    if (S == 0) return 1.0;
    const auto key = std::pair{S, F};
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    const int b = lowest(S);
    double r = boltzmann[b] * self(self, S & ~bit(b), F & ~bit(b));
    if (!(F & bit(b)))
      for (const auto& [X, k] : by_lowest[b]) {
        if ((X & ~S) || (X & F)) continue;
        const Mask rest = S & ~X;
        const Mask nf = policy == Disjointness::closed ? (F | nbr_of[X]) & rest : 0;
        r += k * self(self, rest, nf);
      }
    memo.emplace(key, r);
    return r;
  };
  return rec(rec, volume, 0);
}

double ordered_resum(const BlockLattice& lattice, Mask volume, const std::vector<double>& boltzmann,
                     const std::function<double(Mask)>& activity, int size_cap, Disjointness policy) {
  volume &= lattice.all();
  std::vector<std::pair<Mask, double>> polys;
  if (size_cap > 0 && activity)
    for (Mask X : enumerate_polymers(lattice, volume, size_cap)) polys.push_back({X, activity(X)});
  std::vector<Mask> halo;
  for (const auto& [X, k] : polys) halo.push_back(policy == Disjointness::closed ? X | lattice.neighbours(X) : X);
  double total = 0.0;
  auto rec = [&](auto&& self, Mask used, Mask blocked, double prod, double n) -> void {
    double w = prod;
    for (int b = 0; b < lattice.count(); ++b)
      if ((volume & bit(b)) && !(used & bit(b))) w *= boltzmann[b];
    total += w;
    for (std::size_t i = 0; i < polys.size(); ++i) {
      const Mask X = polys[i].first;
      if (X & blocked) continue;
      self(self, used | X, blocked | halo[i], prod * polys[i].second / (n + 1), n + 1);
    }
  };
  rec(rec, 0, 0, 1.0, 0.0);
  return total;
}

double partition_density(const BlockPotential& V, const PolymerActivity& K, Mask volume, const FieldFunction& phi) {
  const BlockLattice& lat = V.lattice();
  std::vector<double> boltz(lat.count(), 0.0);
  for (int b = 0; b < lat.count(); ++b)
    if (volume & bit(b)) boltz[b] = std::exp(-V.block_value(b, phi));
  return resum(lat, volume, boltz, [&](Mask X) { return K(lat, X, phi); }, K.size_cap, K.disjointness);
}

double p_fluctuation(const BlockPotential& V, const BlockPotential& Vt, int block, const FieldFunction& zeta,
                     const FieldFunction& phi) {
  return std::exp(-V.block_value(block, sum_fields(zeta, phi))) - std::exp(-Vt.block_value(block, phi));
}

double map_B(const PolymerActivity& K, const BlockPotential& V, const BlockPotential& Vt, int L, Mask Y,
             const FieldFunction& zeta, const FieldFunction& phi) {
  const BlockLattice& lat = V.lattice();
  if (!is_l_polymer(lat, Y, L)) throw std::invalid_argument("map_B: Y is not a connected L-polymer");
  const FieldFunction psi = sum_fields(zeta, phi);
  std::vector<double> boltz(lat.count(), 0.0), tilde(lat.count(), 0.0);
  for (int b = 0; b < lat.count(); ++b)
    if (Y & bit(b)) {
      boltz[b] = std::exp(-V.block_value(b, psi));
      tilde[b] = std::exp(-Vt.block_value(b, phi));
    }
  std::unordered_map<Mask, double> kval;
  if (K.size_cap > 0 && K.evaluator)
    for (Mask X : enumerate_polymers(lat, Y, K.size_cap)) kval[X] = K(lat, X, psi);
  auto act = [&kval](Mask X) {
    const auto it = kval.find(X);
    return it == kval.end() ? 0.0 : it->second;
  };
  // Configurations whose closure is Y are those meeting every L-block of Y: inclusion-exclusion
  // over the set U of L-blocks they avoid, which then carry e^{-V~}.
  const Mask C = l_closure(lat, Y, L);
  std::vector<int> lblocks;
  for (Mask c = C; c; c &= c - 1) lblocks.push_back(lowest(c));
  double total = 0.0;
  for (Mask u = 0; u < bit(static_cast<int>(lblocks.size())); ++u) {
    Mask U = 0;
    for (std::size_t i = 0; i < lblocks.size(); ++i)
      if (u & bit(static_cast<int>(i))) U |= bit(lblocks[i]);
    const Mask avoided = expand_l_blocks(lat, U, L);
    double w = 1.0;
    for (int b = 0; b < lat.count(); ++b)
      if (avoided & bit(b)) w *= tilde[b];
    const double z = resum(lat, Y & ~avoided, boltz, act, K.size_cap, K.disjointness);
    total += (block_count(u) % 2 ? -1.0 : 1.0) * w * z;
  }
  return total;
}

RgStepResult rg_step_polymer(const BlockPotential& V, const PolymerActivity& K, const BlockPotential& Vt, int L,
                             std::shared_ptr<const FieldEnsemble> zeta, double phi_dim) {
  const BlockLattice& fine = V.lattice();
  if (!zeta) throw std::invalid_argument("rg_step_polymer: missing ensemble");
  check_ensemble(fine, *zeta, L, "rg_step_polymer");
  const BlockLattice coarse = fine.coarsen(L);
  std::vector<LocalPotential> vl;
  for (int c = 0; c < coarse.count(); ++c) {
    const Mask blocks = expand_l_blocks(fine, bit(c), L);
    const LocalPotential& first = Vt.at(lowest(blocks));
    for (Mask m = blocks; m; m &= m - 1)
      if (!(Vt.at(lowest(m)) == first))
        throw std::invalid_argument("rg_step_polymer: V~ must be uniform within each L-block");
    vl.push_back(rescale_potential(first, L, phi_dim));
  }
  auto samples = [V, K, Vt, L, zeta, phi_dim, fine](Mask Z, const FieldFunction& phi) {
    const Mask Y = expand_l_blocks(fine, Z, L);
    const FieldFunction sphi = scale_field(phi, L, phi_dim);
    std::vector<double> obs(zeta->count());
    for (std::size_t i = 0; i < obs.size(); ++i)
      obs[i] = map_B(K, V, Vt, L, Y, lattice_function(zeta->samples[i]), sphi);
    return obs;
  };
  RgStepResult out{coarse, BlockPotential(coarse, vl), {}, {}};
  out.K_tilde.evaluator = [samples](Mask Z, const FieldFunction& phi) { return mean_estimate(samples(Z, phi)).value; };
  out.K_tilde.size_cap = coarse.count();
  out.K_tilde.disjointness = Disjointness::closed;
  out.K_estimate = [samples, coarse](Mask Z, const FieldFunction& phi) {
    if (!coarse.connected(Z)) return Estimate{0.0, 0.0, 0};
    return mean_estimate(samples(Z, phi));
  };
  return out;
}

Estimate direct_TL_partition_density(const BlockPotential& V, const PolymerActivity& K, int L,
                                     const FieldEnsemble& zeta, double phi_dim, const FieldFunction& phi) {
  check_ensemble(V.lattice(), zeta, L, "direct_TL_partition_density");
  const FieldFunction sphi = scale_field(phi, L, phi_dim);
  std::vector<double> obs(zeta.count());
  for (std::size_t i = 0; i < obs.size(); ++i)
    obs[i] = partition_density(V, K, V.lattice().all(), sum_fields(lattice_function(zeta.samples[i]), sphi));
  return mean_estimate(obs);
}

std::vector<TestField> standard_test_fields(const BlockLattice& lattice, Mask X) {
  std::vector<TestField> out;
  out.push_back({"zero", [](const Point&) { return 0.0; }});
  out.push_back({"const+1", [](const Point&) { return 1.0; }});
  out.push_back({"const-1", [](const Point&) { return -1.0; }});
  const double tol = 1e-9 * lattice.spacing();
  for (const Point& s : lattice.sites(X)) {
    std::ostringstream name;
    name << "spike(" << s[0] << ',' << s[1] << ',' << s[2] << ')';
    out.push_back({name.str(), [s, tol](const Point& x) {
                     return std::abs(x[0] - s[0]) < tol && std::abs(x[1] - s[1]) < tol && std::abs(x[2] - s[2]) < tol
                                ? 1.0
                                : 0.0;
                   }});
  }
  for (int a = 0; a < lattice.d(); ++a) {
    const double k = 2.0 * M_PI / lattice.extent()[a];
    out.push_back({"cos" + std::to_string(a), [a, k](const Point& x) { return std::cos(k * x[a]); }});
    out.push_back({"sin" + std::to_string(a), [a, k](const Point& x) { return std::sin(k * x[a]); }});
  }
  return out;
}

double growth_weight(const BlockLattice& lattice, Mask X, const FieldFunction& phi, double kappa) {
  double s = 0.0;
  for (const Point& x : lattice.sites(X)) s += phi(x) * phi(x);
  return std::exp(kappa * std::pow(lattice.spacing(), lattice.d()) * s);
}

double field_norm(const std::function<double(const FieldFunction&)>& F, const BlockLattice& lattice, Mask X,
                  const std::vector<TestField>& family, double kappa) {
  double sup = 0.0;
  for (const auto& f : family) sup = std::max(sup, std::abs(F(f.phi)) / growth_weight(lattice, X, f.phi, kappa));
  return sup;
}

StabilityReport stability_bound_check(const BlockPotential& V, Mask Y, double kappa) {
  const BlockLattice& lat = V.lattice();
  StabilityReport r;
  r.bound = std::pow(2.0, block_count(Y));
  for (const auto& f : standard_test_fields(lat, Y)) {
    const double v = std::exp(-V.value(Y, f.phi)) / growth_weight(lat, Y, f.phi, kappa);
    if (v > r.norm || r.worst_field.empty()) {
      r.norm = std::max(r.norm, v);
      r.worst_field = f.name;
    }
  }
  r.holds = r.norm <= r.bound;
  return r;
}

double norm_aggregate(const PolymerActivity& K, const BlockLattice& lattice, Mask volume, int L, double kappa) {
  std::vector<double> per_block(lattice.count(), 0.0);
  for (Mask X : enumerate_polymers(lattice, volume, K.size_cap)) {
    const double n = field_norm([&](const FieldFunction& phi) { return K(lattice, X, phi); }, lattice, X,
                                standard_test_fields(lattice, X), kappa);
    const double A = std::pow(static_cast<double>(L), (lattice.d() + 2) * block_count(X));
    for (int b = 0; b < lattice.count(); ++b)
      if (X & bit(b)) per_block[b] += A * n;
  }
  double sup = 0.0;
  for (int b = 0; b < lattice.count(); ++b)
    if (volume & bit(b)) sup = std::max(sup, per_block[b]);
  return sup;
}

double norm_stability_ratio(const PolymerActivity& K, const BlockLattice& lattice, Mask X, int L,
                            const FieldEnsemble& zeta, double phi_dim, double kappa) {
  check_ensemble(lattice, zeta, L, "norm_stability_ratio");
  const auto family = standard_test_fields(lattice, X);
  const double base = field_norm([&](const FieldFunction& phi) { return K(lattice, X, phi); }, lattice, X, family, kappa);
  auto TK = [&](const FieldFunction& phi) {
    const FieldFunction sphi = scale_field(phi, L, phi_dim);
    double s = 0.0;
    for (const auto& z : zeta.samples) s += K(lattice, X, sum_fields(lattice_function(z), sphi));
    return s / static_cast<double>(zeta.count());
  };
  if (base == 0.0) throw std::invalid_argument("norm_stability_ratio: K(X) vanishes on the test family");
  return field_norm(TK, lattice, X, family, kappa) / base;
}

void write_polymer_report(std::ostream& os, const PolymerActivity& K, const BlockLattice& lattice, Mask volume, int L,
                          double kappa) {
  os << "# d=" << lattice.d() << " extent=" << lattice.extent()[0] << 'x' << lattice.extent()[1] << 'x'
     << lattice.extent()[2] << " L=" << L << " kappa=" << kappa << " disjointness=" << to_string(K.disjointness)
     << '\n';
  os << "polymer_id,blocks,size,activity_norm,A_weight\n";
  os << std::setprecision(17);
  int id = 0;
  for (Mask X : enumerate_polymers(lattice, volume, K.size_cap)) {
    const double n = field_norm([&](const FieldFunction& phi) { return K(lattice, X, phi); }, lattice, X,
                                standard_test_fields(lattice, X), kappa);
    os << id++ << ',' << mask_to_string(X) << ',' << block_count(X) << ',' << n << ','
       << std::pow(static_cast<double>(L), (lattice.d() + 2) * block_count(X)) << '\n';
  }
}

namespace {

// Gauss-Hermite rule for N(0, variance) by the Golub-Welsch eigenproblem.
std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n, double variance) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i + 1 < n; ++i) J(i, i + 1) = J(i + 1, i) = std::sqrt(i + 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  std::vector<double> x(n), w(n);
  for (int i = 0; i < n; ++i) {
    x[i] = std::sqrt(variance) * es.eigenvalues()(i);
    w[i] = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
  }
  return {x, w};
}

LocalPotential basis_potential(const LocalPotential& like, int k) {
  LocalPotential v = like;
  v.power.fill(0.0);
  v.xi = 0.0;
  if (k < 5)
    v.power[k] = 1.0;
  else
    v.xi = 1.0;
  return v;
}

}  // namespace

Extraction extract_relevant_linear(const PolymerActivity& K, const BlockPotential& V, const FieldDimension& dim) {
  const BlockLattice& lat = V.lattice();
  const double d = dim.d(), p = dim.phi_dim();
  std::vector<int> relevant;
  for (int m = 0; m <= 4; ++m)
    if (d - m * p >= -1e-12) relevant.push_back(m);
  const bool gradient = d - 2 * p - 2 >= -1e-12;
  if (gradient) relevant.push_back(5);

  Extraction out{V, K, std::vector<std::array<double, 6>>(lat.count(), std::array<double, 6>{}), 0.0};
  std::vector<LocalPotential> vprime, pis;
  for (int b = 0; b < lat.count(); ++b) {
    const LocalPotential& vb = V.at(b);
    const double var = vb.power_variance > 0.0 ? vb.power_variance : 1.0;
    const auto [nodes, weights] = gauss_hermite(8, var);
    std::vector<std::pair<FieldFunction, double>> fields;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double s = nodes[i];
      fields.push_back({[s](const Point&) { return s; }, weights[i]});
      if (gradient) {
        const auto c = lat.coords(b);
        const double centre = c[0] + 0.5;
        for (double t : {0.5, 1.0})
          fields.push_back({[s, t, centre](const Point& x) { return s + t * (x[0] - centre); }, weights[i]});
      }
    }
    Eigen::MatrixXd A(fields.size(), relevant.size());
    Eigen::VectorXd y(fields.size());
    const Mask X = bit(b);
    for (std::size_t i = 0; i < fields.size(); ++i) {
      const double sw = std::sqrt(fields[i].second);
      const auto& phi = fields[i].first;
      for (std::size_t j = 0; j < relevant.size(); ++j)
        A(i, j) = sw * basis_potential(vb, relevant[j]).evaluate(phi, lat.block_sites(b));
      y(i) = sw * std::exp(V.block_value(b, phi)) * K(lat, X, phi);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0.0 ? sv(0) / sv(sv.size() - 1) : std::numeric_limits<double>::infinity();
    out.condition_number = std::max(out.condition_number, cond);
    if (cond > 1e12) {
      std::ostringstream os;
      os << "extract_relevant_linear: ill-conditioned projection on block " << b << " (condition number " << cond << ")";
      throw NumericalError(os.str());
    }
    const Eigen::VectorXd coef = svd.solve(y);
    LocalPotential pi = basis_potential(vb, 0);
    pi.power[0] = 0.0;
    LocalPotential vp = vb;
    for (std::size_t j = 0; j < relevant.size(); ++j) {
      const int k = relevant[j];
      out.coefficients[b][k] = coef(j);
      if (k < 5) {
        pi.power[k] = coef(j);
        vp.power[k] -= coef(j);
      } else {
        pi.xi = coef(j);
        vp.xi -= coef(j);
      }
    }
    vprime.push_back(vp);
    pis.push_back(pi);
  }
  out.V = BlockPotential(lat, vprime);
  const BlockPotential Vold = V;
  out.K.size_cap = std::max(K.size_cap, 1);
  out.K.evaluator = [K, Vold, pis, lat](Mask X, const FieldFunction& phi) {
    const double k = K(lat, X, phi);
    if (block_count(X) != 1) return k;
    const int b = lowest(X);
    return k - std::exp(-Vold.block_value(b, phi)) * pis[b].evaluate(phi, lat.block_sites(b));
  };
  return out;
}

}  // namespace erg
