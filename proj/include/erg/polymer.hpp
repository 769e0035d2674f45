#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "erg/sampling.hpp"
#include "erg/wick.hpp"

namespace erg {

/// A set of unit blocks, bit b standing for block b of a BlockLattice.
using Mask = std::uint64_t;

int block_count(Mask m);
/// "0;2;3".
std::string mask_to_string(Mask m);

/// How the polymers of one collection may sit relative to each other: `blocks` requires
/// disjoint block sets, `closed` requires disjoint closed sets (no shared face, edge or corner).
enum class Disjointness { blocks, closed };
std::string to_string(Disjointness p);

/// A box of extent[0] x ... x extent[d-1] closed unit cubes, block (i, j, k) occupying
/// [i, i+1] x [j, j+1] x [k, k+1]. Lattice sites at the given spacing are assigned to the
/// half-open cube, so block b carries (1/spacing)^d sites. Two blocks are adjacent when their
/// closed cubes intersect.
class BlockLattice {
 public:
  BlockLattice(int d, std::array<int, 3> extent, double spacing);

  int d() const { return d_; }
  const std::array<int, 3>& extent() const { return extent_; }
  double spacing() const { return spacing_; }
  int count() const { return count_; }
  Mask all() const;
  int sites_per_side() const { return sites_per_side_; }

  std::array<int, 3> coords(int block) const;
  int index(const std::array<int, 3>& c) const;
  bool adjacent(int a, int b) const;
  /// Blocks outside X adjacent to some block of X.
  Mask neighbours(Mask X) const;
  bool connected(Mask X) const;
  const std::vector<Point>& block_sites(int block) const { return sites_[block]; }
  std::vector<Point> sites(Mask X) const;

  /// The lattice of L-blocks, rescaled to unit side (spacing / L). Throws std::invalid_argument
  /// when an extent is not a multiple of L.
  BlockLattice coarsen(int L) const;

 private:
  int d_;
  std::array<int, 3> extent_;
  double spacing_;
  int count_;
  int sites_per_side_;
  std::vector<std::vector<Point>> sites_;
};

/// All connected polymers inside `volume` with at most size_cap blocks (clamped to the volume),
/// grown block by block from single blocks.
std::vector<Mask> enumerate_polymers(const BlockLattice& lattice, Mask volume, int size_cap);

/// Coarse mask of the L-blocks meeting X.
Mask l_closure(const BlockLattice& fine, Mask X, int L);
/// Unit blocks making up the L-blocks of a coarse mask.
Mask expand_l_blocks(const BlockLattice& fine, Mask coarse, int L);
/// Whether Y is a connected union of L-blocks.
bool is_l_polymer(const BlockLattice& fine, Mask Y, int L);

/// A local potential V(X, phi) = sum over blocks of X of a LocalPotential on that block's sites.
class BlockPotential {
 public:
  BlockPotential(BlockLattice lattice, const LocalPotential& uniform);
  BlockPotential(BlockLattice lattice, std::vector<LocalPotential> per_block);

  const BlockLattice& lattice() const { return lattice_; }
  const LocalPotential& at(int block) const { return per_block_[block]; }
  double block_value(int block, const FieldFunction& phi) const;
  double value(Mask X, const FieldFunction& phi) const;

 private:
  BlockLattice lattice_;
  std::vector<LocalPotential> per_block_;
};

/// The potential on coarse blocks with V_L(Delta, phi) = V(L Delta, S_L phi): couplings scale by
/// L^{d - k[phi]} (and L^{d - 2[phi] - 2} for xi), ordering variances by L^{2[phi]} and
/// L^{2[phi] + 2}, and the spacing by 1/L.
LocalPotential rescale_potential(const LocalPotential& V, double L, double phi_dim);

/// K(X, phi). Values are zero on disconnected or oversized X regardless of the evaluator.
struct PolymerActivity {
  std::function<double(Mask, const FieldFunction&)> evaluator;
  int size_cap = 0;
  Disjointness disjointness = Disjointness::blocks;

  double operator()(const BlockLattice& lattice, Mask X, const FieldFunction& phi) const;
};

PolymerActivity zero_activity(Disjointness p = Disjointness::blocks);

/// Sum over unordered collections of connected polymers in `volume`, pairwise disjoint under
/// `policy`, of prod_{blocks b not covered} boltzmann[b] * prod_j activity(X_j). The activity
/// callback is queried once per polymer of size <= size_cap.
double resum(const BlockLattice& lattice, Mask volume, const std::vector<double>& boltzmann,
             const std::function<double(Mask)>& activity, int size_cap, Disjointness policy);

/// The same sum taken over ordered tuples of polymers with weight 1/N!; exponential cost, used
/// to cross-check resum.
double ordered_resum(const BlockLattice& lattice, Mask volume, const std::vector<double>& boltzmann,
                     const std::function<double(Mask)>& activity, int size_cap, Disjointness policy);

/// z(volume, phi) = sum_N 1/N! sum_{X_1..X_N} e^{-V(X_c, phi)} prod K(X_j, phi).
double partition_density(const BlockPotential& V, const PolymerActivity& K, Mask volume, const FieldFunction& phi);

/// e^{-V(Delta, zeta + phi)} - e^{-V~(Delta, phi)}.
double p_fluctuation(const BlockPotential& V, const BlockPotential& Vt, int block, const FieldFunction& zeta,
                     const FieldFunction& phi);

/// B K(Y) for a connected L-polymer Y: the sum over disjoint 1-polymers X_j and distinct blocks
/// Delta_i with N + M >= 1 whose L-closure is Y, of e^{-V~(X_0, phi)} prod K(X_j, zeta + phi)
/// prod P(Delta_i). Evaluated by inclusion-exclusion over the L-blocks of Y. Throws
/// std::invalid_argument when Y is not an L-polymer.
double map_B(const PolymerActivity& K, const BlockPotential& V, const BlockPotential& Vt, int L, Mask Y,
             const FieldFunction& zeta, const FieldFunction& phi);

struct RgStepResult {
  BlockLattice coarse;
  BlockPotential V_L;
  /// K~(Z, phi) = mean over the ensemble of B K(L Z, zeta_i, S_L phi); closed disjointness.
  PolymerActivity K_tilde;
  std::function<Estimate(Mask, const FieldFunction&)> K_estimate;
};

/// One RG step of the polymer representation with fluctuation samples zeta_i of Gamma_L. The
/// ensemble grid spacing must equal the lattice spacing and the grid must cover the volume.
RgStepResult rg_step_polymer(const BlockPotential& V, const PolymerActivity& K, const BlockPotential& Vt, int L,
                             std::shared_ptr<const FieldEnsemble> zeta, double phi_dim);

/// E_zeta z(volume, zeta + S_L phi) from an ensemble of Gamma_L samples.
Estimate direct_TL_partition_density(const BlockPotential& V, const PolymerActivity& K, int L,
                                     const FieldEnsemble& zeta, double phi_dim, const FieldFunction& phi);

struct TestField {
  std::string name;
  FieldFunction phi;
};

/// Zero field, constants +1 and -1, a unit spike at each site of X, and cos / sin modes of
/// wavelength equal to the lattice extent along each axis.
std::vector<TestField> standard_test_fields(const BlockLattice& lattice, Mask X);

/// Default growth constant kappa of G(phi) = exp(kappa sum_{x in X} spacing^d phi(x)^2).
inline constexpr double kGrowthKappa = 0.25;

double growth_weight(const BlockLattice& lattice, Mask X, const FieldFunction& phi, double kappa = kGrowthKappa);

/// sup over the family of |F(phi)| / G_X(phi).
double field_norm(const std::function<double(const FieldFunction&)>& F, const BlockLattice& lattice, Mask X,
                  const std::vector<TestField>& family, double kappa = kGrowthKappa);

struct StabilityReport {
  double norm = 0.0;
  double bound = 0.0;  // 2^{|Y|}
  bool holds = false;
  std::string worst_field;
};

/// ||e^{-V(Y)}|| on the standard test family against 2^{|Y|}.
StabilityReport stability_bound_check(const BlockPotential& V, Mask Y, double kappa = kGrowthKappa);

/// sup_Delta sum_{X containing Delta} L^{(d+2)|X|} ||K(X)||, with per-polymer norms over the
/// standard test family of each X.
double norm_aggregate(const PolymerActivity& K, const BlockLattice& lattice, Mask volume, int L,
                      double kappa = kGrowthKappa);

/// ||(T_L K)(X)|| / ||K(X)|| with (T_L K)(X, phi) = mean_i K(X, zeta_i + S_L phi).
double norm_stability_ratio(const PolymerActivity& K, const BlockLattice& lattice, Mask X, int L,
                            const FieldEnsemble& zeta, double phi_dim, double kappa = kGrowthKappa);

/// CSV polymer_id,blocks,size,activity_norm,A_weight after a `#` metadata line.
void write_polymer_report(std::ostream& os, const PolymerActivity& K, const BlockLattice& lattice, Mask volume, int L,
                          double kappa = kGrowthKappa);

struct Extraction {
  BlockPotential V;
  PolymerActivity K;
  /// Per block: fitted coefficients of :phi^0: .. :phi^4: and :|grad phi|^2: (zero when not relevant).
  std::vector<std::array<double, 6>> coefficients;
  double condition_number = 0.0;
};

/// Linear extraction of the relevant part of K on single blocks. Q(Delta, phi) = e^{V(Delta,phi)}
/// K(Delta, phi) is fitted by least squares on the relevant monomials representable by a
/// LocalPotential (powers up to 4 and the gradient term, each kept when d - m[phi] - n >= 0),
/// using constant fields at the 8 Gauss-Hermite nodes for the block's ordering variance (1 when
/// unordered), plus linear ramps when the gradient term is relevant. Then V' = V - Pi and
/// K'(Delta) = K(Delta) - e^{-V(Delta)} Pi(Delta), so z changes only at second order. Throws
/// NumericalError when the fit's condition number exceeds 1e12.
Extraction extract_relevant_linear(const PolymerActivity& K, const BlockPotential& V, const FieldDimension& dim);

}  // namespace erg
