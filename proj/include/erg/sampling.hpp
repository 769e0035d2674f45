#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "erg/kernel.hpp"
#include "erg/lattice.hpp"

namespace erg {

/// A covariance that fails to be positive semidefinite; carries the most negative eigenvalue.
class NotPositiveDefinite : public NumericalError {
 public:
  NotPositiveDefinite(const std::string& what, double min_eigenvalue)
      : NumericalError(what), min_eigenvalue_(min_eigenvalue) {}
  double min_eigenvalue() const { return min_eigenvalue_; }

 private:
  double min_eigenvalue_;
};

/// Stream discipline: sample `index` of ensemble `seed` draws from an mt19937_64 seeded with
/// seed_seq{seed lo, seed hi, index lo, index hi, tag}.
std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t index, std::uint32_t tag = 0);

/// Independent child seed for a numbered sub-stream (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Uniform double in [0, 1) from the top 53 bits of one draw.
double uniform01(std::mt19937_64& rng);

/// Standard normal draws used by every sampler.
double standard_normal(std::mt19937_64& rng);

/// Short text identifying a kernel, e.g. "fluctuation L=2 n=none d=1 phi_dim=0.25".
std::string kernel_id(const CovarianceKernel& k);

struct FieldEnsemble {
  std::vector<LatticeField> samples;
  std::uint64_t seed = 0;
  std::string kernel_id;
  LatticeGrid grid;

  std::size_t count() const { return samples.size(); }
};

/// Exact Gaussian sampler for a finite-range kernel on a periodic lattice. The periodized
/// covariance is circulant, so it is diagonalized by the discrete Fourier transform.
class TorusSampler {
 public:
  /// Throws std::invalid_argument when the grid wraps onto the kernel's range and
  /// NotPositiveDefinite when some eigenvalue is below -1e-10 * (sum of eigenvalues).
  TorusSampler(const CovarianceKernel& kernel, LatticeGrid grid);
  ~TorusSampler();
  TorusSampler(TorusSampler&&) noexcept;
  TorusSampler& operator=(TorusSampler&&) noexcept;

  const LatticeGrid& grid() const { return grid_; }
  /// Periodized covariance c(x) = kernel(|x|) indexed like the lattice.
  const std::vector<double>& covariance() const { return covariance_; }
  double min_eigenvalue() const { return min_eigenvalue_; }
  /// Number of (roundoff-level) negative eigenvalues set to zero.
  std::size_t clipped() const { return clipped_; }

  LatticeField sample(std::uint64_t seed, std::uint64_t index, std::optional<int> scale_index = std::nullopt) const;

 private:
  struct Plans;
  LatticeGrid grid_;
  std::vector<double> covariance_;
  std::vector<double> sqrt_eigen_;  // half-complex layout of the r2c transform
  double min_eigenvalue_ = 0.0;
  std::size_t clipped_ = 0;
  std::unique_ptr<Plans> plans_;
};

/// Draws `count` samples of the mean-zero Gaussian field with covariance kernel(x - y) on the
/// torus. Deterministic in `seed`.
FieldEnsemble sample_gaussian(const CovarianceKernel& kernel, const LatticeGrid& grid, std::uint64_t seed,
                              std::size_t count, std::optional<int> scale_index = std::nullopt);

/// Dense sampler for a Gaussian on an arbitrary finite point set; usable with infinite-range
/// kernels such as C.
class PointSetSampler {
 public:
  PointSetSampler(const std::function<double(double)>& covariance, std::vector<Point> points);

  const std::vector<Point>& points() const { return points_; }
  double min_eigenvalue() const { return min_eigenvalue_; }
  std::vector<double> sample(std::uint64_t seed, std::uint64_t index) const;
  /// The sample as a function on the point set (other arguments throw).
  FieldFunction sample_function(std::uint64_t seed, std::uint64_t index) const;

 private:
  std::vector<Point> points_;
  std::vector<double> factor_;  // row-major n x n, covariance = F F^T
  double min_eigenvalue_ = 0.0;
};

/// Sample-wise sums phi = sum_n zeta_n. Throws std::invalid_argument on mismatched grids or counts.
FieldEnsemble multiscale_assemble(const std::vector<FieldEnsemble>& scales);

struct Estimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t count = 0;

  /// (value - reference) / std_error, or 0 when both the deviation and the error vanish.
  double zscore(double reference) const;
};

/// Mean and standard error of independent observations.
Estimate mean_estimate(const std::vector<double>& observations);

/// E[a(x) b(x + disp)], averaged over sites within each sample; the standard error comes from
/// the spread of the per-sample averages.
Estimate empirical_covariance(const FieldEnsemble& a, const FieldEnsemble& b, Site displacement);
inline Estimate empirical_covariance(const FieldEnsemble& e, Site displacement) {
  return empirical_covariance(e, e, displacement);
}

struct SlowVariation {
  Estimate probability;
  double bound = 0.0;  // E[(zeta(x) - zeta(y))^2] / gamma^2 from the kernel
};

/// Empirical P(|zeta(x) - zeta(x + disp)| >= gamma) with the Chebyshev bound computed from
/// the generating kernel.
SlowVariation slow_variation_probability(const FieldEnsemble& e, const CovarianceKernel& kernel, double gamma,
                                         Site displacement);

/// Writes <stem>.bin (little-endian float64, samples back to back) and <stem>.json.
void write_ensemble(const std::filesystem::path& stem, const FieldEnsemble& e, const CovarianceKernel& kernel);
/// Reads an ensemble back from its JSON manifest.
FieldEnsemble read_ensemble(const std::filesystem::path& manifest);

}  // namespace erg
