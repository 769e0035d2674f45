#include "erg/sampling.hpp"

#include <fftw3.h>

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <fstream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <stdexcept>

namespace erg {

std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t index, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), tag};
  return std::mt19937_64(seq);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * (1.0 / 9007199254740992.0); }

double standard_normal(std::mt19937_64& rng) {
  // Box-Muller on 53-bit uniforms, so draws do not depend on the standard library's
  // normal_distribution.
  double u1;
  do {
    u1 = uniform01(rng);
  } while (u1 == 0.0);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::string kernel_id(const CovarianceKernel& k) {
  std::ostringstream os;
  os.precision(17);
  os << to_string(k.kind()) << " L=";
  if (std::isnan(k.L())) {
    os << "none";
  } else {
    os << k.L();
  }
  os << " n=";
  if (k.n() < 0) {
    os << "none";
  } else {
    os << k.n();
  }
  os << " d=" << k.dim().d() << " phi_dim=" << k.dim().phi_dim();
  return os.str();
}

struct TorusSampler::Plans {
  int rank = 1;
  int dims[3] = {1, 1, 1};
  std::size_t real_size = 0;
  std::size_t complex_size = 0;
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;

  ~Plans() {
    if (forward) fftw_destroy_plan(forward);
    if (backward) fftw_destroy_plan(backward);
  }
};

namespace {

template <class T>
struct FftwBuffer {
  T* data;
  explicit FftwBuffer(std::size_t n) : data(static_cast<T*>(fftw_malloc(sizeof(T) * std::max<std::size_t>(n, 1)))) {
    if (!data) throw std::bad_alloc();
  }
  ~FftwBuffer() { fftw_free(data); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
};

}  // namespace

TorusSampler::TorusSampler(const CovarianceKernel& kernel, LatticeGrid grid) : grid_(grid) {
  if (kernel.dim().d() != grid.d) throw std::invalid_argument("TorusSampler: kernel and grid dimensions differ");
  grid.require_no_wrap(kernel.range());

  const std::size_t n = grid.size();
  covariance_.resize(n);
  std::map<long, double> by_norm;  // squared integer distance -> kernel value
  for (std::size_t i = 0; i < n; ++i) {
    const Site s = grid.coords(i);
    long m2 = 0;
    for (int a = 0; a < grid.d; ++a) {
      const long m = std::min(s[a], grid.extent - s[a]);
      m2 += m * m;
    }
    auto it = by_norm.find(m2);
    if (it == by_norm.end()) it = by_norm.emplace(m2, kernel.exact(grid.spacing * std::sqrt(static_cast<double>(m2)))).first;
    covariance_[i] = it->second;
  }

  plans_ = std::make_unique<Plans>();
  plans_->rank = grid.d;
  for (int a = 0; a < grid.d; ++a) plans_->dims[a] = grid.extent;
  plans_->real_size = n;
  plans_->complex_size = n / grid.extent * (grid.extent / 2 + 1);
  FftwBuffer<double> real(n);
  FftwBuffer<fftw_complex> spec(plans_->complex_size);
  plans_->forward = fftw_plan_dft_r2c(plans_->rank, plans_->dims, real.data, spec.data, FFTW_ESTIMATE);
  plans_->backward = fftw_plan_dft_c2r(plans_->rank, plans_->dims, spec.data, real.data, FFTW_ESTIMATE);
  if (!plans_->forward || !plans_->backward) throw NumericalError("TorusSampler: FFTW planning failed");

  std::copy(covariance_.begin(), covariance_.end(), real.data);
  fftw_execute(plans_->forward);
  double total = 0.0;
  min_eigenvalue_ = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < plans_->complex_size; ++k) {
    min_eigenvalue_ = std::min(min_eigenvalue_, spec.data[k][0]);
    total += std::abs(spec.data[k][0]);
  }
  if (min_eigenvalue_ < -1e-10 * total) {
    throw NotPositiveDefinite("TorusSampler: periodized kernel is not positive semidefinite (min eigenvalue " +
                                  std::to_string(min_eigenvalue_) + ")",
                              min_eigenvalue_);
  }
  sqrt_eigen_.resize(plans_->complex_size);
  for (std::size_t k = 0; k < plans_->complex_size; ++k) {
    const double lambda = spec.data[k][0];
    if (lambda < 0.0) ++clipped_;
    sqrt_eigen_[k] = std::sqrt(std::max(lambda, 0.0));
  }
}

TorusSampler::~TorusSampler() = default;
TorusSampler::TorusSampler(TorusSampler&&) noexcept = default;
TorusSampler& TorusSampler::operator=(TorusSampler&&) noexcept = default;

LatticeField TorusSampler::sample(std::uint64_t seed, std::uint64_t index, std::optional<int> scale_index) const {
  const std::size_t n = plans_->real_size;
  FftwBuffer<double> real(n);
  FftwBuffer<fftw_complex> spec(plans_->complex_size);
  auto rng = sample_stream(seed, index);
  for (std::size_t i = 0; i < n; ++i) real.data[i] = standard_normal(rng);
  fftw_execute_dft_r2c(plans_->forward, real.data, spec.data);
  for (std::size_t k = 0; k < plans_->complex_size; ++k) {
    spec.data[k][0] *= sqrt_eigen_[k];
    spec.data[k][1] *= sqrt_eigen_[k];
  }
  fftw_execute_dft_c2r(plans_->backward, spec.data, real.data);
  std::vector<double> values(real.data, real.data + n);
  const double inv = 1.0 / static_cast<double>(n);
  for (double& v : values) v *= inv;
  return LatticeField(grid_, std::move(values), scale_index);
}

FieldEnsemble sample_gaussian(const CovarianceKernel& kernel, const LatticeGrid& grid, std::uint64_t seed,
                              std::size_t count, std::optional<int> scale_index) {
  const TorusSampler sampler(kernel, grid);
  FieldEnsemble e;
  e.seed = seed;
  e.kernel_id = kernel_id(kernel);
  e.grid = grid;
  e.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) e.samples.push_back(sampler.sample(seed, i, scale_index));
  return e;
}

PointSetSampler::PointSetSampler(const std::function<double(double)>& covariance, std::vector<Point> points)
    : points_(std::move(points)) {
  const auto n = static_cast<Eigen::Index>(points_.size());
  if (n == 0) return;
  Eigen::MatrixXd cov(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double d2 = 0.0;
      for (int a = 0; a < 3; ++a) d2 += (points_[i][a] - points_[j][a]) * (points_[i][a] - points_[j][a]);
      cov(i, j) = cov(j, i) = covariance(std::sqrt(d2));
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw NumericalError("PointSetSampler: eigendecomposition failed");
  min_eigenvalue_ = solver.eigenvalues().minCoeff();
  if (min_eigenvalue_ < -1e-10 * std::max(cov.trace(), 1e-300))
    throw NotPositiveDefinite("PointSetSampler: covariance is not positive semidefinite", min_eigenvalue_);
  const Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Eigen::MatrixXd f = solver.eigenvectors() * root.asDiagonal();
  factor_.resize(static_cast<std::size_t>(n * n));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) factor_[static_cast<std::size_t>(i * n + j)] = f(i, j);
}

std::vector<double> PointSetSampler::sample(std::uint64_t seed, std::uint64_t index) const {
  const std::size_t n = points_.size();
  auto rng = sample_stream(seed, index, 1);
  std::vector<double> xi(n), out(n, 0.0);
  for (double& x : xi) x = standard_normal(rng);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += factor_[i * n + j] * xi[j];
  return out;
}

FieldFunction PointSetSampler::sample_function(std::uint64_t seed, std::uint64_t index) const {
  return [points = points_, values = sample(seed, index)](const Point& p) {
    for (std::size_t i = 0; i < points.size(); ++i)
      if (std::abs(points[i][0] - p[0]) < 1e-12 && std::abs(points[i][1] - p[1]) < 1e-12 &&
          std::abs(points[i][2] - p[2]) < 1e-12)
        return values[i];
    throw std::invalid_argument("PointSetSampler: field evaluated off its point set");
  };
}

FieldEnsemble multiscale_assemble(const std::vector<FieldEnsemble>& scales) {
  if (scales.empty()) throw std::invalid_argument("multiscale_assemble: no ensembles");
  FieldEnsemble out = scales.front();
  for (std::size_t s = 1; s < scales.size(); ++s) {
    const FieldEnsemble& e = scales[s];
    if (!(e.grid == out.grid)) throw std::invalid_argument("multiscale_assemble: ensembles live on different grids");
    if (e.count() != out.count()) throw std::invalid_argument("multiscale_assemble: ensembles differ in size");
    for (std::size_t i = 0; i < e.count(); ++i)
      for (std::size_t k = 0; k < e.samples[i].values.size(); ++k) out.samples[i].values[k] += e.samples[i].values[k];
  }
  for (auto& f : out.samples) f.scale_index.reset();
  if (scales.size() > 1) out.kernel_id = "multiscale sum of " + std::to_string(scales.size()) + " scales";
  return out;
}

double Estimate::zscore(double reference) const {
  const double diff = value - reference;
  if (std_error == 0.0) return diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
  return diff / std_error;
}

Estimate mean_estimate(const std::vector<double>& obs) {
  Estimate e;
  e.count = obs.size();
  if (obs.empty()) return e;
  double mean = 0.0;
  for (double x : obs) mean += x;
  mean /= static_cast<double>(obs.size());
  double ss = 0.0;
  for (double x : obs) ss += (x - mean) * (x - mean);
  e.value = mean;
  if (obs.size() > 1) e.std_error = std::sqrt(ss / static_cast<double>(obs.size() - 1) / static_cast<double>(obs.size()));
  return e;
}

Estimate empirical_covariance(const FieldEnsemble& a, const FieldEnsemble& b, Site disp) {
  if (!(a.grid == b.grid) || a.count() != b.count())
    throw std::invalid_argument("empirical_covariance: ensembles do not match");
  const LatticeGrid& g = a.grid;
  std::vector<std::size_t> shifted(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Site s = g.coords(i);
    shifted[i] = g.index({s[0] + disp[0], s[1] + disp[1], s[2] + disp[2]});
  }
  std::vector<double> per_sample(a.count());
  for (std::size_t k = 0; k < a.count(); ++k) {
    const auto& x = a.samples[k].values;
    const auto& y = b.samples[k].values;
    double sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) sum += x[i] * y[shifted[i]];
    per_sample[k] = sum / static_cast<double>(g.size());
  }
  return mean_estimate(per_sample);
}

SlowVariation slow_variation_probability(const FieldEnsemble& e, const CovarianceKernel& kernel, double gamma,
                                         Site disp) {
  if (!(gamma > 0.0)) throw std::invalid_argument("slow_variation_probability: gamma must be positive");
  const LatticeGrid& g = e.grid;
  std::vector<double> per_sample(e.count());
  for (std::size_t k = 0; k < e.count(); ++k) {
    const auto& v = e.samples[k].values;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Site s = g.coords(i);
      const double diff = v[i] - v[g.index({s[0] + disp[0], s[1] + disp[1], s[2] + disp[2]})];
      if (std::abs(diff) >= gamma) ++hits;
    }
    per_sample[k] = static_cast<double>(hits) / static_cast<double>(g.size());
  }
  SlowVariation out;
  out.probability = mean_estimate(per_sample);
  const double r = g.displacement_length(disp);
  out.bound = 2.0 * (kernel.exact(0.0) - kernel.exact(r)) / (gamma * gamma);
  return out;
}

void write_ensemble(const std::filesystem::path& stem, const FieldEnsemble& e, const CovarianceKernel& kernel) {
  std::filesystem::path bin = stem;
  bin += ".bin";
  std::filesystem::path manifest = stem;
  manifest += ".json";
  {
    std::ofstream out(bin, std::ios::binary);
    if (!out) throw std::runtime_error("write_ensemble: cannot open " + bin.string());
    for (const auto& f : e.samples)
      out.write(reinterpret_cast<const char*>(f.values.data()), static_cast<std::streamsize>(f.values.size() * sizeof(double)));
  }
  nlohmann::json j;
  j["seed"] = e.seed;
  j["count"] = e.count();
  j["kernel_id"] = e.kernel_id;
  j["kernel"] = {{"kind", to_string(kernel.kind())},
                 {"L", std::isnan(kernel.L()) ? nlohmann::json(nullptr) : nlohmann::json(kernel.L())},
                 {"n", kernel.n() < 0 ? nlohmann::json(nullptr) : nlohmann::json(kernel.n())},
                 {"d", kernel.dim().d()},
                 {"phi_dim", kernel.dim().phi_dim()},
                 {"range", kernel.finite_range() ? nlohmann::json(kernel.range()) : nlohmann::json("inf")}};
  j["grid"] = {{"d", e.grid.d}, {"extent", e.grid.extent}, {"spacing", e.grid.spacing}};
  if (!e.samples.empty() && e.samples.front().scale_index) j["scale_index"] = *e.samples.front().scale_index;
  j["data"] = bin.filename().string();
  j["format"] = "float64-le";
  std::ofstream out(manifest);
  if (!out) throw std::runtime_error("write_ensemble: cannot open " + manifest.string());
  out << j.dump(2) << "\n";
}

FieldEnsemble read_ensemble(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::invalid_argument("read_ensemble: cannot open " + manifest.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw std::invalid_argument(std::string("read_ensemble: malformed manifest: ") + ex.what());
  }
  FieldEnsemble e;
  e.seed = j.at("seed").get<std::uint64_t>();
  e.kernel_id = j.value("kernel_id", std::string());
  e.grid = LatticeGrid(j.at("grid").at("d").get<int>(), j.at("grid").at("extent").get<int>(),
                       j.at("grid").at("spacing").get<double>());
  const auto count = j.at("count").get<std::size_t>();
  std::optional<int> scale;
  if (j.contains("scale_index")) scale = j["scale_index"].get<int>();
  const auto bin = manifest.parent_path() / j.at("data").get<std::string>();
  std::ifstream data(bin, std::ios::binary);
  if (!data) throw std::invalid_argument("read_ensemble: cannot open " + bin.string());
  const std::size_t n = e.grid.size();
  for (std::size_t k = 0; k < count; ++k) {
    std::vector<double> values(n);
    data.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!data) throw std::invalid_argument("read_ensemble: data file is truncated");
    e.samples.emplace_back(e.grid, std::move(values), scale);
  }
  return e;
}

}  // namespace erg
