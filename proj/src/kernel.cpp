#include "erg/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace erg {

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::unit_cutoff: return "unit_cutoff";
    case KernelKind::fluctuation: return "fluctuation";
    case KernelKind::rescaled_fluctuation: return "rescaled_fluctuation";
    case KernelKind::scaled: return "scaled";
  }
  return "unknown";
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "unit_cutoff") return KernelKind::unit_cutoff;
  if (s == "fluctuation") return KernelKind::fluctuation;
  if (s == "rescaled_fluctuation") return KernelKind::rescaled_fluctuation;
  if (s == "scaled") return KernelKind::scaled;
  throw std::invalid_argument("unknown kernel kind: " + s);
}

RadialGrid RadialGrid::covering(double r_max, std::size_t points) {
  if (points < 2 || !(r_max > 0.0)) throw std::invalid_argument("RadialGrid: need >= 2 points and r_max > 0");
  return RadialGrid{r_max / static_cast<double>(points - 1), points};
}

double ScaleIntegral::evaluate(double r, double phi_dim, const QuadratureOptions& opts) const {
  r = std::abs(r);
  const double two_phi = 2.0 * phi_dim;
  // u(r / l) vanishes for l <= r, so the effective lower limit is max(lower, r).
  const double lo = std::max(lower, r * u->range());
  if (lo >= upper) return 0.0;
  const MollifierU& uu = *u;
  // Absolute floor tied to the kernel's value at the origin: close to the edge of the support
  // u is tiny and known only to a fixed absolute accuracy.
  const double lower_power = std::pow(lower, -two_phi);
  const double upper_power = upper < kInfinity ? std::pow(upper, -two_phi) : 0.0;
  const double peak = std::abs(uu.at_origin()) * (lower_power - upper_power) / two_phi;
  QuadratureOptions qopts = opts;
  qopts.abs_tol = std::max(opts.abs_tol, 1e-3 * opts.rel_tol * peak);
  const double width = uu.panel_width();
  const int panels = static_cast<int>(std::lround(uu.range() / width));
  // The tabulated u is only piecewise smooth, so integrate between the scales l at which
  // r / l crosses a panel boundary k * width.
  auto crossings = [&](double a, double b, auto&& to_var) {
    std::vector<double> pts{to_var(a)};
    if (r > 0.0) {
      for (int k = panels - 1; k >= 1; --k) {
        const double l = r / (k * width);
        if (l > a && l < b) pts.push_back(to_var(l));
      }
    }
    pts.push_back(to_var(b));
    std::sort(pts.begin(), pts.end());
    return pts;
  };
  auto log_piece = [&](double a, double b) {
    if (!(b > a)) return 0.0;
    const auto pts = crossings(a, b, [](double l) { return std::log(l); });
    const auto q = integrate_pieces([&](double s) { return std::exp(-two_phi * s) * uu(r * std::exp(-s)); }, pts, qopts);
    if (!q.converged) throw NumericalError("scale integral did not converge (log piece)");
    return q.value;
  };
  if (upper < kInfinity) return log_piece(lo, upper);
  // Infinite tail: substitute w = l^{-2[phi]}, which maps [B, inf) to the bounded [0, B^{-2[phi]}].
  const double split = std::max(lo, 2.0 * r);
  const double finite = log_piece(lo, split);
  const double p = 1.0 / two_phi;
  auto pts = crossings(split, kInfinity, [&](double l) { return std::isinf(l) ? 0.0 : std::pow(l, -two_phi); });
  const auto tail = integrate_pieces([&](double w) { return uu(r * std::pow(w, p)); }, pts, qopts);
  if (!tail.converged) throw NumericalError("scale integral did not converge (tail)");
  return finite + tail.value / two_phi;
}

CovarianceKernel::CovarianceKernel(KernelKind kind, FieldDimension dim, double L, int n, double range, RadialGrid grid,
                                   std::vector<double> values, std::optional<ScaleIntegral> generator)
    : kind_(kind),
      dim_(dim),
      L_(L),
      n_(n),
      range_(range),
      grid_(grid),
      values_(std::move(values)),
      generator_(std::move(generator)) {
  if (values_.size() != grid_.points || grid_.points < 2)
    throw std::invalid_argument("CovarianceKernel: table size does not match grid");
  if (!(range_ > 0.0)) throw std::invalid_argument("CovarianceKernel: range must be positive");
}

double CovarianceKernel::interpolate(double r) const {
  const double x = r / grid_.dr;
  const auto last = static_cast<long>(grid_.points) - 1;
  long i = static_cast<long>(std::floor(x));
  if (i >= last) return values_.back();
  const double t = x - static_cast<double>(i);
  if (t == 0.0) return values_[i];
  // Four-point Lagrange stencil i-1 .. i+2; reflect through r = 0 (kernels are even) and
  // shift the stencil inward at the far end of the table.
  long base = std::min<long>(i - 1, last - 3);
  const double s = x - static_cast<double>(base);
  auto at = [&](long j) { return values_[static_cast<std::size_t>(std::abs(j))]; };
  const double f0 = at(base), f1 = at(base + 1), f2 = at(base + 2), f3 = at(base + 3);
  const double s0 = s, s1 = s - 1.0, s2 = s - 2.0, s3 = s - 3.0;
  return -f0 * s1 * s2 * s3 / 6.0 + f1 * s0 * s2 * s3 / 2.0 - f2 * s0 * s1 * s3 / 2.0 + f3 * s0 * s1 * s2 / 6.0;
}

double CovarianceKernel::operator()(double r) const {
  r = std::abs(r);
  if (r >= range_) return 0.0;
  if (r <= grid_.r_max()) return interpolate(r);
  if (generator_) return generator_->evaluate(r, dim_.phi_dim(), quadrature_);
  throw std::out_of_range("CovarianceKernel: radius beyond table of a kernel without integral representation");
}

double CovarianceKernel::exact(double r) const {
  r = std::abs(r);
  if (r >= range_) return 0.0;
  if (generator_) return generator_->evaluate(r, dim_.phi_dim(), quadrature_);
  return (*this)(r);
}

CovarianceKernel zero_kernel(FieldDimension dim, double range, RadialGrid grid) {
  return CovarianceKernel(KernelKind::fluctuation, dim, std::nan(""), -1, range, grid,
                          std::vector<double>(grid.points, 0.0));
}

namespace {

std::vector<double> tabulate(const ScaleIntegral& rep, double phi_dim, const RadialGrid& grid, double range,
                             const QuadratureOptions& q) {
  std::vector<double> values(grid.points);
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double r = grid.r(i);
    values[i] = r >= range ? 0.0 : rep.evaluate(r, phi_dim, q);
  }
  return values;
}

}  // namespace

CovarianceKernel unit_cutoff_covariance(std::shared_ptr<const MollifierU> u, FieldDimension dim, RadialGrid grid,
                                        const KernelOptions& opts) {
  if (!u) throw std::invalid_argument("unit_cutoff_covariance: null mollifier");
  if (u->d() != dim.d()) throw std::invalid_argument("unit_cutoff_covariance: mollifier dimension mismatch");
  ScaleIntegral rep{std::move(u), 1.0, kInfinity};
  auto values = tabulate(rep, dim.phi_dim(), grid, kInfinity, opts.quadrature);
  return CovarianceKernel(KernelKind::unit_cutoff, dim, std::nan(""), -1, kInfinity, grid, std::move(values), rep);
}

CovarianceKernel fluctuation_covariance(std::shared_ptr<const MollifierU> u, FieldDimension dim, double L,
                                        std::optional<RadialGrid> grid, const KernelOptions& opts) {
  if (!u) throw std::invalid_argument("fluctuation_covariance: null mollifier");
  if (!(L > 1.0)) throw std::invalid_argument("fluctuation_covariance: L must exceed 1");
  if (u->d() != dim.d()) throw std::invalid_argument("fluctuation_covariance: mollifier dimension mismatch");
  const double range = L * u->range();
  const RadialGrid g = grid.value_or(RadialGrid::covering(1.05 * range, 1025));
  ScaleIntegral rep{std::move(u), 1.0, L};
  auto values = tabulate(rep, dim.phi_dim(), g, range, opts.quadrature);
  return CovarianceKernel(KernelKind::fluctuation, dim, L, -1, range, g, std::move(values), rep);
}

CovarianceKernel scale_kernel(const CovarianceKernel& k, double L) {
  if (!(L > 0.0)) throw std::invalid_argument("scale_kernel: L must be positive");
  const double factor = std::pow(L, -2.0 * k.dim().phi_dim());
  std::vector<double> values = k.values();
  for (double& v : values) v *= factor;
  RadialGrid grid{k.grid().dr * L, k.grid().points};
  std::optional<ScaleIntegral> rep;
  if (k.generator()) rep = ScaleIntegral{k.generator()->u, k.generator()->lower * L, k.generator()->upper * L};

  KernelKind kind = KernelKind::scaled;
  double newL = L;
  int n = -1;
  if (k.kind() == KernelKind::fluctuation && k.L() == L) {
    kind = KernelKind::rescaled_fluctuation;
    n = 1;
  } else if (k.kind() == KernelKind::rescaled_fluctuation && k.L() == L) {
    kind = KernelKind::rescaled_fluctuation;
    n = k.n() + 1;
  } else if (k.kind() == KernelKind::scaled) {
    newL = k.L() * L;
  }
  return CovarianceKernel(kind, k.dim(), newL, n, k.range() * L, grid, std::move(values), rep);
}

CovarianceKernel rescaled_fluctuation(std::shared_ptr<const MollifierU> u, FieldDimension dim, double L, int n,
                                      std::optional<RadialGrid> grid, const KernelOptions& opts) {
  if (n < 0) throw std::invalid_argument("rescaled_fluctuation: n must be >= 0");
  CovarianceKernel base = fluctuation_covariance(std::move(u), dim, L, std::nullopt, opts);
  if (n == 0) return grid ? resample(base, *grid) : base;
  const double stretch = std::pow(L, n);
  const double factor = std::pow(L, -2.0 * n * dim.phi_dim());
  std::vector<double> values = base.values();
  for (double& v : values) v *= factor;
  const ScaleIntegral rep{base.generator()->u, stretch, stretch * L};
  CovarianceKernel out(KernelKind::rescaled_fluctuation, dim, L, n, base.range() * stretch,
                       RadialGrid{base.grid().dr * stretch, base.grid().points}, std::move(values), rep);
  return grid ? resample(out, *grid) : out;
}

CovarianceKernel resample(const CovarianceKernel& k, RadialGrid grid) {
  std::vector<double> values(grid.points);
  for (std::size_t i = 0; i < grid.points; ++i) {
    const double r = grid.r(i);
    values[i] = k.generator() ? k.exact(r) : k(r);
  }
  return CovarianceKernel(k.kind(), k.dim(), k.L(), k.n(), k.range(), grid, std::move(values), k.generator());
}

DecompositionReport verify_scaling_decomposition(const CovarianceKernel& C, const CovarianceKernel& gamma, double L,
                                                 const KernelOptions& opts) {
  if (!(C.dim() == gamma.dim())) throw std::invalid_argument("verify_scaling_decomposition: dimension mismatch");
  if (!(C.grid() == gamma.grid())) throw std::invalid_argument("verify_scaling_decomposition: grid mismatch");
  if (C.kind() != KernelKind::unit_cutoff) throw std::invalid_argument("verify_scaling_decomposition: C must be unit_cutoff");
  if (gamma.kind() != KernelKind::fluctuation || gamma.L() != L)
    throw std::invalid_argument("verify_scaling_decomposition: Gamma must be the fluctuation covariance for this L");

  const CovarianceKernel stretched = scale_kernel(C, L);
  const double factor = std::pow(L, -2.0 * C.dim().phi_dim());
  DecompositionReport report;
  for (std::size_t i = 0; i < C.grid().points; ++i) {
    const double r = C.grid().r(i);
    double scaled;
    if (C.generator()) {
      scaled = stretched.generator()->evaluate(r, C.dim().phi_dim(), opts.quadrature);
    } else {
      scaled = factor * C(r / L);
    }
    const double residual = std::abs(C.values()[i] - gamma.values()[i] - scaled);
    if (residual > report.max_residual) {
      report.max_residual = residual;
      report.argmax_r = r;
    }
  }
  report.max_relative = report.max_residual / std::abs(C.at_origin());
  return report;
}

namespace {

std::string fmt17(double v) {
  if (std::isnan(v)) return "none";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

double parse_number(const std::string& s) {
  if (s == "none") return std::nan("");
  return std::stod(s);
}

}  // namespace

void write_kernel_csv(std::ostream& os, const CovarianceKernel& k) {
  os << "# kind=" << to_string(k.kind()) << " L=" << fmt17(k.L()) << " n=" << (k.n() < 0 ? std::string("none") : std::to_string(k.n()))
     << " d=" << k.dim().d() << " phi_dim=" << fmt17(k.dim().phi_dim()) << " range=" << fmt17(k.range()) << "\n";
  os << "r,value\n";
  for (std::size_t i = 0; i < k.grid().points; ++i) os << fmt17(k.grid().r(i)) << "," << fmt17(k.values()[i]) << "\n";
}

CovarianceKernel read_kernel_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# ", 0) != 0) throw std::invalid_argument("kernel CSV: missing header");
  std::map<std::string, std::string> meta;
  std::istringstream hs(line.substr(2));
  std::string token;
  while (hs >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("kernel CSV: malformed header token " + token);
    meta[token.substr(0, eq)] = token.substr(eq + 1);
  }
  for (const char* key : {"kind", "L", "n", "d", "phi_dim"})
    if (!meta.count(key)) throw std::invalid_argument(std::string("kernel CSV: header lacks ") + key);
  const KernelKind kind = kernel_kind_from_string(meta["kind"]);
  const double L = parse_number(meta["L"]);
  const int n = meta["n"] == "none" ? -1 : std::stoi(meta["n"]);
  const FieldDimension dim(std::stoi(meta["d"]), parse_number(meta["phi_dim"]));
  double range = kInfinity;
  if (meta.count("range")) {
    range = parse_number(meta["range"]);
  } else if (kind == KernelKind::fluctuation) {
    range = L;
  } else if (kind == KernelKind::rescaled_fluctuation) {
    range = std::pow(L, n + 1);
  }
  if (!std::getline(is, line) || line != "r,value") throw std::invalid_argument("kernel CSV: missing column header");
  std::vector<double> rs, values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("kernel CSV: malformed row " + line);
    rs.push_back(std::stod(line.substr(0, comma)));
    values.push_back(std::stod(line.substr(comma + 1)));
  }
  if (rs.size() < 2) throw std::invalid_argument("kernel CSV: need at least two rows");
  const RadialGrid grid{rs[1], rs.size()};
  for (std::size_t i = 0; i < rs.size(); ++i)
    if (std::abs(rs[i] - grid.r(i)) > 1e-12 * std::max(1.0, grid.r(i)))
      throw std::invalid_argument("kernel CSV: radii are not uniformly spaced");
  return CovarianceKernel(kind, dim, L, n, range, grid, std::move(values));
}

}  // namespace erg
