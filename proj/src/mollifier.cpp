#include "erg/mollifier.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace erg {

namespace {

constexpr int kNodes = 17;  // Chebyshev-Lobatto nodes per panel

const std::array<double, kNodes>& lobatto_nodes() {
  static const std::array<double, kNodes> nodes = [] {
    std::array<double, kNodes> x{};
    for (int j = 0; j < kNodes; ++j) x[j] = std::cos(std::numbers::pi * j / (kNodes - 1));
    return x;
  }();
  return nodes;
}

double lobatto_node(int j) { return lobatto_nodes()[j]; }

QuadratureOptions convolution_options() {
  QuadratureOptions o;
  o.rel_tol = 1e-13;
  return o;
}

void require_quadrature(const QuadratureResult& q, const char* what) {
  if (!q.converged) throw NumericalError(std::string("convolution quadrature did not converge: ") + what);
}

}  // namespace

FieldDimension::FieldDimension(int d, double phi_dim) : d_(d), phi_dim_(phi_dim) {
  if (d < 1) throw std::invalid_argument("FieldDimension: d must be >= 1");
  if (!(phi_dim > 0.0)) throw std::invalid_argument("FieldDimension: [phi] must be positive");
}

FieldDimension FieldDimension::from_alpha(int d, double alpha) {
  if (!(alpha > 0.0 && alpha <= 2.0)) throw std::invalid_argument("FieldDimension: alpha must lie in (0, 2]");
  return FieldDimension(d, 0.5 * (d - alpha));
}

FieldDimension FieldDimension::canonical(int d) { return FieldDimension(d, 0.5 * (d - 2)); }

FieldDimension FieldDimension::epsilon_model(double eps) { return FieldDimension(3, 0.25 * (3.0 - eps)); }

double unit_sphere_area(int n) {
  if (n < 1) throw std::invalid_argument("unit_sphere_area: n must be >= 1");
  return 2.0 * std::pow(std::numbers::pi, 0.5 * n) / std::tgamma(0.5 * n);
}

RadialProfile raw_bump_profile() {
  return [](double r) {
    const double s = 0.25 - r * r;
    if (s <= 0.0) return 0.0;
    const double s2 = s * s;
    return s2 * s2;
  };
}

RadialProfile bump_profile(int d) {
  const RadialProfile raw = raw_bump_profile();
  // (g*g)(0) = int g^2 = |S^{d-1}| int_0^{1/2} rho^{d-1} g(rho)^2; the integrand is a polynomial.
  const GaussLegendre rule(24);
  const double norm2 = unit_sphere_area(d) * rule.integrate(
                                                  [&](double rho) {
                                                    const double g = raw(rho);
                                                    return std::pow(rho, d - 1) * g * g;
                                                  },
                                                  0.0, 0.5);
  const double c = 1.0 / std::sqrt(norm2);
  return [raw, c](double r) { return c * raw(r); };
}

double convolve_radial(const RadialProfile& g, int d, double r, const QuadratureOptions& opts) {
  r = std::abs(r);
  if (r >= 1.0) return 0.0;
  if (d == 1) {
    const double lo = r - 0.5, hi = 0.5;
    std::vector<double> pts{lo};
    if (0.0 > lo && 0.0 < hi) pts.push_back(0.0);
    if (r > lo && r < hi && r != 0.0) pts.push_back(r);
    pts.push_back(hi);
    std::sort(pts.begin(), pts.end());
    const auto q = integrate_pieces([&](double y) { return g(std::abs(y)) * g(std::abs(r - y)); }, pts, opts);
    require_quadrature(q, "d=1");
    return q.value;
  }
  const double shell = unit_sphere_area(d - 1);
  if (r == 0.0) {
    const auto q = integrate(
        [&](double rho) {
          const double v = g(rho);
          return std::pow(rho, d - 1) * v * v;
        },
        0.0, 0.5, opts);
    require_quadrature(q, "origin");
    return unit_sphere_area(d) * q.value;
  }
  // Angular integral over the direction of y relative to x, truncated where |x - y| reaches 1/2.
  // A fixed high-order rule keeps it a smooth function of rho, so the outer adaptive
  // integration is not disturbed by inner refinement noise.
  QuadratureOptions inner_opts;
  inner_opts.fixed_panels = 4;
  inner_opts.fixed_order = 20;
  auto angular = [&](double rho) {
    if (rho <= 0.0) return 0.0;
    const double num = r * r + rho * rho - 0.25;
    const double cmax = num / (2.0 * r * rho);  // cos(theta) at |x - y| = 1/2
    if (cmax >= 1.0) return 0.0;
    const double theta_hi = cmax <= -1.0 ? std::numbers::pi : std::acos(cmax);
    const auto inner = integrate(
        [&](double theta) {
          const double dist2 = r * r + rho * rho - 2.0 * r * rho * std::cos(theta);
          return std::pow(std::sin(theta), d - 2) * g(std::sqrt(std::max(dist2, 0.0)));
        },
        0.0, theta_hi, inner_opts);
    return inner.value;
  };
  std::vector<double> pts{0.0, 0.5};
  for (double b : {0.5 - r, r - 0.5, r})
    if (b > 0.0 && b < 0.5) pts.push_back(b);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  const auto q = integrate_pieces([&](double rho) { return std::pow(rho, d - 1) * g(rho) * angular(rho); }, pts, opts);
  require_quadrature(q, "radial");
  return shell * q.value;
}

MollifierU build_mollifier(const RadialProfile& profile_g, int d, double grid_resolution, int profile_smoothness) {
  if (d < 1) throw std::invalid_argument("build_mollifier: d must be >= 1");
  if (!(grid_resolution > 0.0)) throw std::invalid_argument("build_mollifier: grid_resolution must be positive");
  for (int i = 0; i <= 256; ++i) {
    const double r = 0.5 + 1.5 * i / 256.0;
    const double v = profile_g(r);
    if (v != 0.0) throw std::invalid_argument("build_mollifier: profile does not vanish beyond radius 1/2 (g(" +
                                              std::to_string(r) + ") = " + std::to_string(v) + ")");
  }
  for (int i = 0; i < 256; ++i) {
    if (profile_g(0.5 * i / 256.0) < 0.0) throw std::invalid_argument("build_mollifier: profile must be nonnegative");
  }

  MollifierU u;
  u.d_ = d;
  u.smoothness_order_ = 2 * profile_smoothness + 2;
  u.panels_ = std::max(1, static_cast<int>(std::ceil(1.0 / grid_resolution - 1e-12)));
  u.panel_width_ = 1.0 / u.panels_;
  u.values_.resize(static_cast<std::size_t>(u.panels_) * kNodes);
  QuadratureOptions opts = convolution_options();
  // Absolute floor relative to the peak: near r = 1 u is tiny and its relative accuracy is
  // limited by cancellation in the profile.
  opts.abs_tol = 1e-16 * std::abs(convolve_radial(profile_g, d, 0.0, opts));
  for (int p = 0; p < u.panels_; ++p) {
    const double a = p * u.panel_width_, b = a + u.panel_width_;
    for (int j = 0; j < kNodes; ++j) {
      const double r = 0.5 * (a + b) + 0.5 * (b - a) * lobatto_node(j);
      const bool shared_with_previous = (j == kNodes - 1 && p > 0);
      u.values_[p * kNodes + j] = shared_with_previous ? u.values_[(p - 1) * kNodes] : convolve_radial(profile_g, d, r, opts);
    }
  }
  // Node j = 0 of the last panel sits at r = 1 where u vanishes identically.
  u.values_[(u.panels_ - 1) * kNodes] = 0.0;
  u.origin_ = u.values_[kNodes - 1];
  return u;
}

double MollifierU::operator()(double r) const {
  r = std::abs(r);
  if (r >= 1.0) return 0.0;
  const int p = std::min(panels_ - 1, static_cast<int>(r / panel_width_));
  const double a = p * panel_width_;
  const double t = 2.0 * (r - a) / panel_width_ - 1.0;  // in [-1, 1]
  const double* v = values_.data() + static_cast<std::size_t>(p) * kNodes;
  const auto& x = lobatto_nodes();
  double num = 0.0, den = 0.0;
  for (int j = 0; j < kNodes; ++j) {
    const double diff = t - x[j];
    if (diff == 0.0) return v[j];
    double w = (j % 2 == 0) ? 1.0 : -1.0;
    if (j == 0 || j == kNodes - 1) w *= 0.5;
    w /= diff;
    num += w * v[j];
    den += w;
  }
  return num / den;
}

std::vector<std::pair<double, double>> MollifierU::table() const {
  std::vector<std::pair<double, double>> out;
  for (int p = 0; p < panels_; ++p) {
    const double a = p * panel_width_;
    for (int j = kNodes - 1; j >= 0; --j) {
      if (p > 0 && j == kNodes - 1) continue;
      out.emplace_back(a + 0.5 * panel_width_ * (1.0 + lobatto_node(j)), values_[p * kNodes + j]);
    }
  }
  return out;
}

MollifierU MollifierU::scaled(double factor) const {
  if (!(factor > 0.0)) throw std::invalid_argument("MollifierU::scaled: factor must be positive");
  MollifierU out = *this;
  for (double& v : out.values_) v *= factor;
  out.origin_ *= factor;
  return out;
}

double min_gram_eigenvalue(const std::function<double(double)>& f, const std::vector<std::vector<double>>& points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd gram(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      double dist2 = 0.0;
      for (std::size_t k = 0; k < points[i].size(); ++k) {
        const double diff = points[i][k] - points[j][k];
        dist2 += diff * diff;
      }
      gram(i, j) = gram(j, i) = f(std::sqrt(dist2));
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram, Eigen::EigenvaluesOnly);
  return solver.eigenvalues().minCoeff();
}

}  // namespace erg
