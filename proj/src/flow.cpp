#include "erg/flow.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace erg {

namespace {

long binomial(int n, int k) {
  long r = 1;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

bool finite_state(const CouplingState& s, double bound) {
  return std::isfinite(s.g) && std::isfinite(s.mu) && std::isfinite(s.xi) && std::abs(s.g) <= bound &&
         std::abs(s.mu) <= bound && std::abs(s.xi) <= bound;
}

CouplingState rk4_step(const CouplingState& s, const FlowCoefficients& k, double h) {
  auto shift = [](const CouplingState& s, const FlowDerivative& d, double f) {
    return CouplingState{s.t + f, s.g + f * d.g, s.mu + f * d.mu, s.xi + f * d.xi};
  };
  const FlowDerivative k1 = flow_rhs(s, k);
  const FlowDerivative k2 = flow_rhs(shift(s, k1, h / 2), k);
  const FlowDerivative k3 = flow_rhs(shift(s, k2, h / 2), k);
  const FlowDerivative k4 = flow_rhs(shift(s, k3, h), k);
  return CouplingState{s.t + h, s.g + h / 6 * (k1.g + 2 * k2.g + 2 * k3.g + k4.g),
                       s.mu + h / 6 * (k1.mu + 2 * k2.mu + 2 * k3.mu + k4.mu),
                       s.xi + h / 6 * (k1.xi + 2 * k2.xi + 2 * k3.xi + k4.xi)};
}

double blow_up_estimate(const CouplingState& s, const FlowCoefficients& k) {
  const FlowDerivative d = flow_rhs(s, k);
  double best = std::numeric_limits<double>::infinity();
  for (auto [x, dx] : {std::pair{s.g, d.g}, std::pair{s.mu, d.mu}, std::pair{s.xi, d.xi}})
    if (dx != 0.0 && x * dx > 0.0) best = std::min(best, std::abs(x / dx));
  return s.t + best;
}

double sup_g(double g0, const FlowCoefficients& k) {
  const double gs = k.a > 0.0 && k.e_g > 0.0 ? k.e_g / k.a : 0.0;
  return std::max(std::abs(g0), g0 > 0.0 ? gs : 0.0);
}

}  // namespace

std::vector<WickChannel> wick_product_channels(int p, int q) {
  if (p < 0 || q < 0) throw std::invalid_argument("wick_product_channels: negative power");
  std::vector<WickChannel> out;
  long fact = 1;
  for (int k = 0; k <= std::min(p, q); ++k) {
    if (k > 0) fact *= k;
    out.push_back({k, binomial(p, k) * binomial(q, k) * fact, p - k, q - k});
  }
  return out;
}

std::string channel_combinatorics(const std::vector<WickChannel>& channels) {
  std::string s;
  for (const auto& c : channels) s += (s.empty() ? "" : ",") + std::to_string(c.multiplicity);
  return s;
}

KernelMoments kernel_moments(const MollifierU& u, const CovarianceKernel& C, double rel_tol) {
  const int d = C.dim().d();
  if (u.d() != d) throw std::invalid_argument("kernel_moments: mollifier and covariance dimensions differ");
  std::vector<double> cuts;
  const int panels = static_cast<int>(std::lround(u.range() / u.panel_width()));
  for (int i = 0; i <= panels; ++i) cuts.push_back(i * u.panel_width());
  QuadratureOptions q;
  q.rel_tol = rel_tol;
  const double area = unit_sphere_area(d);
  auto moment = [&](int power, int radial) {
    auto f = [&](double r) {
      const double c = C.exact(r);
      return std::pow(r, d - 1 + radial) * u(r) * std::pow(c, power);
    };
    const QuadratureResult res = integrate_pieces(f, cuts, q);
    if (!res.converged) {
      std::ostringstream os;
      os << "kernel_moments: quadrature did not converge (estimate " << res.value << ", error " << res.error << ")";
      throw NumericalError(os.str());
    }
    return area * res.value;
  };
  return {moment(1, 0), moment(2, 0), moment(2, 2)};
}

FlowCoefficients linear_exponents(const FieldDimension& dim) {
  FlowCoefficients k;
  k.dim = dim;
  const double d = dim.d(), p = dim.phi_dim();
  k.e_g = d - 4 * p;
  k.e_mu = d - 2 * p;
  k.e_xi = d - 2 * p - 2;
  return k;
}

FlowCoefficients derive_coefficients(const MollifierU& u, const CovarianceKernel& C) {
  FlowCoefficients k = linear_exponents(C.dim());
  k.channels = wick_product_channels(3, 3);
  k.moments = kernel_moments(u, C);
  // V_phi = 4 g :phi^3:, so the nonlinear term is -(1/2) 16 g^2 sum_k m_k u C^k :phi^{3-k} phi^{3-k}:.
  const double pre = 0.5 * 16.0;
  const double m1 = static_cast<double>(k.channels[1].multiplicity);
  const double m2 = static_cast<double>(k.channels[2].multiplicity);
  k.a = pre * m1 * k.moments.I1;
  k.b = pre * m2 * k.moments.I2;
  // :phi(x) phi(y): = (phi(x)^2 + phi(y)^2)/2 - (phi(x) - phi(y))^2/2, and the isotropic average
  // of (z . grad phi)^2 is |z|^2 |grad phi|^2 / d.
  k.c = pre * m2 * 0.5 * k.moments.I3 / C.dim().d();
  return k;
}

FlowDerivative flow_rhs(const CouplingState& s, const FlowCoefficients& k) {
  const double g2 = s.g * s.g;
  return {k.e_g * s.g - k.a * g2, k.e_mu * s.mu - k.b * g2, k.e_xi * s.xi + k.c * g2};
}

FlowTrajectory integrate_flow(const CouplingState& initial, const FlowCoefficients& k, double T, double h,
                              double bound) {
  if (!(h > 0.0) || !(T >= h)) throw std::invalid_argument("integrate_flow: need h > 0 and T >= h");
  if (!finite_state(initial, bound)) throw std::invalid_argument("integrate_flow: initial state is not finite");
  const auto steps = static_cast<std::size_t>(std::ceil(T / h - 1e-9));
  FlowTrajectory tr;
  tr.step = T / static_cast<double>(steps);
  tr.coefficients = k;
  tr.states.reserve(steps + 1);
  tr.states.push_back(initial);
  for (std::size_t i = 1; i <= steps; ++i) {
    CouplingState next = rk4_step(tr.states.back(), k, tr.step);
    next.t = initial.t + static_cast<double>(i) * tr.step;
    if (!finite_state(next, bound)) {
      const double tb = blow_up_estimate(tr.states.back(), k);
      std::ostringstream os;
      os << "integrate_flow: trajectory diverged after t = " << tr.states.back().t << ", estimated blow-up at t = " << tb;
      throw FlowDivergence(os.str(), tb, std::move(tr));
    }
    tr.states.push_back(next);
  }
  return tr;
}

FixedPoint fixed_point(const FlowCoefficients& k) {
  if (!(k.a > 0.0)) throw std::invalid_argument("fixed_point: requires a > 0");
  const double gs = k.e_g > 0.0 ? k.e_g / k.a : 0.0;
  return {gs, k.e_g - 2 * k.a * gs};
}

bool g_trajectory_bounded(double g0, const FlowCoefficients& k) {
  if (g0 == 0.0) return true;
  if (g0 > 0.0) return k.a > 0.0 || k.e_g <= 0.0;
  return k.e_g < 0.0 && k.a * -g0 < -k.e_g;
}

double critical_mass(double g0, const FlowCoefficients& k, double h, double tail_tol) {
  if (!g_trajectory_bounded(g0, k)) throw std::invalid_argument("critical_mass: the g trajectory is unbounded");
  if (!(k.e_mu > 0.0)) throw std::invalid_argument("critical_mass: requires e_mu > 0");
  const double sg2 = std::pow(sup_g(g0, k), 2);
  if (sg2 == 0.0) return 0.0;
  const double horizon = std::max(h, std::log(k.b * sg2 / (k.e_mu * tail_tol)) / k.e_mu);
  const auto steps = static_cast<std::size_t>(std::ceil(horizon / h));
  // Augmented system (g, J) with J' = b e^{-e_mu s} g^2; J(inf) is the critical mass.
  auto rhs = [&](double s, double g) {
    return std::pair{k.e_g * g - k.a * g * g, k.b * std::exp(-k.e_mu * s) * g * g};
  };
  double g = g0, J = 0.0;
  for (std::size_t i = 0; i < steps; ++i) {
    const double s = static_cast<double>(i) * h;
    const auto [g1, j1] = rhs(s, g);
    const auto [g2, j2] = rhs(s + h / 2, g + h / 2 * g1);
    const auto [g3, j3] = rhs(s + h / 2, g + h / 2 * g2);
    const auto [g4, j4] = rhs(s + h, g + h * g3);
    g += h / 6 * (g1 + 2 * g2 + 2 * g3 + g4);
    J += h / 6 * (j1 + 2 * j2 + 2 * j3 + j4);
  }
  return J;
}

FlowTrajectory critical_trajectory(double g0, const FlowCoefficients& k, double T, double h, double xi0) {
  FlowTrajectory tr = integrate_flow({0.0, g0, 0.0, xi0}, k, T, h);
  for (auto& s : tr.states) s.mu = critical_mass(s.g, k);
  return tr;
}

double critical_mass_shooting(double g0, const FlowCoefficients& k, double horizon, std::pair<double, double> bracket,
                              double h, double width) {
  auto end_mu = [&](double mu0) { return integrate_flow({0.0, g0, mu0, 0.0}, k, horizon, h).final().mu; };
  double lo = bracket.first, hi = bracket.second;
  if (!(lo < hi)) throw std::invalid_argument("critical_mass_shooting: bracket must satisfy lo < hi");
  if (!(end_mu(lo) < 0.0) || !(end_mu(hi) > 0.0))
    throw std::invalid_argument("critical_mass_shooting: bracket ends do not diverge to opposite signs");
  while (hi - lo > width) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (end_mu(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double fit_log_slope(const std::vector<double>& t, const std::vector<double>& values, double t_from, double t_to) {
  if (t.size() != values.size()) throw std::invalid_argument("fit_log_slope: size mismatch");
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < t_from || t[i] > t_to) continue;
    if (values[i] == 0.0) throw std::invalid_argument("fit_log_slope: zero value in the fit window");
    const double y = std::log(std::abs(values[i]));
    n += 1;
    sx += t[i];
    sy += y;
    sxx += t[i] * t[i];
    sxy += t[i] * y;
  }
  if (n < 2) throw std::invalid_argument("fit_log_slope: fewer than two points in the fit window");
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

CouplingState cutoff_schedule(const CouplingState& s, const FieldDimension& dim, int N, double L) {
  if (N < 0) throw std::invalid_argument("cutoff_schedule: N must be nonnegative");
  const double d = dim.d(), p = dim.phi_dim();
  const double eps = std::pow(L, -N);
  return {s.t, std::pow(eps, 4 * p - d) * s.g, std::pow(eps, 2 * p - d) * s.mu, std::pow(eps, 2 * p - d + 2) * s.xi};
}

CouplingState inverse_cutoff_schedule(const CouplingState& s, const FieldDimension& dim, int N, double L) {
  if (N < 0) throw std::invalid_argument("inverse_cutoff_schedule: N must be nonnegative");
  const double d = dim.d(), p = dim.phi_dim();
  const double eps = std::pow(L, -N);
  return {s.t, std::pow(eps, d - 4 * p) * s.g, std::pow(eps, d - 2 * p) * s.mu, std::pow(eps, d - 2 * p - 2) * s.xi};
}

void write_coefficients_csv(std::ostream& os, const FlowCoefficients& k) {
  os << std::setprecision(17);
  os << "# d=" << k.dim.d() << " phi_dim=" << k.dim.phi_dim() << " I1=" << k.moments.I1 << " I2=" << k.moments.I2
     << " I3=" << k.moments.I3 << " phi6_channel=recorded_not_fed\n";
  os << "a,b,c,e_g,e_mu,e_xi,channel_combinatorics\n";
  os << k.a << ',' << k.b << ',' << k.c << ',' << k.e_g << ',' << k.e_mu << ',' << k.e_xi << ",\""
     << channel_combinatorics(k.channels) << "\"\n";
}

void write_trajectory_csv(std::ostream& os, const FlowTrajectory& tr) {
  const auto& k = tr.coefficients;
  os << std::setprecision(17);
  os << "# d=" << k.dim.d() << " phi_dim=" << k.dim.phi_dim() << " a=" << k.a << " b=" << k.b << " c=" << k.c
     << " step=" << tr.step << "\n";
  os << "t,g,mu,xi\n";
  for (const auto& s : tr.states) os << s.t << ',' << s.g << ',' << s.mu << ',' << s.xi << '\n';
}

}  // namespace erg
