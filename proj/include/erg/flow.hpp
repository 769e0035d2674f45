#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "erg/kernel.hpp"

namespace erg {

/// One term of :phi(x)^p: :phi(y)^q: after Wick's theorem: `multiplicity` * C(x - y)^k
/// * :phi(x)^{p-k} phi(y)^{q-k}:, with k = contractions.
struct WickChannel {
  int contractions = 0;
  long multiplicity = 0;
  int x_power = 0;
  int y_power = 0;
};

/// Channels of :phi(x)^p::phi(y)^q:, multiplicity binom(p,k) binom(q,k) k!.
std::vector<WickChannel> wick_product_channels(int p, int q);
/// "1,9,18,6" for the channels of :phi^3::phi^3:.
std::string channel_combinatorics(const std::vector<WickChannel>& channels);

/// Kernel integrals over R^d: I1 = int u C, I2 = int u C^2, I3 = int u C^2 |z|^2.
struct KernelMoments {
  double I1 = 0.0;
  double I2 = 0.0;
  double I3 = 0.0;
};

KernelMoments kernel_moments(const MollifierU& u, const CovarianceKernel& C, double rel_tol = 1e-11);

struct FlowCoefficients {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double e_g = 0.0;
  double e_mu = 0.0;
  double e_xi = 0.0;
  FieldDimension dim{1, 0.25};
  std::vector<WickChannel> channels;
  KernelMoments moments;
};

/// Linear exponents d - 4[phi], d - 2[phi], d - 2[phi] - 2.
FlowCoefficients linear_exponents(const FieldDimension& dim);

/// a, b, c from the local parts of -(1/2) V_phi u V_phi for V = g :phi^4:: the :phi^4: channel
/// gives a, the :phi^2: channel gives b, and its second-moment localization gives c. The
/// :phi^6: channel is irrelevant here and only recorded in `channels`.
FlowCoefficients derive_coefficients(const MollifierU& u, const CovarianceKernel& C);

struct CouplingState {
  double t = 0.0;
  double g = 0.0;
  double mu = 0.0;
  double xi = 0.0;
};

struct FlowDerivative {
  double g = 0.0;
  double mu = 0.0;
  double xi = 0.0;
};

/// (e_g g - a g^2, e_mu mu - b g^2, e_xi xi + c g^2).
FlowDerivative flow_rhs(const CouplingState& s, const FlowCoefficients& k);

struct FlowTrajectory {
  std::vector<CouplingState> states;
  double step = 0.0;
  FlowCoefficients coefficients;

  const CouplingState& final() const { return states.back(); }
};

/// A trajectory that left the representable range; `partial` ends at the last finite state.
class FlowDivergence : public NumericalError {
 public:
  FlowDivergence(const std::string& what, double blow_up_time, FlowTrajectory partial)
      : NumericalError(what), blow_up_time_(blow_up_time), partial_(std::move(partial)) {}
  /// Local estimate t + |x| / |dx/dt| from the last finite state, for the fastest component.
  double blow_up_time() const { return blow_up_time_; }
  const FlowTrajectory& partial() const { return partial_; }

 private:
  double blow_up_time_;
  FlowTrajectory partial_;
};

/// Classical RK4 from initial.t to initial.t + T with ceil(T / h) equal steps, recording every
/// state. Throws FlowDivergence when a component exceeds `bound` or becomes non-finite.
FlowTrajectory integrate_flow(const CouplingState& initial, const FlowCoefficients& k, double T, double h,
                              double bound = 1e150);

struct FixedPoint {
  double g_star = 0.0;
  double stability_exponent = 0.0;
};

/// g* = e_g / a when e_g > 0, else 0; exponent e_g - 2 a g*.
FixedPoint fixed_point(const FlowCoefficients& k);

/// Whether the g trajectory from g0 stays bounded for all t >= 0.
bool g_trajectory_bounded(double g0, const FlowCoefficients& k);

/// mu_c(g0) = b int_0^inf e^{-e_mu s} g_s^2 ds along the RK4 g trajectory (step h), truncated
/// once b e^{-e_mu T} sup g^2 / e_mu < tail_tol. Throws std::invalid_argument for unbounded g
/// trajectories or e_mu <= 0.
double critical_mass(double g0, const FlowCoefficients& k, double h = 1e-3, double tail_tol = 1e-12);

/// The critical trajectory on [0, T]: g and xi integrated forward, mu_t = mu_c(g_t) re-evaluated
/// at every recorded time (forward integration of mu amplifies errors by e^{e_mu t}).
FlowTrajectory critical_trajectory(double g0, const FlowCoefficients& k, double T, double h, double xi0 = 0.0);

/// Bisection on mu0 until the bracket is narrower than `width`, classifying each trial by the
/// sign of mu at the horizon. Throws std::invalid_argument unless the bracket ends go to
/// opposite signs (lower end negative).
double critical_mass_shooting(double g0, const FlowCoefficients& k, double horizon, std::pair<double, double> bracket,
                              double h = 1e-3, double width = 1e-12);

/// Least-squares slope of log|values| against t over t in [t_from, t_to].
double fit_log_slope(const std::vector<double>& t, const std::vector<double>& values, double t_from, double t_to);

/// Bare couplings for cutoff eps_N = L^{-N}: xi~ = eps^{2[phi]-d+2} xi, g~ = eps^{4[phi]-d} g,
/// mu~ = eps^{2[phi]-d} mu.
CouplingState cutoff_schedule(const CouplingState& dimensionless, const FieldDimension& dim, int N, double L);
CouplingState inverse_cutoff_schedule(const CouplingState& bare, const FieldDimension& dim, int N, double L);

/// `#`-prefixed metadata, then t,g,mu,xi.
void write_trajectory_csv(std::ostream& os, const FlowTrajectory& tr);
/// `#`-prefixed metadata, then a,b,c,e_g,e_mu,e_xi,channel_combinatorics.
void write_coefficients_csv(std::ostream& os, const FlowCoefficients& k);

}  // namespace erg
