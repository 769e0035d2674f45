#include "erg/runner.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <random>
#include <sstream>

#include <json.hpp>

#include "erg/flow.hpp"
#include "erg/kernel.hpp"
#include "erg/polymer.hpp"
#include "erg/rg_map.hpp"
#include "erg/sampling.hpp"

namespace erg::runner {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::vector<ConfigKey> kGlobalKeys{
    {"seed", "20240601", "top-level seed; every stream derives from it by name"},
    {"out", "erg_out", "output directory"},
};

const std::map<std::string, std::vector<ConfigKey>>& key_tables() {
  static const std::map<std::string, std::vector<ConfigKey>> tables{
      {"decompose",
       {{"d", "1", "spatial dimension"},
        {"phi_dim", "auto", "field dimension [phi]; auto is 0.25, 0.5, (d-2)/2 for d = 1, 2, >= 3"},
        {"L", "2", "scale factor L > 1"},
        {"r_max", "auto", "largest tabulated radius; auto is 2 L"},
        {"grid_points", "129", "radial grid nodes"},
        {"scales", "4", "number N + 1 of rescaled fluctuations Gamma_0 .. Gamma_N"},
        {"tolerance", "1e-10", "bound on max |C - Gamma_L - S_L C|"}}},
      {"sample",
       {{"d", "1", "spatial dimension"},
        {"phi_dim", "auto", "field dimension [phi]"},
        {"L", "2", "scale factor"},
        {"scale", "none", "scale index n of Gamma_n, or none for Gamma_L"},
        {"extent", "64", "lattice points per axis"},
        {"spacing", "0.25", "lattice spacing"},
        {"count", "2000", "number of samples"},
        {"max_lag", "4", "largest lag (in sites) of the covariance check"},
        {"z_tolerance", "3", "bound on |z| of each covariance lag"}}},
      {"rgcheck",
       {{"d", "1", "spatial dimension"},
        {"phi_dim", "auto", "field dimension [phi]"},
        {"L", "2", "integer scale factor"},
        {"extent", "128", "lattice points per axis"},
        {"spacing", "0.25", "lattice spacing"},
        {"count", "10000", "Monte Carlo samples per check"},
        {"semigroup_n", "1", "n in T_L T_{L^n} = T_{L^{n+1}}"},
        {"t", "1.3", "frequency of the characteristic functional"},
        {"tolerance", "1e-12", "relative tolerance of the exact checks"},
        {"z_tolerance", "3", "bound on |z| of the Monte Carlo checks"}}},
      {"flow",
       {{"d", "4", "spatial dimension"},
        {"phi_dim", "auto", "field dimension [phi]; auto is (d-2)/2"},
        {"eps", "none", "epsilon model (d = 3, [phi] = (3 - eps)/4); overrides d and phi_dim"},
        {"g0", "0.5", "initial quartic coupling"},
        {"mu0", "critical", "initial mass, or critical for the tuned trajectory"},
        {"xi0", "0", "initial gradient coupling"},
        {"horizon", "10", "integration time"},
        {"step", "0.01", "RK4 step"},
        {"tolerance", "1e-8", "tolerance of the closed-form check (d - 4 [phi] = 0)"},
        {"rate_tolerance", "0.01", "relative tolerance of the fitted decay rate"}}},
      {"fixedpoint",
       {{"eps", "0.1", "epsilon of the model"},
        {"g_fraction", "0.5", "critical mass is computed at g0 = g_fraction * g*"},
        {"horizon", "20", "shooting horizon"},
        {"step", "1e-3", "RK4 step for the critical mass"},
        {"tolerance", "1e-12", "tolerance of g* and the stability exponent"},
        {"shooting_tolerance", "1e-6", "tolerance between shooting and the integral formula"}}},
      {"polymer",
       {{"d", "1", "spatial dimension"},
        {"blocks", "2", "unit blocks per axis"},
        {"spacing", "0.25", "lattice spacing"},
        {"L", "2", "block scale of the B map"},
        {"instances", "100", "random instances per check"},
        {"disjointness", "blocks", "compatibility of polymers: blocks or closed"},
        {"tolerance", "1e-12", "relative tolerance of the identities"}}},
      {"report", {{"dir", "auto", "directory holding the manifests; auto is the output directory"}}},
  };
  return tables;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::map<std::string, std::string> read_config_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw InvalidInput("cannot read config file " + p.string());
  if (p.extension() == ".json") {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidInput("bad manifest " + p.string() + ": " + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) throw InvalidInput("manifest has no config object");
    std::map<std::string, std::string> m;
    for (const auto& [k, v] : j["config"].items()) m[k] = v.is_string() ? v.get<std::string>() : v.dump();
    return m;
  }
  return parse_config_text(in);
}

std::shared_ptr<const MollifierU> mollifier(int d) {
  static std::map<int, std::shared_ptr<const MollifierU>> cache;
  auto& u = cache[d];
  if (!u) u = std::make_shared<const MollifierU>(build_mollifier(bump_profile(d), d));
  return u;
}

int checked_dimension(const Config& c) {
  const int d = c.integer("d");
  if (d < 1 || d > 6) throw InvalidInput("d must lie in 1..6");
  return d;
}

FieldDimension lattice_dimension(const Config& c) {
  const int d = checked_dimension(c);
  const auto phi = c.optional_number("phi_dim");
  if (phi) return FieldDimension(d, *phi);
  return FieldDimension(d, d == 1 ? 0.25 : d == 2 ? 0.5 : 0.5 * (d - 2));
}

FieldDimension flow_dimension(const Config& c) {
  if (const auto eps = c.optional_number("eps")) return FieldDimension::epsilon_model(*eps);
  const int d = checked_dimension(c);
  if (const auto phi = c.optional_number("phi_dim")) return FieldDimension(d, *phi);
  if (d <= 2) throw InvalidInput("phi_dim=auto needs d > 2");
  return FieldDimension::canonical(d);
}

FlowCoefficients coefficients_for(const FieldDimension& dim) {
  const auto u = mollifier(dim.d());
  const auto C = unit_cutoff_covariance(u, dim, RadialGrid::covering(2.0, 65));
  return derive_coefficients(*u, C);
}

double positive(const Config& c, const std::string& key) {
  const double v = c.number(key);
  if (!(v > 0.0)) throw InvalidInput(key + " must be positive");
  return v;
}

int positive_int(const Config& c, const std::string& key) {
  const int v = c.integer(key);
  if (v <= 0) throw InvalidInput(key + " must be a positive integer");
  return v;
}

int integer_scale(const Config& c) {
  const double L = c.number("L");
  if (!(L > 1.0)) throw InvalidInput("L must exceed 1");
  if (L != std::round(L)) throw InvalidInput("L must be an integer here");
  return static_cast<int>(L);
}

std::string metadata(const Config& c) {
  std::string s = "# erg " + std::string(kVersion) + " command=" + c.command();
  for (const auto& [k, v] : c.values()) s += " " + k + "=" + v;
  return s + "\n";
}

class Artifacts {
 public:
  Artifacts(const fs::path& out, const Config& c, RunResult& r) : out_(out), c_(c), r_(r) {}

  std::ofstream open(const std::string& name, bool header = true) {
    std::ofstream os(out_ / name);
    if (!os) throw InvalidInput("cannot write " + (out_ / name).string());
    os << std::setprecision(17);
    if (header) os << metadata(c_);
    r_.artifacts.push_back(name);
    return os;
  }
  void record(const std::string& name) { r_.artifacts.push_back(name); }

 private:
  fs::path out_;
  const Config& c_;
  RunResult& r_;
};

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"decompose", "sample", "rgcheck", "flow", "fixedpoint", "polymer", "report"};
  return names;
}

const std::vector<ConfigKey>& config_keys(const std::string& command) {
  static std::map<std::string, std::vector<ConfigKey>> full;
  if (full.empty())
    for (const auto& [name, keys] : key_tables()) {
      auto& v = full[name];
      v = keys;
      v.insert(v.end(), kGlobalKeys.begin(), kGlobalKeys.end());
    }
  const auto it = full.find(command);
  if (it == full.end()) throw InvalidInput("unknown command " + command);
  return it->second;
}

std::map<std::string, std::string> parse_config_text(std::istream& is) {
  std::map<std::string, std::string> m;
  std::string line;
  int number = 0;
  while (std::getline(is, line)) {
    ++number;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput("config line " + std::to_string(number) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw InvalidInput("config line " + std::to_string(number) + ": empty key or value");
    m[key] = value;
  }
  return m;
}

Config::Config(std::string command, std::map<std::string, std::string> values)
    : command_(std::move(command)), values_(std::move(values)) {}

const std::string& Config::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InvalidInput("missing config key " + key);
  return it->second;
}

double Config::number(const std::string& key) const {
  const std::string& s = text(key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v)) throw InvalidInput(key + "=" + s + " is not a finite number");
  return v;
}

int Config::integer(const std::string& key) const {
  const std::string& s = text(key);
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw InvalidInput(key + "=" + s + " is not an integer");
  return v;
}

std::uint64_t Config::unsigned64(const std::string& key) const {
  const std::string& s = text(key);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw InvalidInput(key + "=" + s + " is not an unsigned integer");
  return v;
}

std::optional<double> Config::optional_number(const std::string& key) const {
  const std::string& s = text(key);
  if (s == "auto" || s == "none") return std::nullopt;
  return number(key);
}

Config resolve_config(const std::string& command, const std::optional<fs::path>& config_file,
                      const std::map<std::string, std::string>& overrides) {
  const auto& keys = config_keys(command);
  std::map<std::string, std::string> values;
  for (const auto& k : keys) values[k.name] = k.default_value;
  auto apply = [&](const std::map<std::string, std::string>& m, const std::string& source) {
    for (const auto& [k, v] : m) {
      if (!values.count(k)) throw InvalidInput("unknown key " + k + " for " + command + " (" + source + ")");
      values[k] = v;
    }
  };
  if (config_file) apply(read_config_file(*config_file), config_file->string());
  apply(overrides, "command line");
  Config c(command, values);
  c.unsigned64("seed");
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t named_seed(std::uint64_t seed, const std::string& name) { return derive_seed(seed, fnv1a(name)); }

Check make_check(std::string name, double value, double reference, double tolerance, std::string kind) {
  Check c{std::move(name), value, reference, tolerance, std::move(kind), false};
  if (c.kind == "abs")
    c.pass = std::abs(value - reference) <= tolerance;
  else if (c.kind == "rel")
    c.pass = std::abs(value - reference) <= tolerance * std::abs(reference);
  else if (c.kind == "max")
    c.pass = value <= tolerance;
  else if (c.kind == "zscore")
    c.pass = std::abs(value) <= tolerance;
  else if (c.kind == "gt")
    c.pass = value > reference;
  else
    throw std::invalid_argument("unknown check kind " + c.kind);
  return c;
}

RunResult cmd_decompose(const Config& c, const fs::path& out) {
  RunResult r;
  Artifacts art(out, c, r);
  const FieldDimension dim = lattice_dimension(c);
  const double L = c.number("L");
  if (!(L > 1.0)) throw InvalidInput("L must exceed 1");
  const double r_max = c.optional_number("r_max").value_or(2.0 * L);
  const int points = c.integer("grid_points");
  const int scales = c.integer("scales");
  const double tol = c.number("tolerance");
  if (!(r_max > 0.0) || points < 4 || scales < 1 || scales > 12 || !(tol > 0.0))
    throw InvalidInput("need r_max > 0, grid_points >= 4, scales in 1..12, tolerance > 0");

  const auto u = mollifier(dim.d());
  const auto C = unit_cutoff_covariance(u, dim, RadialGrid::covering(r_max, static_cast<std::size_t>(points)));
  const auto G = fluctuation_covariance(u, dim, L, C.grid());
  const auto rep = verify_scaling_decomposition(C, G, L);

  {
    auto os = art.open("decompose_C.csv", false);
    write_kernel_csv(os, C);
  }
  {
    auto os = art.open("decompose_gamma_L.csv", false);
    write_kernel_csv(os, G);
  }
  {
    auto os = art.open("decompose_residual.csv");
    os << "r,C,gamma_L,S_L_C,residual\n";
    const double s = std::pow(L, -2.0 * dim.phi_dim());
    for (std::size_t i = 0; i < C.grid().points; ++i) {
      const double x = C.grid().r(i), sc = s * C.exact(x / L);
      os << x << "," << C.values()[i] << "," << G.values()[i] << "," << sc << "," << C.values()[i] - G.values()[i] - sc << "\n";
    }
  }
  r.checks.push_back(make_check("decomposition_residual", rep.max_residual, 0.0, tol, "max"));

  auto beyond = [](const CovarianceKernel& k) {
    double worst = 0.0;
    for (std::size_t i = 0; i < k.grid().points; ++i)
      if (k.grid().r(i) >= k.range()) worst = std::max(worst, std::abs(k.values()[i]));
    for (double f : {1.0, 1.0 + 1e-12, 1.5, 3.0}) worst = std::max(worst, std::abs(k(k.range() * f)));
    return worst;
  };
  r.checks.push_back(make_check("finite_range_gamma_L", beyond(G), 0.0, 0.0, "max"));

  double sum = 0.0;
  for (int n = 0; n < scales; ++n) {
    const auto Gn = rescaled_fluctuation(u, dim, L, n);
    auto os = art.open("decompose_gamma_" + std::to_string(n) + ".csv", false);
    write_kernel_csv(os, Gn);
    r.checks.push_back(make_check("finite_range_gamma_" + std::to_string(n), beyond(Gn), 0.0, 0.0, "max"));
    sum += Gn.at_origin();
  }
  const double tail = u->at_origin() * std::pow(L, -2.0 * dim.phi_dim() * scales) / (2.0 * dim.phi_dim());
  r.checks.push_back(make_check("multiscale_tail", C.at_origin() - sum, tail, 1e-8, "rel"));
  return r;
}

RunResult cmd_sample(const Config& c, const fs::path& out) {
  RunResult r;
  Artifacts art(out, c, r);
  const FieldDimension dim = lattice_dimension(c);
  const double L = c.number("L");
  if (!(L > 1.0)) throw InvalidInput("L must exceed 1");
  const int extent = positive_int(c, "extent");
  const double spacing = positive(c, "spacing");
  const int count = positive_int(c, "count");
  const int max_lag = c.integer("max_lag");
  const double zt = positive(c, "z_tolerance");
  if (max_lag < 0 || max_lag >= extent / 2) throw InvalidInput("max_lag must lie in 0 .. extent/2 - 1");
  std::optional<int> scale;
  if (const auto s = c.optional_number("scale")) {
    scale = c.integer("scale");
    if (*scale < 0) throw InvalidInput("scale must be non-negative");
  }
  const auto u = mollifier(dim.d());
  const auto kernel = scale ? rescaled_fluctuation(u, dim, L, *scale) : fluctuation_covariance(u, dim, L);
  const LatticeGrid grid(dim.d(), extent, spacing);
  const std::uint64_t seed = named_seed(c.unsigned64("seed"), "sample");
  const auto ens = sample_gaussian(kernel, grid, seed, static_cast<std::size_t>(count), scale);
  write_ensemble(out / "sample_ensemble", ens, kernel);
  art.record("sample_ensemble.bin");
  art.record("sample_ensemble.json");

  auto os = art.open("sample_covariance.csv");
  os << "lag,distance,empirical,stderr,kernel,zscore\n";
  for (int k = 0; k <= max_lag; ++k) {
    const Estimate e = empirical_covariance(ens, Site{k, 0, 0});
    const double ref = kernel(k * spacing);
    os << k << "," << k * spacing << "," << e.value << "," << e.std_error << "," << ref << "," << e.zscore(ref) << "\n";
    r.checks.push_back(make_check("covariance_lag_" + std::to_string(k), e.zscore(ref), 0.0, zt, "zscore"));
  }
  return r;
}

RunResult cmd_rgcheck(const Config& c, const fs::path& out) {
  RunResult r;
  Artifacts art(out, c, r);
  const FieldDimension dim = lattice_dimension(c);
  const int L = integer_scale(c);
  const int extent = positive_int(c, "extent");
  const double a = positive(c, "spacing");
  const auto count = static_cast<std::size_t>(positive_int(c, "count"));
  const int n = positive_int(c, "semigroup_n");
  const double t = c.number("t");
  const double tol = positive(c, "tolerance"), zt = positive(c, "z_tolerance");
  const std::uint64_t seed = c.unsigned64("seed");
  const int d = dim.d();
  const double phi = dim.phi_dim();

  const auto u = mollifier(d);
  const LatticeGrid grid(d, extent, a);
  const double Ln = std::pow(double(L), n);
  grid.require_no_wrap(Ln * L);
  const auto C = unit_cutoff_covariance(u, dim, RadialGrid::covering(0.5 * grid.length(), 65));
  const auto G = fluctuation_covariance(u, dim, L);
  std::vector<Point> region;
  for (int i : {4, 5, 6, 8}) region.push_back({i * a, 0, 0});
  const FieldFunction field = random_smooth_field(named_seed(seed, "rgcheck/phi"), d);
  std::vector<ReportRow> rows;

  auto mc_row = [&](const std::string& check, const std::string& name, const Estimate& e, double ref) {
    rows.push_back({check, name, e.value, e.std_error, ref, e.zscore(ref)});
    r.checks.push_back(make_check(check + "_" + name, e.zscore(ref), 0.0, zt, "zscore"));
  };

  std::vector<WickMonomial> monomials;
  for (int m = 1; m <= 4; ++m) monomials.push_back(power_monomial(m, region, a, C));
  monomials.push_back(gradient_monomial(region, a, C));
  for (const auto& p : monomials) {
    const std::string name = p.n_derivs ? "grad2" : "phi" + std::to_string(p.m);
    const auto an = apply_TL_analytic(p, L, C, G);
    const double expected = std::pow(double(L), d - p.m * phi - p.n_derivs);
    rows.push_back({"eigen_prefactor", name, an.factor, 0.0, expected, 0.0});
    r.checks.push_back(make_check("eigen_prefactor_" + name, an.factor, expected, tol, "rel"));
    const Estimate mc = apply_TL_mc(monomial_functional(p), L, G, grid, field, named_seed(seed, "rgcheck/tl/" + name), count);
    mc_row("tl_mc", name, mc, an.evaluate(field));
  }

  const auto GLn = fluctuation_covariance(u, dim, Ln);
  const auto GLn1 = fluctuation_covariance(u, dim, Ln * L);
  for (int m = 1; m <= 4; ++m) {
    const auto s = semigroup_check_analytic(power_monomial(m, region, a, C), L, n, C, G, GLn, GLn1);
    const double rel = s.difference / std::max(std::abs(s.rhs.value), 1e-300);
    rows.push_back({"semigroup_analytic", "phi" + std::to_string(m), s.lhs.value, 0.0, s.rhs.value, 0.0});
    r.checks.push_back(make_check("semigroup_analytic_phi" + std::to_string(m), rel, 0.0, tol, "max"));
  }
  const Point x0{Ln * 4 * a, 0, 0};
  const auto sg = semigroup_check_mc(characteristic_functional(t, x0), L, n, G, GLn, GLn1, grid, field,
                                     named_seed(seed, "rgcheck/semigroup"), count, t);
  rows.push_back({"semigroup_mc", "characteristic", sg.difference, sg.std_error, 0.0, sg.zscore});
  r.checks.push_back(make_check("semigroup_mc_characteristic", sg.zscore, 0.0, zt, "zscore"));

  const Point xi{4 * a, 0, 0};
  for (int m : {2, 4}) {
    const auto inv = invariance_check(point_power_functional(xi, m), L, C, G, grid,
                                      named_seed(seed, "rgcheck/invariance/" + std::to_string(m)), count);
    rows.push_back({"invariance", "phi" + std::to_string(m), inv.lhs.value, inv.std_error, inv.rhs.value, inv.zscore});
    r.checks.push_back(make_check("invariance_phi" + std::to_string(m), inv.zscore, 0.0, zt, "zscore"));
  }
  for (int m = 1; m <= 4; ++m) {
    const auto p = power_monomial(m, region, a, C);
    const auto ct = contraction_check(monomial_functional(p), analytic_TL_functional(p, L, C, G), C,
                                      named_seed(seed, "rgcheck/contraction/" + std::to_string(m)), count);
    const double z = ct.std_error > 0 ? ct.difference / ct.std_error : (ct.difference <= 0 ? 0.0 : INFINITY);
    rows.push_back({"contraction", "phi" + std::to_string(m), ct.lhs.value, ct.std_error, ct.rhs.value, z});
    r.checks.push_back(make_check("contraction_phi" + std::to_string(m), z, 0.0, zt, "max"));
  }
  auto os = art.open("rgcheck_report.csv");
  write_report_csv(os, rows);
  return r;
}

RunResult cmd_flow(const Config& c, const fs::path& out) {
  RunResult r;
  Artifacts art(out, c, r);
  const FieldDimension dim = flow_dimension(c);
  const double g0 = c.number("g0"), xi0 = c.number("xi0");
  const double T = positive(c, "horizon"), h = positive(c, "step");
  const double tol = positive(c, "tolerance"), rate_tol = positive(c, "rate_tolerance");
  if (g0 < 0.0) throw InvalidInput("g0 must be non-negative");
  const auto k = coefficients_for(dim);
  {
    auto os = art.open("flow_coefficients.csv", false);
    write_coefficients_csv(os, k);
  }
  for (const auto& [name, v] : {std::pair{"a", k.a}, std::pair{"b", k.b}, std::pair{"c", k.c}})
    r.checks.push_back(make_check(std::string("coefficient_") + name + "_positive", v, 0.0, 0.0, "gt"));

  FlowTrajectory tr;
  if (c.text("mu0") == "critical")
    tr = critical_trajectory(g0, k, T, h, xi0);
  else
    tr = integrate_flow({0.0, g0, c.number("mu0"), xi0}, k, T, h);
  {
    auto os = art.open("flow_trajectory.csv", false);
    write_trajectory_csv(os, tr);
  }
  const auto& last = tr.final();
  if (std::abs(k.e_g) <= 1e-12) {
    r.checks.push_back(make_check("closed_form_g", last.g, g0 / (1.0 + k.a * g0 * last.t), tol, "abs"));
  } else if (k.e_g < 0.0) {
    std::vector<double> t, g;
    for (const auto& s : tr.states) {
      t.push_back(s.t);
      g.push_back(s.g);
    }
    r.checks.push_back(make_check("decay_rate", fit_log_slope(t, g, 0.5 * T, T), k.e_g, rate_tol, "rel"));
  } else {
    const double gs = fixed_point(k).g_star;
    const double ratio = std::abs(last.g - gs) / std::max(std::abs(g0 - gs), 1e-300);
    r.checks.push_back(make_check("approach_fixed_point", ratio, 0.0, 1.0, "max"));
  }
  return r;
}

RunResult cmd_fixedpoint(const Config& c, const fs::path& out) {
  RunResult r;
  Artifacts art(out, c, r);
  const double eps = c.number("eps");
  if (!(eps > 0.0 && eps < 1.0)) throw InvalidInput("eps must lie in (0, 1)");
  const double frac = positive(c, "g_fraction");
  const double T = positive(c, "horizon"), h = positive(c, "step");
  const double tol = positive(c, "tolerance"), stol = positive(c, "shooting_tolerance");
  const auto dim = FieldDimension::epsilon_model(eps);
  const auto k = coefficients_for(dim);
  const auto fp = fixed_point(k);
  r.checks.push_back(make_check("g_star", fp.g_star, eps / k.a, tol, "rel"));
  r.checks.push_back(make_check("stability_exponent", fp.stability_exponent, -eps, tol, "abs"));
  const double g0 = frac * fp.g_star;
  const double mi = critical_mass(g0, k, h);
  const double ms = critical_mass_shooting(g0, k, T, {mi - 1.0, mi + 1.0}, h);
  r.checks.push_back(make_check("critical_mass_shooting", ms, mi, stol, "abs"));
  {
    auto os = art.open("fixedpoint.csv");
    os << "eps,a,g_star,stability_exponent,g0,mu_c_integral,mu_c_shooting\n";
    os << eps << "," << k.a << "," << fp.g_star << "," << fp.stability_exponent << "," << g0 << "," << mi << "," << ms << "\n";
  }
  {
    auto os = art.open("fixedpoint_trajectory.csv", false);
    write_trajectory_csv(os, critical_trajectory(g0, k, T, 0.01));
  }
  {
    auto os = art.open("fixedpoint_coefficients.csv", false);
    write_coefficients_csv(os, k);
  }
  return r;
}

RunResult cmd_polymer(const Config& c, const fs::path& out) {
  RunResult r;
  Artifacts art(out, c, r);
  const int d = checked_dimension(c);
  if (d > 3) throw InvalidInput("polymer lattices need d <= 3");
  const int blocks = positive_int(c, "blocks");
  const double spacing = positive(c, "spacing");
  const int L = integer_scale(c);
  const int instances = positive_int(c, "instances");
  const double tol = positive(c, "tolerance");
  const std::string pol_text = c.text("disjointness");
  if (pol_text != "blocks" && pol_text != "closed") throw InvalidInput("disjointness must be blocks or closed");
  const Disjointness policy = pol_text == "blocks" ? Disjointness::blocks : Disjointness::closed;
  std::array<int, 3> ext{1, 1, 1};
  for (int i = 0; i < d; ++i) ext[i] = blocks;
  const BlockLattice lat(d, ext, spacing);
  if (lat.count() > 6) throw InvalidInput("the ordered oracle is limited to 6 blocks");
  std::mt19937_64 rng(named_seed(c.unsigned64("seed"), "polymer"));
  std::uniform_real_distribution<double> U(0.0, 1.0);

  double worst = 0.0;
  for (int i = 0; i < instances; ++i) {
    std::vector<double> boltz(lat.count());
    for (double& b : boltz) b = 0.5 + U(rng);
    std::map<Mask, double> act;
    for (Mask X : enumerate_polymers(lat, lat.all(), lat.count())) act[X] = 0.6 * U(rng) - 0.3;
    const auto activity = [&act](Mask X) { return act.at(X); };
    for (Mask vol = 1; vol <= lat.all(); ++vol) {
      if ((vol & lat.all()) != vol) continue;
      const double z = resum(lat, vol, boltz, activity, lat.count(), policy);
      const double o = ordered_resum(lat, vol, boltz, activity, lat.count(), policy);
      worst = std::max(worst, std::abs(z - o) / std::max(std::abs(o), 1.0));
    }
  }
  r.checks.push_back(make_check("resummation_vs_ordered", worst, 0.0, tol, "max"));

  bool single_block = true;
  for (int i = 0; i < d; ++i) single_block = single_block && blocks == L;
  if (single_block) {
    double worst_b = 0.0;
    for (int i = 0; i < instances; ++i) {
      const BlockPotential V(lat, LocalPotential::phi4(0.5 * U(rng), U(rng) - 0.5, 0.0, d, spacing));
      const BlockPotential Vt(lat, LocalPotential::phi4(0.5 * U(rng), U(rng) - 0.5, 0.0, d, spacing));
      const FieldFunction phi = random_smooth_field(rng(), d);
      const FieldFunction zeta = random_smooth_field(rng(), d, 3, 1.0, 0.5);
      const FieldFunction psi = [&](const Point& x) { return zeta(x) + phi(x); };
      const Mask Y = lat.all();
      const double b = map_B(zero_activity(policy), V, Vt, L, Y, zeta, phi);
      const double ref = std::exp(-V.value(Y, psi)) - std::exp(-Vt.value(Y, phi));
      worst_b = std::max(worst_b, std::abs(b - ref) / std::max(std::abs(ref), 1e-300));
    }
    r.checks.push_back(make_check("b_map_closed_form", worst_b, 0.0, tol, "max"));
  }

  const BlockPotential V(lat, LocalPotential::phi4(0.1, 0.05, 0.0, d, spacing));
  const PolymerActivity K{[&V](Mask X, const FieldFunction& f) { return 0.05 * std::exp(-V.value(X, f)); },
                          lat.count(), policy};
  auto os = art.open("polymer_report.csv", false);
  write_polymer_report(os, K, lat, lat.all(), L);
  return r;
}

int cmd_report(const fs::path& dir, std::ostream& log) {
  if (!fs::is_directory(dir)) throw InvalidInput("no such directory " + dir.string());
  std::vector<fs::path> manifests;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > 14 && name.ends_with(".manifest.json")) manifests.push_back(e.path());
  }
  if (manifests.empty()) throw InvalidInput("no manifests in " + dir.string());
  std::sort(manifests.begin(), manifests.end());
  std::ofstream os(dir / "summary.csv");
  if (!os) throw InvalidInput("cannot write summary in " + dir.string());
  os << std::setprecision(17) << "# erg " << kVersion << " report manifests=" << manifests.size() << "\n";
  os << "command,check,value,reference,tolerance,status\n";
  int failed = 0;
  for (const auto& p : manifests) {
    std::ifstream in(p);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw InvalidInput("bad manifest " + p.string() + ": " + e.what());
    }
    const std::string cmd = j.value("command", "?");
    const auto& checks = j.contains("checks") ? j["checks"] : json::array();
    for (const auto& ch : checks) {
      const bool pass = ch.value("pass", false);
      auto num = [&](const char* k) { return ch.contains(k) && ch[k].is_number() ? format_double(ch[k].get<double>()) : std::string("nan"); };
      os << cmd << "," << ch.value("name", "?") << "," << num("value") << "," << num("reference") << "," << num("tolerance")
         << "," << (pass ? "pass" : "fail") << "\n";
      if (!pass) {
        ++failed;
        log << "FAIL " << cmd << " " << ch.value("name", "?") << "\n";
      }
    }
    if (j.value("exit_code", 0) != 0 && checks.empty()) {
      ++failed;
      os << cmd << ",run,nan,nan,nan,fail\n";
      log << "FAIL " << cmd << " run: " << j.value("message", "") << "\n";
    }
  }
  log << "report: " << manifests.size() << " manifests, " << failed << " failures\n";
  return failed ? kExitCheckFailed : kExitPass;
}

std::string help_text(const std::string& command) {
  std::ostringstream os;
  for (const auto& k : config_keys(command))
    os << "  " << std::left << std::setw(20) << k.name << std::setw(12) << k.default_value << k.help << "\n";
  return os.str();
}

int run_command(const std::string& command, const std::optional<fs::path>& config_file,
                const std::map<std::string, std::string>& overrides, std::ostream& log) {
  Config config;
  fs::path out;
  try {
    config = resolve_config(command, config_file, overrides);
    out = config.text("out");
    if (command == "report") {
      const std::string dir = config.text("dir");
      return cmd_report(dir == "auto" ? out : fs::path(dir), log);
    }
    fs::create_directories(out);
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const fs::filesystem_error& e) {
    log << "error: " << e.what() << "\n";
    return kExitInvalidInput;
  }

  const auto start = std::chrono::steady_clock::now();
  RunResult result;
  int code = kExitPass;
  std::string message;
  try {
    if (command == "decompose")
      result = cmd_decompose(config, out);
    else if (command == "sample")
      result = cmd_sample(config, out);
    else if (command == "rgcheck")
      result = cmd_rgcheck(config, out);
    else if (command == "flow")
      result = cmd_flow(config, out);
    else if (command == "fixedpoint")
      result = cmd_fixedpoint(config, out);
    else
      result = cmd_polymer(config, out);
    for (const auto& ch : result.checks)
      if (!ch.pass) code = kExitCheckFailed;
  } catch (const std::invalid_argument& e) {
    code = kExitInvalidInput;
    message = e.what();
  } catch (const std::exception& e) {
    code = kExitCheckFailed;
    message = e.what();
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["config"] = json::object();
  for (const auto& [k, v] : config.values()) j["config"][k] = v;
  j["artifacts"] = result.artifacts;
  j["wall_clock_seconds"] = wall;
  j["checks"] = json::array();
  for (const auto& ch : result.checks) {
    json cj{{"name", ch.name}, {"kind", ch.kind}, {"pass", ch.pass}};
    for (const auto& [k, v] : {std::pair{"value", ch.value}, std::pair{"reference", ch.reference}, std::pair{"tolerance", ch.tolerance}})
      cj[k] = std::isfinite(v) ? json(v) : json(format_double(v));
    j["checks"].push_back(cj);
  }
  j["exit_code"] = code;
  j["message"] = message;
  std::ofstream(out / (command + ".manifest.json")) << j.dump(2) << "\n";

  for (const auto& ch : result.checks)
    log << (ch.pass ? "pass " : "FAIL ") << command << " " << ch.name << " value=" << format_double(ch.value)
        << " reference=" << format_double(ch.reference) << " tolerance=" << format_double(ch.tolerance) << "\n";
  if (!message.empty()) log << "error: " << message << "\n";
  return code;
}

}  // namespace erg::runner
