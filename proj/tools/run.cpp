#include "run.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <sstream>

#include "landscape/errors.hpp"
#include "landscape/geometry.hpp"
#include "landscape/montecarlo.hpp"
#include "landscape/resolvent.hpp"
#include "landscape/spectra.hpp"
#include "landscape/variational.hpp"

namespace landscape::cli {

namespace {

using json = nlohmann::ordered_json;
using Keys = std::map<std::string, std::set<std::string>>;

// ---- output ------------------------------------------------------------------

std::string num(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string flag(bool b) { return b ? "1" : "0"; }

std::string quoted(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

struct Table {
  std::string schema;
  std::vector<std::string> notes;  // extra "# key=value" lines
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::string render() const {
    std::string s = "# schema=" + schema + "\n";
    for (const auto& n : notes) s += "# " + n + "\n";
    for (std::size_t i = 0; i < columns.size(); ++i) s += (i ? "," : "") + columns[i];
    s += "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + quoted(r[i]);
      s += "\n";
    }
    return s;
  }
};

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp + "'");
    out << content;
    if (!out.flush()) throw ConfigError("write to '" + tmp + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

struct PointStatus {
  bool converged;
  std::string diagnostic;
};

struct Outcome {
  Table table;
  std::vector<std::pair<std::string, Table>> companions;  // suffix, table
  std::vector<PointStatus> points;
  json resolved = json::object();
};

// ---- shared config pieces ----------------------------------------------------------

const std::set<std::string> kRunKeys{"command", "output", "seed"};
const std::set<std::string> kModelKeys{"model", "activation", "activation2", "beta", "alpha1",
                                       "spectrum", "g", "d", "teacher"};
const std::set<std::string> kSolverKeys{"coupling_tol", "coupling_max", "max_evaluations", "restarts",
                                        "size_tol", "schedule", "match_tol", "solve_tol"};

activations::Activation activation(const Config& c, const std::string& key, const std::string& fallback = "") {
  const std::string name = fallback.empty() ? c.text("model", key) : c.text("model", key, fallback);
  try {
    return activations::from_name(name);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("[model] ") + key + ": " + e.what());
  }
}

double beta_of(const Config& c) {
  const double beta = c.number("model", "beta", 2.0);
  if (!(beta > 1.0)) throw ConfigError("[model] beta = " + num(beta) + ": beta must satisfy beta > 1");
  return beta;
}

int dimension_of(const Config& c, long fallback) {
  const long d = c.integer("model", "d", fallback);
  if (d < 1 || d > 100000) throw ConfigError("[model] d must be a positive dimension");
  return static_cast<int>(d);
}

Eigen::VectorXd teacher(const Config& c, int d) {
  const std::string t = c.text("model", "teacher", "e1");
  if (t == "e1") return Eigen::VectorXd::Unit(d, 0);
  if (t == "uniform") return Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
  throw ConfigError("[model] teacher must be e1 or uniform");
}

// Named spectra for model L; an ar1 coefficient without a dimension takes
// [model] d.
spectra::SpectralModel named_spectrum(const Config& c) {
  std::string desc = c.text("model", "spectrum", "identity");
  if (desc.rfind("ar1:", 0) == 0 && std::count(desc.begin(), desc.end(), ':') == 1)
    desc += ":" + std::to_string(dimension_of(c, 1000));
  try {
    return spectra::from_named(spectra::parse_spectrum(desc));
  } catch (const DomainError& e) {
    throw ConfigError(std::string("[model] spectrum: ") + e.what());
  }
}

variational::ModelKind model_kind(const Config& c) {
  try {
    return variational::parse_model(c.text("model", "model", "L"));
  } catch (const DomainError& e) {
    throw ConfigError(std::string("[model] model: ") + e.what());
  }
}

std::vector<double> ell_grid(const Config& c) {
  if (c.has("grid", "ell")) return c.numbers("grid", "ell");
  if (c.has("grid", "ell_min") || c.has("grid", "ell_max") || c.has("grid", "ell_points")) {
    const double a = c.number("grid", "ell_min"), b = c.number("grid", "ell_max");
    const long n = c.integer("grid", "ell_points", 0);
    if (n < 1) throw ConfigError("[grid] ell_points must be positive");
    std::vector<double> g;
    for (long i = 0; i < n; ++i) g.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1));
    return g;
  }
  throw ConfigError("[grid] needs ell or ell_min/ell_max/ell_points");
}

variational::ModelConfig model_config(const Config& c) {
  variational::ModelConfig m;
  m.model = model_kind(c);
  m.activation = activation(c, "activation");
  m.activation2 = activation(c, "activation2", c.text("model", "activation"));
  m.beta = beta_of(c);
  m.alpha1 = c.number("model", "alpha1", 2.0);
  const std::string spectrum = c.text("model", "spectrum", "identity");
  switch (m.model) {
    case variational::ModelKind::L:
      m.spectrum = std::make_shared<spectra::SpectralModel>(named_spectrum(c));
      break;
    case variational::ModelKind::L1: {
      const int d = dimension_of(c, 20);
      m.sigma = montecarlo::covariance_for(spectrum, d);
      m.w_star = teacher(c, d);
      break;
    }
    case variational::ModelKind::L2: {
      const int d = dimension_of(c, 50);
      m.g = montecarlo::covariance_for(c.text("model", "g", "identity"), d);
      m.sigma = montecarlo::covariance_for(spectrum, d);
      break;
    }
  }
  m.coupling_tol = c.number("solver", "coupling_tol", m.coupling_tol);
  m.coupling_max = static_cast<int>(c.integer("solver", "coupling_max", m.coupling_max));
  m.budget.max_evaluations = static_cast<int>(c.integer("solver", "max_evaluations", m.budget.max_evaluations));
  m.budget.restarts = static_cast<int>(c.integer("solver", "restarts", m.budget.restarts));
  m.budget.size_tol = c.number("solver", "size_tol", m.budget.size_tol);
  m.match.tol = c.number("solver", "match_tol", m.match.tol);
  m.solve.tol = c.number("solver", "solve_tol", m.solve.tol);
  if (c.has("solver", "schedule")) m.schedule = c.numbers("solver", "schedule");
  if (!(m.coupling_tol > 0) || m.coupling_max < 1 || m.budget.max_evaluations < 1 || m.budget.restarts < 1 ||
      !(m.budget.size_tol > 0) || !(m.match.tol > 0) || !(m.solve.tol > 0))
    throw ConfigError("[solver] tolerances and budgets must be positive");
  m.validate();
  return m;
}

void check_ell(double ell, const variational::ModelConfig& m) {
  using variational::value_range;
  const auto r1 = value_range(m.activation), r2 = value_range(m.activation2);
  bool ok = true;
  switch (m.model) {
    case variational::ModelKind::L: ok = ell > r1.first && ell < r1.second; break;
    case variational::ModelKind::L1: ok = ell >= 0.0; break;
    case variational::ModelKind::L2: ok = ell > r1.first - r2.second && ell < r1.second - r2.first; break;
  }
  if (!ok) throw ConfigError("[grid] ell = " + num(ell) + " is outside the range of the loss");
}

json resolved_model(const variational::ModelConfig& m) {
  json j;
  j["model"] = variational::model_name(m.model);
  j["activation"] = m.activation.name();
  if (m.model == variational::ModelKind::L2) {
    j["activation2"] = m.activation2.name();
    j["alpha1"] = m.alpha1;
    j["alpha2"] = m.alpha2();
  }
  j["beta"] = m.beta;
  if (m.spectrum) j["spectrum"] = m.spectrum->label();
  if (m.sigma.size()) j["d"] = m.sigma.rows();
  j["schedule"] = m.schedule;
  j["coupling_tol"] = m.coupling_tol;
  j["coupling_max"] = m.coupling_max;
  j["max_evaluations"] = m.budget.max_evaluations;
  j["restarts"] = m.budget.restarts;
  j["size_tol"] = m.budget.size_tol;
  j["match_tol"] = m.match.tol;
  j["solve_tol"] = m.solve.tol;
  return j;
}

// ---- commands -------------------------------------------------------------------

std::vector<variational::ComplexityPoint> guarded_curve(const std::vector<double>& grid,
                                                        const variational::ModelConfig& m) {
  std::vector<variational::ComplexityPoint> out;
  const std::vector<double>* warm = nullptr;
  for (double ell : grid) {
    try {
      out.push_back(variational::complexity_at(ell, m, warm));
    } catch (const std::runtime_error& e) {
      variational::ComplexityPoint p;
      p.ell = ell;
      p.feasible = false;
      p.diagnostic = e.what();
      out.push_back(p);
    }
    warm = out.back().feasible && !out.back().coordinates.empty() ? &out.back().coordinates : nullptr;
  }
  return out;
}

double param_or_nan(const variational::ComplexityPoint& p, const std::string& name) {
  for (const auto& [k, v] : p.params)
    if (k == name) return v;
  return std::nan("");
}

Outcome cmd_complexity(const Config& c) {
  c.restrict_to({{"run", kRunKeys}, {"model", kModelKeys}, {"solver", kSolverKeys},
                 {"grid", {"ell", "ell_min", "ell_max", "ell_points"}}});
  const auto m = model_config(c);
  const auto grid = ell_grid(c);
  for (double ell : grid) check_ell(ell, m);
  Outcome o;
  o.resolved = resolved_model(m);
  o.resolved["ell"] = grid;
  const auto points = guarded_curve(grid, m);
  Table& t = o.table;
  t.schema = "complexity/v1";
  t.notes.push_back("model=" + variational::model_name(m.model));
  std::vector<std::string> names;
  switch (m.model) {
    case variational::ModelKind::L: names = {"rho", "q", "f", "kappa"}; break;
    case variational::ModelKind::L1: names = {"rho", "q", "f", "kappa", "p", "r", "kappa2"}; break;
    case variational::ModelKind::L2: names = {"rho1", "rho2", "q1", "q2", "q3", "f1", "f2", "kappa1", "kappa2"}; break;
  }
  t.columns = {"ell", "psi"};
  t.columns.insert(t.columns.end(), names.begin(), names.end());
  t.columns.push_back("converged");
  for (const auto& p : points) {
    std::vector<std::string> row{num(p.ell), num(p.psi)};
    for (const auto& n : names) row.push_back(num(param_or_nan(p, n)));
    row.push_back(flag(p.converged));
    t.rows.push_back(row);
    std::string diag = p.diagnostic;
    if (p.boundary) diag = diag.empty() ? "boundary" : diag;
    o.points.push_back({p.converged, diag});
  }
  return o;
}

Outcome cmd_verify_quadratic(const Config& c) {
  c.restrict_to({{"run", kRunKeys}, {"model", {"beta", "spectrum"}}, {"solver", kSolverKeys},
                 {"grid", {"ell", "ell_min", "ell_max", "ell_points"}}});
  if (c.text("model", "spectrum", "identity") != "identity")
    throw ConfigError("[model] verify-quadratic checks the identity covariance only");
  Config full = c;
  variational::ModelConfig m;
  m.model = variational::ModelKind::L;
  m.activation = activations::Activation(activations::Kind::quadratic);
  m.activation2 = m.activation;
  m.beta = beta_of(c);
  m.spectrum = std::make_shared<spectra::SpectralModel>(spectra::from_named(spectra::parse_spectrum("identity")));
  m.coupling_tol = c.number("solver", "coupling_tol", m.coupling_tol);
  m.budget.max_evaluations = static_cast<int>(c.integer("solver", "max_evaluations", m.budget.max_evaluations));
  if (c.has("solver", "schedule")) m.schedule = c.numbers("solver", "schedule");
  m.validate();
  const auto [lo, hi] = spectra::marchenko_pastur_edges(m.beta);
  std::vector<double> grid;
  if (c.has("grid", "ell") || c.has("grid", "ell_min")) {
    grid = ell_grid(c);
  } else {
    // Twelve points inside the bulk of 2 ell, four at least 0.3 outside.
    for (int i = 0; i < 12; ++i) grid.push_back(0.5 * (lo + (hi - lo) * (i + 0.5) / 12.0));
    for (double gap : {0.4, 0.8}) grid.push_back(0.5 * (hi + gap));
    if (lo > 0.8) grid.push_back(0.5 * (lo - 0.4));
    grid.push_back(0.5 * (hi + 1.5));
    if (lo <= 0.8) grid.push_back(0.5 * (hi + 2.5));
  }
  for (double ell : grid) check_ell(ell, m);
  Outcome o;
  o.resolved = resolved_model(m);
  o.resolved["bulk"] = {lo, hi};
  o.resolved["ell"] = grid;
  const auto points = guarded_curve(grid, m);
  o.table.schema = "verify-quadratic/v1";
  o.table.notes.push_back("bulk=" + num(lo) + ":" + num(hi));
  o.table.columns = {"ell", "psi", "region", "pass", "converged"};
  for (const auto& p : points) {
    const double x = 2.0 * p.ell;
    std::string region = "margin", pass = "";
    if (x > lo && x < hi) {
      region = "bulk";
      pass = flag(std::abs(p.psi) <= 0.02);
    } else if (x <= lo - 0.3 || x >= hi + 0.3) {
      region = "outside";
      pass = flag(p.psi <= -0.01);
    }
    o.table.rows.push_back({num(p.ell), num(p.psi), region, pass, flag(p.converged)});
    o.points.push_back({p.converged, p.diagnostic});
  }
  return o;
}

Outcome cmd_gen_error(const Config& c) {
  c.restrict_to({{"run", kRunKeys}, {"model", {"activation"}}, {"grid", {"rho"}}});
  const auto act = activation(c, "activation");
  const auto rho = c.numbers("grid", "rho");
  for (double r : rho)
    if (!(r >= 0.0)) throw ConfigError("[grid] rho = " + num(r) + ": overlaps must be nonnegative");
  Outcome o;
  o.resolved["activation"] = act.name();
  o.resolved["rho"] = rho;
  o.table.schema = "gen-error/v1";
  o.table.columns = {"rho", "gen_error"};
  for (double r : rho) {
    o.table.rows.push_back({num(r), num(variational::generalization_error(r, act))});
    o.points.push_back({true, ""});
  }
  return o;
}

Outcome cmd_rate_function(const Config& c) {
  c.restrict_to({{"run", kRunKeys},
                 {"model", {"model", "spectrum", "g", "d", "teacher", "alpha1"}},
                 {"rate", {"rho", "q", "p", "r", "rho1", "rho2", "q1", "q2", "q3", "kappa1", "kappa2", "f1", "f2"}}});
  const auto kind = model_kind(c);
  const std::string spectrum = c.text("model", "spectrum", "identity");
  Outcome o;
  o.table.schema = "rate-function/v1";
  o.table.notes.push_back("model=" + variational::model_name(kind));
  auto lists = [&](const std::vector<std::string>& keys) {
    std::vector<std::vector<double>> v;
    for (const auto& k : keys) v.push_back(c.numbers("rate", k));
    for (const auto& x : v)
      if (x.size() != v.front().size()) throw ConfigError("[rate] parameter lists must have equal length");
    return v;
  };
  auto emit = [&](const std::vector<double>& params, const geometry::RateResult& r) {
    std::vector<std::string> row;
    for (double x : params) row.push_back(num(x));
    row.insert(row.end(), {num(r.value), flag(r.converged), flag(r.outside), flag(r.boundary)});
    o.table.rows.push_back(row);
    o.points.push_back({r.converged, r.diagnostic});
  };
  o.resolved["model"] = variational::model_name(kind);
  o.resolved["spectrum"] = spectrum;
  switch (kind) {
    case variational::ModelKind::L: {
      const auto model = named_spectrum(c);
      const auto v = lists({"rho", "q"});
      o.table.columns = {"rho", "q", "rate", "converged", "outside", "boundary"};
      for (std::size_t i = 0; i < v[0].size(); ++i) emit({v[0][i], v[1][i]}, geometry::rate_I({v[0][i], v[1][i]}, model));
      break;
    }
    case variational::ModelKind::L1: {
      const int d = dimension_of(c, 20);
      const geometry::PlantedGeometry geo(montecarlo::covariance_for(spectrum, d), teacher(c, d));
      const auto v = lists({"rho", "q", "p", "r"});
      o.resolved["d"] = d;
      o.table.columns = {"rho", "q", "p", "r", "rate", "converged", "outside", "boundary"};
      for (std::size_t i = 0; i < v[0].size(); ++i) {
        const geometry::GeomParamsL1 g{v[0][i], v[1][i], v[2][i], v[3][i]};
        emit({g.rho, g.q, g.p, g.r}, geometry::rate_I1(g, geo));
      }
      break;
    }
    case variational::ModelKind::L2: {
      const int d = dimension_of(c, 50);
      const double a1 = c.number("model", "alpha1", 2.0);
      if (!(a1 > 1.0)) throw ConfigError("[model] alpha1 must exceed 1");
      const double a2 = a1 / (a1 - 1.0);
      const Eigen::MatrixXd g = montecarlo::covariance_for(c.text("model", "g", "identity"), d);
      const Eigen::MatrixXd s = montecarlo::covariance_for(spectrum, d);
      const double k1 = c.number("rate", "kappa1"), k2 = c.number("rate", "kappa2");
      const double f1 = c.number("rate", "f1"), f2 = c.number("rate", "f2");
      if (!(f1 > 0.0) || !(f2 > 0.0)) throw ConfigError("[rate] f1 and f2 must be positive");
      const auto v = lists({"rho1", "rho2", "q1", "q2", "q3"});
      o.resolved["d"] = d;
      o.resolved["alpha1"] = a1;
      o.table.columns = {"rho1", "rho2", "q1", "q2", "q3", "rate", "converged", "outside", "boundary"};
      for (std::size_t i = 0; i < v[0].size(); ++i) {
        const auto dm = geometry::discriminating_matrices(g, s, a1, a2, f1, f2, k1, k2, v[0][i], v[1][i]);
        const geometry::GeomParamsL2 gp{v[0][i], v[1][i], v[2][i], v[3][i], v[4][i]};
        emit({gp.rho1, gp.rho2, gp.q1, gp.q2, gp.q3}, geometry::rate_I2(gp, dm));
      }
      break;
    }
  }
  return o;
}

montecarlo::LossKind loss_kind(variational::ModelKind k) {
  switch (k) {
    case variational::ModelKind::L: return montecarlo::LossKind::L;
    case variational::ModelKind::L1: return montecarlo::LossKind::L1;
    case variational::ModelKind::L2: return montecarlo::LossKind::L2;
  }
  return montecarlo::LossKind::L;
}

Outcome cmd_mc_count(const Config& c, std::uint64_t seed) {
  c.restrict_to({{"run", kRunKeys},
                 {"model", {"model", "activation", "activation2", "beta", "alpha1", "spectrum", "g"}},
                 {"mc", {"d_list", "samples", "bins", "restarts_per_d2", "max_doublings", "bootstrap"}}});
  montecarlo::CountConfig cc;
  const auto kind = model_kind(c);
  cc.loss = loss_kind(kind);
  cc.activation = activation(c, "activation");
  cc.activation2 = activation(c, "activation2", c.text("model", "activation"));
  cc.beta = beta_of(c);
  cc.alpha1 = c.number("model", "alpha1", 2.0);
  if (kind == variational::ModelKind::L2 && !(cc.alpha1 > 1.0)) throw ConfigError("[model] alpha1 must exceed 1");
  cc.sigma = c.text("model", "spectrum", "identity");
  cc.g = c.text("model", "g", "identity");
  cc.restarts_per_d2 = static_cast<int>(c.integer("mc", "restarts_per_d2", 200));
  cc.max_doublings = static_cast<int>(c.integer("mc", "max_doublings", 2));
  cc.seed = seed;
  const auto dl = c.integers("mc", "d_list");
  std::vector<int> d_list;
  for (long d : dl) {
    if (d < 2 || d > 12) throw ConfigError("[mc] d_list entries must lie in [2, 12]");
    d_list.push_back(static_cast<int>(d));
  }
  const long samples = c.integer("mc", "samples", 5);
  const long bootstrap = c.integer("mc", "bootstrap", 200);
  const auto bins = c.numbers("mc", "bins");
  if (bins.size() < 2 || !std::is_sorted(bins.begin(), bins.end()))
    throw ConfigError("[mc] bins needs at least two increasing edges");
  if (samples < 1 || cc.restarts_per_d2 < 1 || cc.max_doublings < 0 || bootstrap < 0)
    throw ConfigError("[mc] samples and restarts must be positive");
  for (int d : d_list) montecarlo::covariance_for(cc.sigma, d);

  const auto e = montecarlo::empirical_complexity(cc, d_list, static_cast<int>(samples), bins, static_cast<int>(bootstrap));
  Outcome o;
  o.resolved["model"] = variational::model_name(kind);
  o.resolved["activation"] = cc.activation.name();
  o.resolved["beta"] = cc.beta;
  o.resolved["spectrum"] = cc.sigma;
  o.resolved["d_list"] = d_list;
  o.resolved["samples"] = samples;
  o.resolved["bins"] = bins;
  o.resolved["restarts_per_d2"] = cc.restarts_per_d2;
  o.resolved["max_doublings"] = cc.max_doublings;
  o.resolved["bootstrap"] = bootstrap;
  o.table.schema = "mc-count/v1";
  o.table.columns = {"d", "sample", "seed", "total", "euler_sum", "euler_ok", "saturated"};
  for (std::size_t k = 0; k + 1 < bins.size(); ++k) o.table.columns.push_back("count_" + std::to_string(k));
  for (const auto& s : e.samples) {
    std::vector<std::string> row{std::to_string(s.d),         std::to_string(s.sample), std::to_string(s.seed),
                                 std::to_string(s.total),     std::to_string(s.euler_sum), flag(s.euler_ok),
                                 flag(s.saturated)};
    for (int n : s.per_bin) row.push_back(std::to_string(n));
    o.table.rows.push_back(row);
    std::string diag;
    if (!s.saturated) diag = "count still changing after the last restart doubling";
    if (!s.euler_ok) diag += std::string(diag.empty() ? "" : "; ") + "alternating index sum differs from the sphere's";
    o.points.push_back({s.saturated && s.euler_ok, diag});
  }
  Table bins_table;
  bins_table.schema = "mc-count-bins/v1";
  bins_table.columns = {"d", "bin_lo", "bin_hi", "mean_count", "log_count_over_d", "bootstrap_se", "samples"};
  for (const auto& r : e.rows)
    bins_table.rows.push_back({std::to_string(r.d), num(r.bin_lo), num(r.bin_hi), num(r.mean_count),
                               num(r.log_count_over_d), num(r.bootstrap_se), std::to_string(r.samples)});
  o.companions.emplace_back(".bins.csv", bins_table);
  return o;
}

Outcome cmd_mc_hessian(const Config& c, std::uint64_t seed) {
  c.restrict_to({{"run", kRunKeys},
                 {"model", {"model", "activation", "activation2", "beta", "alpha1", "spectrum", "g", "d"}},
                 {"solver", {"schedule", "solve_tol"}},
                 {"mc", {"draws", "kappa", "rho"}}});
  const auto kind = model_kind(c);
  if (kind == variational::ModelKind::L1) throw ConfigError("[model] mc-hessian supports models L and L2");
  montecarlo::HessianConfig h;
  h.d = dimension_of(c, 200);
  h.beta = beta_of(c);
  h.rho = h.rho2 = c.number("mc", "rho", 1.0);
  if (!(h.rho > 0.0)) throw ConfigError("[mc] rho must be positive");
  h.activation = activation(c, "activation");
  h.activation2 = activation(c, "activation2", c.text("model", "activation"));
  h.seed = seed;
  const std::string spectrum = c.text("model", "spectrum", "identity");
  h.sigma = montecarlo::covariance_for(spectrum, h.d);
  const long draws = c.integer("mc", "draws", 20);
  if (draws < 1) throw ConfigError("[mc] draws must be positive");
  const auto kappas = c.numbers("mc", "kappa");
  std::vector<double> schedule = resolvent::default_schedule();
  if (c.has("solver", "schedule")) schedule = c.numbers("solver", "schedule");
  resolvent::SolveOptions so;
  so.tol = c.number("solver", "solve_tol", so.tol);
  Eigen::MatrixXd g;
  if (kind == variational::ModelKind::L2) {
    h.two_datasets = true;
    h.alpha1 = c.number("model", "alpha1", 2.0);
    if (!(h.alpha1 > 1.0)) throw ConfigError("[model] alpha1 must exceed 1");
    g = montecarlo::covariance_for(c.text("model", "g", "identity"), h.d);
    // The first dataset carries G, the second Sigma.
    h.sigma2 = h.sigma;
    h.sigma = g;
  }

  std::vector<resolvent::LogPotential> theory;
  std::vector<std::string> failures;
  for (double k : kappas) {
    try {
      if (kind == variational::ModelKind::L) {
        const tilted::TiltedMeasure1D nu(h.activation, h.rho, h.beta, 1.0 / h.beta, {});
        theory.push_back(resolvent::log_potential(k, nu, spectra::from_matrix(h.sigma, spectrum), h.beta, schedule, so));
      } else {
        const double a2 = h.alpha1 / (h.alpha1 - 1.0);
        const tilted::TiltedMeasure1D nu1(h.activation, h.rho, h.beta, h.alpha1 / h.beta, {});
        const tilted::TiltedMeasure1D nu2(h.activation2, h.rho2, h.beta, a2 / h.beta, {});
        const auto joint = spectra::JointSpectralModel::from_matrices(h.sigma, h.sigma2);
        const resolvent::TwoMatrixProblem pb{nu1.kernel_law(), nu2.kernel_law(), &joint, h.beta, h.alpha1, a2};
        theory.push_back(resolvent::two_matrix_log_potential(k, pb, schedule, so));
      }
      failures.emplace_back();
    } catch (const std::runtime_error& e) {
      resolvent::LogPotential lp;
      lp.value = std::nan("");
      theory.push_back(lp);
      failures.emplace_back(e.what());
    }
  }
  const auto mc = montecarlo::hessian_logdet_mc(h, kappas, static_cast<int>(draws));
  Outcome o;
  o.resolved["model"] = variational::model_name(kind);
  o.resolved["activation"] = h.activation.name();
  o.resolved["beta"] = h.beta;
  o.resolved["d"] = h.d;
  o.resolved["rho"] = h.rho;
  o.resolved["spectrum"] = spectrum;
  o.resolved["draws"] = draws;
  o.resolved["kappa"] = kappas;
  o.resolved["schedule"] = schedule;
  o.table.schema = "mc-hessian/v1";
  o.table.columns = {"kappa", "mc_mean", "mc_stderr", "draws", "rejected", "theory", "theory_error", "flagged", "converged"};
  for (std::size_t j = 0; j < kappas.size(); ++j) {
    const bool ok = failures[j].empty();
    o.table.rows.push_back({num(kappas[j]), num(mc[j].mean), num(mc[j].stderr_), std::to_string(mc[j].draws),
                            std::to_string(mc[j].rejected), num(theory[j].value), num(theory[j].extrapolation_error),
                            flag(theory[j].flagged), flag(ok)});
    o.points.push_back({ok, ok ? (theory[j].flagged ? "eps schedule increments grew" : "") : failures[j]});
  }
  return o;
}

}  // namespace

int run(const Config& config, std::ostream& log, const RunOverrides& overrides) {
  std::string command, output;
  std::uint64_t seed = 1;
  Outcome o;
  try {
    command = config.text("run", "command");
    output = overrides.output ? *overrides.output : config.text("run", "output");
    if (overrides.seed) {
      seed = *overrides.seed;
    } else {
      const long s = config.integer("run", "seed", 1);
      if (s < 0) throw ConfigError("[run] seed must be nonnegative");
      seed = static_cast<std::uint64_t>(s);
    }
    if (command == "complexity")
      o = cmd_complexity(config);
    else if (command == "verify-quadratic")
      o = cmd_verify_quadratic(config);
    else if (command == "gen-error")
      o = cmd_gen_error(config);
    else if (command == "rate-function")
      o = cmd_rate_function(config);
    else if (command == "mc-count")
      o = cmd_mc_count(config, seed);
    else if (command == "mc-hessian")
      o = cmd_mc_hessian(config, seed);
    else
      throw ConfigError("[run] command '" + command +
                        "' is not one of complexity, mc-count, mc-hessian, rate-function, verify-quadratic, gen-error");
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const DomainError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::runtime_error& e) {
    log << "numerical failure: " << e.what() << "\n";
    return kNotConverged;
  }

  const bool all = std::all_of(o.points.begin(), o.points.end(), [](const PointStatus& p) { return p.converged; });
  const int code = all ? kOk : kNotConverged;
  json meta;
  meta["schema"] = o.table.schema;
  meta["command"] = command;
  meta["seed"] = seed;
  meta["config"] = config.entries();
  meta["resolved"] = o.resolved;
  meta["exit_code"] = code;
  json pts = json::array();
  for (std::size_t i = 0; i < o.points.size(); ++i)
    pts.push_back({{"row", i}, {"converged", o.points[i].converged}, {"diagnostic", o.points[i].diagnostic}});
  meta["points"] = pts;
  json files = json::array();
  for (const auto& [suffix, table] : o.companions) files.push_back(output + suffix);
  meta["companions"] = files;
  try {
    for (const auto& [suffix, table] : o.companions) write_atomic(output + suffix, table.render());
    write_atomic(output, o.table.render());
    write_atomic(output + ".meta", meta.dump(2) + "\n");
  } catch (const std::exception& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (!all) log << "some points did not converge; see " << output << ".meta\n";
  return code;
}

int run_file(const std::string& path, std::ostream& log, const RunOverrides& overrides) {
  try {
    return run(Config::load(path), log, overrides);
  } catch (const ConfigError& e) {
    log << "config error: " << e.what() << "\n";
    return kConfigError;
  }
}

}  // namespace landscape::cli
