#include "landscape/variational.hpp"

#include <gsl/gsl_multimin.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "landscape/errors.hpp"
#include "landscape/quadrature.hpp"

namespace landscape::variational {

namespace {

using cplx = std::complex<double>;
using tilted::Barred1D;
using tilted::Barred2D;
using tilted::Moments;
using tilted::Reweight;
using tilted::TiltedMeasure1D;
using tilted::TiltedMeasure2D;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kPenalty = 1e10;

double get(const Named& v, std::size_t i, double fallback = 0.0) { return i < v.size() ? v[i].second : fallback; }

double spectral_det_term(const spectra::SpectralModel& m, cplx z, cplx phibar) {
  return m.expect([&](double l) { return std::log(std::abs(z * (1.0 + phibar * l))); });
}

double kernel_log_sum(const tilted::KernelLaw& law, cplx phi, double b) {
  double a = 0.0;
  for (std::size_t i = 0; i < law.values.size(); ++i) a += law.probs[i] * std::log(std::abs(1.0 + law.values[i] * phi / b));
  return b * a;
}

// Damped iteration x <- x + w (G(x) - x) on the resolvent state that sets the
// reweight; w halves whenever the step length grows. `solve(x)` matches the
// moments under the law reweighted by x (none when null) and returns G(x).
template <class Solve>
bool damped_coupling(std::vector<cplx>& x, const Solve& solve, double tol, int max_iterations, double& change) {
  auto dist = [](const std::vector<cplx>& a, const std::vector<cplx>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return s;
  };
  auto size = [](const std::vector<cplx>& a) {
    double s = 1.0;
    for (const auto& v : a) s += std::abs(v);
    return s;
  };
  if (x.empty()) x = solve(nullptr);
  double omega = 1.0;
  std::vector<cplx> last_step;
  for (int it = 0; it < max_iterations; ++it) {
    const std::vector<cplx> gx = solve(&x);
    change = dist(gx, x);
    if (change < tol * size(gx)) {
      x = gx;
      return true;
    }
    std::vector<cplx> step(x.size());
    double turn = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      step[i] = gx[i] - x[i];
      if (!last_step.empty()) turn += (step[i] * std::conj(last_step[i])).real();
    }
    // A reversing step signals an oscillating map; shrink the mixing.
    if (turn < 0.0) omega = std::max(0.02, 0.5 * omega);
    last_step = step;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += omega * step[i];
  }
  return false;
}

void finish_schedule(InnerResult& out) {
  const auto ex = resolvent::richardson(out.schedule_values);
  out.value = ex.value;
  out.extrapolation_error = ex.error;
  out.flagged = ex.flagged;
}

// ---- Nelder–Mead (maximization) --------------------------------------------

struct SearchResult {
  std::vector<double> x;
  double value = -kInf;
  int evaluations = 0;
  bool converged = false;
};

struct GslObjective {
  const std::function<double(const std::vector<double>&)>* f;
  int* count;
};

double gsl_trampoline(const gsl_vector* v, void* params) {
  auto* o = static_cast<GslObjective*>(params);
  std::vector<double> x(v->size);
  for (std::size_t i = 0; i < v->size; ++i) x[i] = gsl_vector_get(v, i);
  ++*o->count;
  const double val = (*o->f)(x);
  return std::isfinite(val) ? -val : kPenalty;
}

SearchResult maximize_simplex(const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x0,
                              const std::vector<double>& step, const Budget& budget) {
  SearchResult out;
  out.x = x0;
  if (x0.empty()) {
    out.value = f(x0);
    out.evaluations = 1;
    out.converged = std::isfinite(out.value);
    return out;
  }
  const std::size_t n = x0.size();
  int count = 0;
  GslObjective obj{&f, &count};
  gsl_multimin_function fn{&gsl_trampoline, n, &obj};
  gsl_vector* x = gsl_vector_alloc(n);
  gsl_vector* ss = gsl_vector_alloc(n);
  for (std::size_t i = 0; i < n; ++i) {
    gsl_vector_set(x, i, x0[i]);
    gsl_vector_set(ss, i, step[i]);
  }
  gsl_multimin_fminimizer* s = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, n);
  gsl_multimin_fminimizer_set(s, &fn, x, ss);
  while (count < budget.max_evaluations) {
    if (gsl_multimin_fminimizer_iterate(s) != GSL_SUCCESS) break;
    if (gsl_multimin_test_size(gsl_multimin_fminimizer_size(s), budget.size_tol) == GSL_SUCCESS) {
      out.converged = true;
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) out.x[i] = gsl_vector_get(s->x, i);
  out.value = s->fval >= kPenalty ? -kInf : -s->fval;
  out.evaluations = count;
  gsl_multimin_fminimizer_free(s);
  gsl_vector_free(x);
  gsl_vector_free(ss);
  return out;
}

// ---- ell-only tilts (start points) -----------------------------------------

// Newton in the ell multiplier alone; other multipliers zero.
template <class Measure, class Barred>
Measure match_ell_only(const Measure& start, double ell, const std::function<Barred(double)>& make,
                       const std::function<double(const Measure&)>& ell_of,
                       const std::function<double(const Measure&)>& slope_of) {
  double t = 0.0;
  Measure m = start.with_barred(make(t));
  for (int it = 0; it < 100; ++it) {
    const double r = ell_of(m) - ell;
    if (std::abs(r) < 1e-10) return m;
    const double slope = slope_of(m);
    if (!(slope < 0.0)) break;
    double step = -r / slope;
    bool ok = false;
    for (int h = 0; h < 40; ++h, step *= 0.5) {
      try {
        Measure n = start.with_barred(make(t + step));
        if (std::abs(ell_of(n) - ell) < std::abs(r)) {
          t += step;
          m = n;
          ok = true;
          break;
        }
      } catch (const NormalizationError&) {
      }
    }
    if (!ok) break;
  }
  throw ConvergenceError("loss value is not reachable by tilting the data law", std::abs(ell_of(m) - ell));
}

// ---- two-dataset joint moment matching -------------------------------------

struct TwoTarget {
  double ell, kappa1, f1, kappa2, f2;
};

struct TwoMatch {
  Eigen::Matrix<double, 5, 1> u;  // (ell_bar, kappa1_bar, f1_bar, kappa2_bar, f2_bar)
  double residual;
};

Barred1D first_barred(const Eigen::Matrix<double, 5, 1>& u) { return {u(0), u(1), u(2)}; }
Barred1D second_barred(const Eigen::Matrix<double, 5, 1>& u) { return {-u(0), u(3), u(4)}; }

Eigen::Matrix<double, 5, 1> two_residual(const TiltedMeasure1D& m1, const TiltedMeasure1D& m2, const TwoTarget& t) {
  const auto a = tilted::moments(m1);
  const auto b = tilted::moments(m2);
  Eigen::Matrix<double, 5, 1> r;
  r << a.ell - b.ell - t.ell, a.kappa - t.kappa1, a.f - t.f1, b.kappa - t.kappa2, b.f - t.f2;
  return r;
}

TwoMatch match_two(const TiltedMeasure1D& base1, const TiltedMeasure1D& base2, const TwoTarget& t,
                   Eigen::Matrix<double, 5, 1> u, const tilted::MatchOptions& opt, TiltedMeasure1D& out1,
                   TiltedMeasure1D& out2) {
  TiltedMeasure1D m1 = base1.with_barred(first_barred(u));
  TiltedMeasure1D m2 = base2.with_barred(second_barred(u));
  Eigen::Matrix<double, 5, 1> r = two_residual(m1, m2, t);
  for (int it = 0; it < opt.max_iterations && r.cwiseAbs().maxCoeff() > opt.tol; ++it) {
    const Eigen::Matrix3d j1 = tilted::moment_jacobian(m1);
    const Eigen::Matrix3d j2 = tilted::moment_jacobian(m2);
    Eigen::Matrix<double, 5, 5> j = Eigen::Matrix<double, 5, 5>::Zero();
    j(0, 0) = j1(0, 0) + j2(0, 0);
    j(0, 1) = j1(0, 1);
    j(0, 2) = j1(0, 2);
    j(0, 3) = -j2(0, 1);
    j(0, 4) = -j2(0, 2);
    for (int k = 1; k < 3; ++k) {
      j(k, 0) = j1(k, 0);
      j(k, 1) = j1(k, 1);
      j(k, 2) = j1(k, 2);
      j(k + 2, 0) = -j2(k, 0);
      j(k + 2, 3) = j2(k, 1);
      j(k + 2, 4) = j2(k, 2);
    }
    Eigen::Matrix<double, 5, 1> step = -j.completeOrthogonalDecomposition().solve(r);
    bool ok = false;
    for (int h = 0; h <= opt.max_halvings; ++h, step *= 0.5) {
      try {
        const Eigen::Matrix<double, 5, 1> un = u + step;
        TiltedMeasure1D n1 = base1.with_barred(first_barred(un));
        TiltedMeasure1D n2 = base2.with_barred(second_barred(un));
        const auto rn = two_residual(n1, n2, t);
        if (rn.allFinite() && rn.norm() < r.norm()) {
          u = un;
          m1 = n1;
          m2 = n2;
          r = rn;
          ok = true;
          break;
        }
      } catch (const NormalizationError&) {
      } catch (const EvaluationError&) {
      }
    }
    if (!ok) break;
  }
  const double res = r.cwiseAbs().maxCoeff();
  if (!(res <= opt.tol)) throw ConvergenceError("joint moment matching of the two data laws failed", res);
  out1 = m1;
  out2 = m2;
  return {u, res};
}

// ---- helpers for the geometric search ---------------------------------------

bool scalar_matrix(const Eigen::MatrixXd& a, double tol = 1e-12) {
  const double c = a.trace() / static_cast<double>(a.rows());
  return (a - c * Eigen::MatrixXd::Identity(a.rows(), a.cols())).cwiseAbs().maxCoeff() <= tol * std::abs(c);
}

// Weights M^-1 / tr M^-1 of a tilted sphere law with M = I + sum c_k N_k, or
// nullopt when M is not positive definite.
std::optional<Eigen::MatrixXd> sphere_weights(const std::vector<Eigen::MatrixXd>& n, const std::vector<double>& c) {
  const auto d = n.front().rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Identity(d, d);
  for (std::size_t k = 0; k < n.size(); ++k) m += c[k] * n[k];
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) return std::nullopt;
  Eigen::MatrixXd w = llt.solve(Eigen::MatrixXd::Identity(d, d));
  return Eigen::MatrixXd(w / w.trace());
}

Eigen::MatrixXd normalized(const Eigen::MatrixXd& a) {
  const double s = a.cwiseAbs().rowwise().sum().maxCoeff();
  return s > 0.0 ? Eigen::MatrixXd(a / s) : a;
}

double frob(const Eigen::MatrixXd& w, const Eigen::MatrixXd& a) { return (w.array() * a.array()).sum(); }

std::pair<double, double> box_of(double lo, double hi, double start) {
  const double width = std::max(0.5, 2.0 * std::abs(start));
  return {std::isfinite(lo) ? lo : start - width, std::isfinite(hi) ? hi : start + width};
}

// Fraction of the open box; the objective is -inf outside.
bool in_box(double x, std::pair<double, double> b) { return x > b.first && x < b.second; }

bool near_edge(double x, std::pair<double, double> b, double tol) {
  const double w = b.second - b.first;
  return x - b.first < tol * w || b.second - x < tol * w;
}

void add_diag(std::string& s, const std::string& msg) {
  if (!s.empty()) s += "; ";
  s += msg;
}

ComplexityPoint finish_point(double ell, const SearchResult& best, int evaluations) {
  ComplexityPoint p;
  p.ell = ell;
  p.psi = best.value;
  p.coordinates = best.x;
  p.evaluations = evaluations;
  p.converged = best.converged;
  if (!best.converged) p.diagnostic = "outer simplex search hit its evaluation budget";
  return p;
}

void copy_inner(ComplexityPoint& p, const InnerResult& in) {
  p.inner = in.value;
  p.barred = in.barred;
  p.phi = in.phi;
  p.moment_residual = in.moment_residual;
  p.resolvent_residual = in.resolvent_residual;
  p.coupling_residual = in.coupling_residual;
  p.extrapolation_error = in.extrapolation_error;
  if (!in.converged) {
    p.converged = false;
    add_diag(p.diagnostic, "inner coupling loop did not reach its tolerance");
  }
  if (in.flagged) add_diag(p.diagnostic, "eps schedule increments grew (extrapolation flagged)");
}

template <class Eval>
SearchResult run_restarts(const Eval& f, const std::vector<std::vector<double>>& starts, const std::vector<double>& step,
                          const Budget& budget, int& evaluations) {
  SearchResult best;
  int used = 0;
  for (const auto& s : starts) {
    if (used >= std::max(1, budget.restarts)) break;
    const double v0 = f(s);
    ++evaluations;
    if (!std::isfinite(v0)) continue;
    ++used;
    auto r = maximize_simplex(f, s, step, budget);
    evaluations += r.evaluations;
    if (r.value > best.value) best = r;
  }
  if (best.x.empty() && !starts.empty()) best.x = starts.front();
  return best;
}

}  // namespace

// ---- configuration ------------------------------------------------------------

std::string model_name(ModelKind k) {
  switch (k) {
    case ModelKind::L: return "L";
    case ModelKind::L1: return "L1";
    case ModelKind::L2: return "L2";
  }
  return "L";
}

ModelKind parse_model(const std::string& name) {
  if (name == "L") return ModelKind::L;
  if (name == "L1") return ModelKind::L1;
  if (name == "L2") return ModelKind::L2;
  throw DomainError("unknown model '" + name + "' (expected L, L1 or L2)");
}

void ModelConfig::validate() const {
  if (!(beta > 1.0)) throw DomainError("beta must exceed 1");
  if (schedule.empty()) throw DomainError("eps schedule is empty");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0.0)) throw DomainError("eps schedule entries must be positive");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw DomainError("eps schedule must be decreasing");
  }
  switch (model) {
    case ModelKind::L:
      if (!spectrum) throw DomainError("model L needs a spectral model");
      break;
    case ModelKind::L1:
      if (sigma.size() == 0 || w_star.size() != sigma.rows())
        throw DomainError("model L1 needs a covariance matrix and a teacher of matching size");
      if (std::abs(w_star.norm() - 1.0) > 1e-8) throw DomainError("the teacher must be a unit vector");
      break;
    case ModelKind::L2:
      if (!(alpha1 > 1.0)) throw DomainError("alpha1 must exceed 1");
      if (g.size() == 0 || sigma.size() == 0 || g.rows() != sigma.rows())
        throw DomainError("model L2 needs two covariance matrices of equal size");
      break;
  }
}

double ComplexityPoint::param(const std::string& name) const {
  for (const auto& [k, v] : params)
    if (k == name) return v;
  throw DomainError("complexity point has no parameter '" + name + "'");
}

std::pair<double, double> value_range(const activations::Activation& a) {
  using activations::Kind;
  switch (a.kind()) {
    case Kind::quadratic:
    case Kind::softplus: return {0.0, kInf};
    case Kind::logistic:
    case Kind::gaussian_bump: return {0.0, 1.0};
    case Kind::tanh: return {-1.0, 1.0};
  }
  return {-kInf, kInf};
}

double generalization_error(double rho, const activations::Activation& a) {
  if (!(rho >= 0.0)) throw DomainError("generalization_error: rho must be nonnegative");
  const auto& rule = quadrature::gauss_hermite(200);
  const double s = std::sqrt(rho);
  double acc = 0.0;
  for (std::size_t i = 0; i < rule.size(); ++i) acc += rule.weights[i] * a.eval(s * rule.nodes[i]);
  return acc;
}

// ---- model L --------------------------------------------------------------------

InnerResult inner_L(double rho, double kappa, double ell, double f, const ModelConfig& cfg, const InnerResult* warm) {
  const auto& act = cfg.activation;
  const bool quad = act.functionals_coincide();
  const Moments target = quad ? Moments{ell, 2.0 * ell, 2.0 * ell, std::nullopt} : Moments{ell, kappa, f, std::nullopt};
  const std::array<bool, 3> mask = quad ? std::array<bool, 3>{true, false, false} : std::array<bool, 3>{true, true, true};
  Barred1D barred{};
  if (warm && warm->barred.size() == 3) barred = {get(warm->barred, 0), get(warm->barred, 1), get(warm->barred, 2)};
  const double beta = cfg.beta;
  const TiltedMeasure1D base(act, rho, beta, 1.0 / beta, barred, cfg.quad);
  std::optional<resolvent::FixedPointState> state;
  if (warm && warm->phi.size() == 2) state = resolvent::FixedPointState{warm->phi[0], warm->phi[1]};

  InnerResult out;
  out.converged = true;
  for (double eps : cfg.schedule) {
    const cplx z(kappa, eps);
    std::optional<TiltedMeasure1D> cur;
    double change = kInf;
    std::vector<cplx> x;
    if (state) x = {state->phi, state->phibar};
    auto solve = [&](const std::vector<cplx>* at) {
      std::optional<Reweight> rw;
      if (at) rw = Reweight{(*at)[0], beta};
      const TiltedMeasure1D m = base.with_barred(barred).with_reweight(rw);
      const auto match = tilted::match_moments(target, m, mask, cfg.match);
      barred = match.barred;
      out.moment_residual = std::max(out.moment_residual, match.residual);
      cur = m.with_barred(barred);
      state = resolvent::solve_fixed_point(z, cur->kernel_law(), *cfg.spectrum, beta, cfg.solve, state);
      out.resolvent_residual = std::max(out.resolvent_residual, state->residual);
      return std::vector<cplx>{state->phi, state->phibar};
    };
    if (!damped_coupling(x, solve, cfg.coupling_tol, cfg.coupling_max, change)) out.converged = false;
    out.coupling_residual = std::max(out.coupling_residual, change);
    const double v = tilted::sanov_value(*cur, target) + spectral_det_term(*cfg.spectrum, z, state->phibar) +
                     (z * state->phi * state->phibar).real();
    if (!std::isfinite(v)) throw EvaluationError("model L inner value is not finite");
    out.schedule_values.emplace_back(eps, v);
  }
  out.barred = {{"ell_bar", barred.ell}, {"kappa_bar", barred.kappa}, {"f_bar", barred.f}};
  out.phi = {state->phi, state->phibar};
  finish_schedule(out);
  return out;
}

ObjectiveValue objective_L(double rho, double q, double kappa, double f, double ell, const ModelConfig& cfg) {
  ObjectiveValue o;
  if (cfg.activation.functionals_coincide()) kappa = f = 2.0 * ell;
  geometry::RateResult rr;
  o.saddle = geometry::f_sp({rho, q}, kappa, f, *cfg.spectrum, cfg.beta, &rr);
  o.rate = rr.value;
  if (!std::isfinite(o.saddle)) {
    o.diagnostic = rr.diagnostic;
    return o;
  }
  o.inner = inner_L(rho, kappa, ell, f, cfg);
  o.total = o.saddle + o.inner.value;
  o.ok = std::isfinite(o.total) && o.inner.converged;
  if (!o.inner.converged) o.diagnostic = "inner coupling loop did not reach its tolerance";
  return o;
}

namespace {

ComplexityPoint complexity_L(double ell, const ModelConfig& cfg, const std::vector<double>* warm) {
  const auto& act = cfg.activation;
  const auto& model = *cfg.spectrum;
  const bool quad = act.functionals_coincide();
  const bool geo_free = !model.is_scalar();
  const auto domain = spectra::feasible_domain(model);
  const double lmin = model.min_eigenvalue(), lmax = model.max_eigenvalue();

  auto geometry_at = [&](double u1, double u2) -> std::pair<double, double> {
    if (!geo_free) return {model.expect([](double l) { return l; }), model.expect([](double l) { return 1.0 / l; })};
    const double rho = lmin + u1 * (lmax - lmin);
    const auto [lo, hi] = domain.q_range(rho);
    return {rho, lo + u2 * (hi - lo)};
  };
  auto coords_of = [&](double rho, double q) -> std::pair<double, double> {
    const double u1 = (rho - lmin) / (lmax - lmin);
    const auto [lo, hi] = domain.q_range(rho);
    return {u1, hi > lo ? (q - lo) / (hi - lo) : 0.5};
  };

  // Start moments from the cheapest tilt that reaches ell.
  auto ell_only = [&](double rho) {
    const TiltedMeasure1D base(act, rho, cfg.beta, 1.0 / cfg.beta, {}, cfg.quad);
    const auto m = match_ell_only<TiltedMeasure1D, Barred1D>(
        base, ell, [](double t) { return Barred1D{t, 0.0, 0.0}; },
        [](const TiltedMeasure1D& x) { return tilted::moments(x).ell; },
        [](const TiltedMeasure1D& x) { return tilted::moment_jacobian(x)(0, 0); });
    return tilted::moments(m);
  };

  const auto rm = act.range_meta();
  const auto typ = geometry::typical_L(model);
  std::vector<std::vector<double>> starts;
  std::pair<double, double> kbox{0, 0}, fbox{0, 0};
  auto make_start = [&](double rho, double q) {
    std::vector<double> s;
    if (geo_free) {
      const auto [u1, u2] = coords_of(rho, q);
      s = {u1, u2};
    }
    if (!quad) {
      const auto m = ell_only(rho);
      s.push_back(m.kappa);
      s.push_back(m.f);
    }
    return s;
  };
  std::vector<double> s0 = make_start(typ.rho, typ.q);
  if (!quad) {
    kbox = box_of(rm.min_y_d1, rm.max_y_d1, s0[s0.size() - 2]);
    fbox = box_of(rm.min_d1_sq, rm.max_d1_sq, s0.back());
    fbox.first = std::max(fbox.first, 0.0);
  }
  starts.push_back(s0);
  if (geo_free) {
    const auto c = domain.centroid();
    const auto [lo, hi] = domain.q_range(c.first);
    try {
      starts.push_back(make_start(c.first, 0.5 * (lo + hi)));
    } catch (const ConvergenceError&) {
    }
  }
  if (warm && warm->size() == s0.size()) starts.push_back(*warm);

  std::vector<double> step;
  if (geo_free) step = {0.1, 0.1};
  if (!quad) {
    step.push_back(0.1 * (kbox.second - kbox.first));
    step.push_back(0.1 * (fbox.second - fbox.first));
  }

  auto unpack = [&](const std::vector<double>& x, double& rho, double& q, double& kappa, double& f) {
    std::size_t i = 0;
    double u1 = 0.5, u2 = 0.5;
    if (geo_free) {
      u1 = x[i++];
      u2 = x[i++];
      if (!(u1 > 0.0 && u1 < 1.0 && u2 > 0.0 && u2 < 1.0)) return false;
    }
    std::tie(rho, q) = geometry_at(u1, u2);
    if (quad) {
      kappa = f = 2.0 * ell;
    } else {
      kappa = x[i++];
      f = x[i++];
      if (!in_box(kappa, kbox) || !in_box(f, fbox)) return false;
    }
    return true;
  };
  auto objective = [&](const std::vector<double>& x) {
    double rho, q, kappa, f;
    if (!unpack(x, rho, q, kappa, f)) return -kInf;
    try {
      const auto o = objective_L(rho, q, kappa, f, ell, cfg);
      return o.ok ? o.total : -kInf;
    } catch (const std::runtime_error&) {
      return -kInf;
    }
  };

  int evaluations = 0;
  const auto best = run_restarts(objective, starts, step, cfg.budget, evaluations);
  ComplexityPoint p = finish_point(ell, best, evaluations);
  double rho, q, kappa, f;
  if (!unpack(best.x, rho, q, kappa, f) || !std::isfinite(best.value)) {
    p.converged = false;
    p.feasible = false;
    add_diag(p.diagnostic, "no feasible order parameters found");
    return p;
  }
  p.params = {{"rho", rho}, {"q", q}, {"kappa", kappa}, {"f", f}, {"ell", ell}};
  try {
    const auto o = objective_L(rho, q, kappa, f, ell, cfg);
    p.psi = o.total;
    p.saddle = o.saddle;
    p.rate = o.rate;
    copy_inner(p, o.inner);
  } catch (const std::runtime_error& e) {
    p.converged = false;
    add_diag(p.diagnostic, std::string("sub-solver failed at the argmax: ") + e.what());
  }
  if (geo_free && (best.x[0] < 1e-6 || best.x[0] > 1 - 1e-6 || best.x[1] < 1e-6 || best.x[1] > 1 - 1e-6)) {
    p.boundary = true;
    add_diag(p.diagnostic, "argmax on the boundary of the (rho, q) domain");
  }
  if (!quad && (near_edge(kappa, kbox, 1e-6) || near_edge(f, fbox, 1e-6))) {
    p.boundary = true;
    add_diag(p.diagnostic, "argmax on the edge of the (kappa, f) box");
  }
  return p;
}

}  // namespace

// ---- model L1 -------------------------------------------------------------------

InnerResult inner_L1(double rho, double p, const Moments& target, const ModelConfig& cfg, const InnerResult* warm) {
  const double beta = cfg.beta;
  const double rho_star = cfg.w_star.dot(cfg.sigma * cfg.w_star);
  Barred2D barred{};
  if (warm && warm->barred.size() == 4)
    barred = {get(warm->barred, 0), get(warm->barred, 1), get(warm->barred, 2), get(warm->barred, 3)};
  const TiltedMeasure2D base(cfg.activation, rho, p, rho_star, beta, barred, cfg.quad2d);
  std::optional<resolvent::FixedPointState> state;
  if (warm && warm->phi.size() == 2) state = resolvent::FixedPointState{warm->phi[0], warm->phi[1]};
  const auto& model = *cfg.spectrum;

  InnerResult out;
  out.converged = true;
  for (double eps : cfg.schedule) {
    const cplx z(target.kappa, eps);
    std::optional<TiltedMeasure2D> cur;
    double change = kInf;
    std::vector<cplx> x;
    if (state) x = {state->phi, state->phibar};
    auto solve = [&](const std::vector<cplx>* at) {
      std::optional<Reweight> rw;
      if (at) rw = Reweight{(*at)[0], beta};
      const TiltedMeasure2D m = base.with_barred(barred).with_reweight(rw);
      const auto match = tilted::match_moments2d(target, m, cfg.match);
      barred = match.barred;
      out.moment_residual = std::max(out.moment_residual, match.residual);
      cur = m.with_barred(barred);
      state = resolvent::solve_fixed_point(z, cur->kernel_law(), model, beta, cfg.solve, state);
      out.resolvent_residual = std::max(out.resolvent_residual, state->residual);
      return std::vector<cplx>{state->phi, state->phibar};
    };
    if (!damped_coupling(x, solve, cfg.coupling_tol, cfg.coupling_max, change)) out.converged = false;
    out.coupling_residual = std::max(out.coupling_residual, change);
    const double v = tilted::sanov_value(*cur, target) + spectral_det_term(model, z, state->phibar) +
                     (z * state->phi * state->phibar).real();
    if (!std::isfinite(v)) throw EvaluationError("model L1 inner value is not finite");
    out.schedule_values.emplace_back(eps, v);
  }
  out.barred = {{"ell_bar", barred.ell}, {"kappa_bar", barred.kappa}, {"kappa2_bar", barred.kappa2}, {"f_bar", barred.f}};
  out.phi = {state->phi, state->phibar};
  finish_schedule(out);
  return out;
}

namespace {

ComplexityPoint complexity_L1(double ell, ModelConfig cfg, const std::vector<double>* warm) {
  if (!cfg.spectrum) cfg.spectrum = std::make_shared<spectra::SpectralModel>(spectra::from_matrix(cfg.sigma, "sigma"));
  const geometry::PlantedGeometry geo(cfg.sigma, cfg.w_star);
  const double rho_star = geo.rho_star();
  const auto [vlo, vhi] = value_range(cfg.activation);
  if (!(ell >= 0.0) || (std::isfinite(vhi) && !(ell < (vhi - vlo) * (vhi - vlo))))
    throw DomainError("loss value outside the reachable range of the planted model");
  if (ell <= 1e-12) {
    // Student equals teacher: the residual vanishes identically.
    ComplexityPoint p;
    p.ell = ell;
    p.feasible = true;
    p.boundary = true;
    const Eigen::VectorXd& w = cfg.w_star;
    p.params = {{"rho", rho_star},          {"q", w.dot(geo.sigma_inverse() * w)},
                {"p", rho_star},            {"r", 1.0},
                {"kappa", 0.0},             {"kappa2", 0.0},
                {"f", 0.0},                 {"ell", 0.0}};
    p.diagnostic = "zero loss: global-minimum manifold w = w_*, where the mixed term is singular and Psi is not evaluated";
    return p;
  }

  const Eigen::MatrixXd mp = geo.sigma_w_star() * geo.sigma_w_star().transpose();
  const Eigen::MatrixXd mr = geo.w_star() * geo.w_star().transpose();
  const std::vector<Eigen::MatrixXd> basis{normalized(geo.sigma()), normalized(geo.sigma_inverse()), normalized(mp),
                                           normalized(mr)};
  struct Geo {
    double rho, q, p, r;
  };
  auto geometry_at = [&](const std::vector<double>& c) -> std::optional<Geo> {
    const auto w = sphere_weights(basis, c);
    if (!w) return std::nullopt;
    const double rho = frob(*w, geo.sigma());
    const double q = frob(*w, geo.sigma_inverse());
    const double p = frob(*w, mp) / rho;
    const double r2 = frob(*w, mr);
    if (!(p < rho_star * (1.0 - 1e-9)) || !(r2 >= 0.0)) return std::nullopt;
    return Geo{rho, q, p, std::sqrt(r2)};
  };

  auto ell_only = [&](double rho, double p) {
    const TiltedMeasure2D base(cfg.activation, rho, p, rho_star, cfg.beta, {}, cfg.quad2d);
    const auto m = match_ell_only<TiltedMeasure2D, Barred2D>(
        base, ell, [](double t) { return Barred2D{t, 0.0, 0.0, 0.0}; },
        [](const TiltedMeasure2D& x) { return tilted::moments(x).ell; },
        [](const TiltedMeasure2D& x) { return tilted::moment_jacobian(x)(0, 0); });
    return tilted::moments(m);
  };

  std::vector<std::vector<double>> starts;
  for (const std::vector<double>& c : {std::vector<double>{0, 0, 0, 0}, std::vector<double>{0, 0, -0.4, -0.4}}) {
    const auto g = geometry_at(c);
    if (!g) continue;
    try {
      const auto m = ell_only(g->rho, g->p);
      starts.push_back({c[0], c[1], c[2], c[3], m.kappa, *m.kappa2, m.f});
    } catch (const ConvergenceError&) {
    }
  }
  if (warm && warm->size() == 7) starts.push_back(*warm);
  if (starts.empty()) throw ConvergenceError("loss value is not reachable by tilting the planted data law", ell);
  std::vector<double> step{0.2, 0.2, 0.2, 0.2};
  for (std::size_t k = 4; k < 7; ++k) step.push_back(0.1 * std::max(0.05, std::abs(starts.front()[k])));

  struct Eval {
    double total = -kInf, saddle = 0, rate = 0, r = 0;
    std::optional<InnerResult> inner;
  };
  auto evaluate = [&](const std::vector<double>& x) {
    Eval e;
    const auto g = geometry_at({x[0], x[1], x[2], x[3]});
    if (!g) return e;
    const double kappa = x[4], kappa2 = x[5], f = x[6];
    if (!(f > 0.0)) return e;
    double best_saddle = -kInf;
    for (double sign : {1.0, -1.0}) {
      geometry::RateResult rr;
      const double s = geometry::f_sp1({g->rho, g->q, g->p, sign * g->r}, kappa, kappa2, f, geo, cfg.beta, &rr);
      if (s > best_saddle) {
        best_saddle = s;
        e.rate = rr.value;
        e.r = sign * g->r;
      }
    }
    if (!std::isfinite(best_saddle)) return e;
    e.saddle = best_saddle;
    e.inner = inner_L1(g->rho, g->p, Moments{ell, kappa, f, kappa2}, cfg);
    if (e.inner->converged) e.total = e.saddle + e.inner->value;
    return e;
  };
  auto objective = [&](const std::vector<double>& x) {
    try {
      return evaluate(x).total;
    } catch (const std::runtime_error&) {
      return -kInf;
    }
  };

  int evaluations = 0;
  const auto best = run_restarts(objective, starts, step, cfg.budget, evaluations);
  ComplexityPoint p = finish_point(ell, best, evaluations);
  try {
    const auto e = evaluate(best.x);
    const auto g = geometry_at({best.x[0], best.x[1], best.x[2], best.x[3]});
    if (!e.inner || !g) throw EvaluationError("argmax is infeasible");
    p.psi = e.saddle + e.inner->value;
    p.saddle = e.saddle;
    p.rate = e.rate;
    p.params = {{"rho", g->rho},       {"q", g->q},          {"p", g->p},     {"r", e.r},
                {"kappa", best.x[4]},  {"kappa2", best.x[5]}, {"f", best.x[6]}, {"ell", ell}};
    copy_inner(p, *e.inner);
  } catch (const std::runtime_error& ex) {
    p.converged = false;
    p.feasible = std::isfinite(best.value);
    add_diag(p.diagnostic, std::string("sub-solver failed at the argmax: ") + ex.what());
  }
  return p;
}

}  // namespace

// ---- model L2 -------------------------------------------------------------------

InnerResult inner_L2(double rho1, double rho2, double kappa1, double kappa2, double f1, double f2, double ell,
                     const ModelConfig& cfg, const InnerResult* warm) {
  const double beta = cfg.beta, a1 = cfg.alpha1, a2 = cfg.alpha2();
  const double b1 = beta / a1, b2 = beta / a2;
  Eigen::Matrix<double, 5, 1> u = Eigen::Matrix<double, 5, 1>::Zero();
  if (warm && warm->barred.size() == 5)
    for (int k = 0; k < 5; ++k) u(k) = get(warm->barred, static_cast<std::size_t>(k));
  const TiltedMeasure1D base1(cfg.activation, rho1, beta, a1 / beta, first_barred(u), cfg.quad);
  const TiltedMeasure1D base2(cfg.activation2, rho2, beta, a2 / beta, second_barred(u), cfg.quad);
  const TwoTarget target{ell, kappa1, f1, kappa2, f2};
  std::optional<resolvent::TwoMatrixState> state;
  if (warm && warm->phi.size() == 4) {
    resolvent::TwoMatrixState s;
    s.phi1 = warm->phi[0];
    s.phi2 = warm->phi[1];
    s.phibar1 = warm->phi[2];
    s.phibar2 = warm->phi[3];
    state = s;
  }

  InnerResult out;
  out.converged = true;
  for (double eps : cfg.schedule) {
    const cplx z(kappa1 - kappa2, eps);
    TiltedMeasure1D m1 = base1, m2 = base2;
    resolvent::TwoMatrixProblem problem;
    double change = kInf;
    std::vector<cplx> x;
    if (state) x = {state->phi1, state->phi2, state->phibar1, state->phibar2};
    auto solve = [&](const std::vector<cplx>* at) {
      std::optional<Reweight> r1, r2;
      if (at) {
        r1 = Reweight{(*at)[0], b1};
        r2 = Reweight{-(*at)[1], b2};
      }
      const auto mt = match_two(base1.with_reweight(r1), base2.with_reweight(r2), target, u, cfg.match, m1, m2);
      u = mt.u;
      out.moment_residual = std::max(out.moment_residual, mt.residual);
      problem = {m1.kernel_law(), m2.kernel_law(), cfg.joint.get(), beta, a1, a2};
      state = resolvent::solve_two_matrix(z, problem, cfg.solve, state);
      out.resolvent_residual = std::max(out.resolvent_residual, state->residual);
      return std::vector<cplx>{state->phi1, state->phi2, state->phibar1, state->phibar2};
    };
    if (!damped_coupling(x, solve, cfg.coupling_tol, cfg.coupling_max, change)) out.converged = false;
    out.coupling_residual = std::max(out.coupling_residual, change);
    // Determinant and quadratic terms: the pre-Sanov value minus its kernel sums.
    const double rest = resolvent::two_matrix_free_energy(*state, z, problem, false) -
                        kernel_log_sum(problem.kernel1, state->phi1, b1) -
                        kernel_log_sum(problem.kernel2, -state->phi2, b2);
    const double sanov = u(0) * ell + u(1) * kappa1 + u(2) * f1 + u(3) * kappa2 + u(4) * f2 +
                         tilted::log_partition_normalized(m1) + tilted::log_partition_normalized(m2);
    const double v = sanov + rest;
    if (!std::isfinite(v)) throw EvaluationError("model L2 inner value is not finite");
    out.schedule_values.emplace_back(eps, v);
  }
  out.barred = {{"ell_bar", u(0)}, {"kappa1_bar", u(1)}, {"f1_bar", u(2)}, {"kappa2_bar", u(3)}, {"f2_bar", u(4)}};
  out.phi = {state->phi1, state->phi2, state->phibar1, state->phibar2};
  finish_schedule(out);
  return out;
}

namespace {

ComplexityPoint complexity_L2(double ell, ModelConfig cfg, const std::vector<double>* warm) {
  if (!cfg.joint)
    cfg.joint = std::make_shared<spectra::JointSpectralModel>(spectra::JointSpectralModel::from_matrices(cfg.g, cfg.sigma));
  resolvent::check_alphas(cfg.alpha1, cfg.alpha2());
  const double a1 = cfg.alpha1, a2 = cfg.alpha2();
  const auto r1 = value_range(cfg.activation), r2 = value_range(cfg.activation2);
  if (!(ell > r1.first - r2.second && ell < r1.second - r2.first))
    throw DomainError("loss value outside the reachable range of the two-dataset model");
  const bool q1 = cfg.activation.functionals_coincide(), q2 = cfg.activation2.functionals_coincide();
  const bool geo_free = !(scalar_matrix(cfg.g) && scalar_matrix(cfg.sigma));
  const double d = static_cast<double>(cfg.g.rows());
  const double rho1_typ = cfg.g.trace() / d, rho2_typ = cfg.sigma.trace() / d;

  // Moment coordinates: kappa1 [, kappa2] [, f1] [, f2] after the quadratic reductions.
  struct Moments2 {
    double k1, k2, f1, f2;
  };
  auto moments_of = [&](const std::vector<double>& x, std::size_t i) {
    Moments2 m{};
    m.k1 = x[i++];
    if (q1 && q2)
      m.k2 = m.k1 - 2.0 * ell;
    else
      m.k2 = x[i++];
    m.f1 = q1 ? m.k1 : std::exp(x[i++]);
    m.f2 = q2 ? m.k2 : std::exp(x[i++]);
    return m;
  };

  struct Geo {
    double rho1, rho2;
    geometry::DiscriminatingMatrices dm;
    geometry::GeomParamsL2 g;
  };
  auto geometry_at = [&](const std::vector<double>& c, const Moments2& m) -> std::optional<Geo> {
    if (!(m.f1 > 0.0) || !(m.f2 > 0.0)) return std::nullopt;
    if (!geo_free) {
      auto dm = geometry::discriminating_matrices(cfg.g, cfg.sigma, a1, a2, m.f1, m.f2, m.k1, m.k2, rho1_typ, rho2_typ);
      const auto g = geometry::typical_L2(dm);
      return Geo{rho1_typ, rho2_typ, std::move(dm), g};
    }
    // Tilted sphere law over G, Sigma, S^-1 and the D-forms built at typical rho.
    auto dm0 = geometry::discriminating_matrices(cfg.g, cfg.sigma, a1, a2, m.f1, m.f2, m.k1, m.k2, rho1_typ, rho2_typ);
    const std::vector<Eigen::MatrixXd> basis{normalized(cfg.g), normalized(cfg.sigma), normalized(dm0.s_inv),
                                             normalized(dm0.dsd), normalized(dm0.sd_sym)};
    const auto w = sphere_weights(basis, c);
    if (!w) return std::nullopt;
    const double rho1 = frob(*w, cfg.g), rho2 = frob(*w, cfg.sigma);
    auto dm = geometry::discriminating_matrices(cfg.g, cfg.sigma, a1, a2, m.f1, m.f2, m.k1, m.k2, rho1, rho2);
    const geometry::GeomParamsL2 g{rho1, rho2, frob(*w, dm.dsd), frob(*w, dm.s_inv), frob(*w, dm.sd_sym)};
    return Geo{rho1, rho2, std::move(dm), g};
  };
  const std::size_t ngeo = geo_free ? 5 : 0;

  auto ell_only = [&](double rho1, double rho2) {
    const TiltedMeasure1D base1(cfg.activation, rho1, cfg.beta, a1 / cfg.beta, {}, cfg.quad);
    const TiltedMeasure1D base2(cfg.activation2, rho2, cfg.beta, a2 / cfg.beta, {}, cfg.quad);
    double t = 0.0;
    auto gap = [&](double tt, TiltedMeasure1D& m1, TiltedMeasure1D& m2) {
      m1 = base1.with_barred({tt, 0, 0});
      m2 = base2.with_barred({-tt, 0, 0});
      return tilted::moments(m1).ell - tilted::moments(m2).ell - ell;
    };
    TiltedMeasure1D m1 = base1, m2 = base2;
    double r = gap(t, m1, m2);
    for (int it = 0; it < 100 && std::abs(r) > 1e-10; ++it) {
      const double slope = tilted::moment_jacobian(m1)(0, 0) + tilted::moment_jacobian(m2)(0, 0);
      double step = -r / slope;
      bool ok = false;
      for (int h = 0; h < 40; ++h, step *= 0.5) {
        try {
          TiltedMeasure1D n1 = base1, n2 = base2;
          const double rn = gap(t + step, n1, n2);
          if (std::abs(rn) < std::abs(r)) {
            t += step;
            r = rn;
            m1 = n1;
            m2 = n2;
            ok = true;
            break;
          }
        } catch (const NormalizationError&) {
        }
      }
      if (!ok) break;
    }
    if (std::abs(r) > 1e-8) throw ConvergenceError("loss value is not reachable by tilting the two data laws", r);
    const auto a = tilted::moments(m1), b = tilted::moments(m2);
    std::vector<double> s{a.kappa};
    if (!(q1 && q2)) s.push_back(b.kappa);
    if (!q1) s.push_back(std::log(a.f));
    if (!q2) s.push_back(std::log(b.f));
    return s;
  };

  std::vector<std::vector<double>> starts;
  {
    std::vector<double> s(ngeo, 0.0);
    const auto m = ell_only(rho1_typ, rho2_typ);
    s.insert(s.end(), m.begin(), m.end());
    starts.push_back(s);
    if (geo_free) {
      std::vector<double> s2 = s;
      s2[0] = 0.3;
      s2[1] = -0.3;
      starts.push_back(s2);
    }
  }
  if (warm && warm->size() == starts.front().size()) starts.push_back(*warm);
  std::vector<double> step(ngeo, 0.2);
  const std::size_t nkappa = q1 && q2 ? 1 : 2;
  for (std::size_t k = ngeo; k < starts.front().size(); ++k)
    step.push_back(k < ngeo + nkappa ? 0.1 * std::max(0.05, std::abs(starts.front()[k])) : 0.3);

  struct Eval {
    double total = -kInf, saddle = 0, rate = 0;
    std::optional<Geo> geo;
    std::optional<InnerResult> inner;
    Moments2 m{};
  };
  auto evaluate = [&](const std::vector<double>& x) {
    Eval e;
    e.m = moments_of(x, ngeo);
    std::vector<double> c(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(ngeo));
    e.geo = geometry_at(c, e.m);
    if (!e.geo) return e;
    geometry::RateResult rr;
    e.saddle = geometry::f_sp2(e.geo->g, e.m.k1, e.m.k2, e.geo->dm, cfg.beta, &rr);
    e.rate = rr.value;
    if (!std::isfinite(e.saddle)) return e;
    e.inner = inner_L2(e.geo->rho1, e.geo->rho2, e.m.k1, e.m.k2, e.m.f1, e.m.f2, ell, cfg);
    if (e.inner->converged) e.total = e.saddle + e.inner->value;
    return e;
  };
  auto objective = [&](const std::vector<double>& x) {
    try {
      return evaluate(x).total;
    } catch (const std::runtime_error&) {
      return -kInf;
    }
  };

  int evaluations = 0;
  const auto best = run_restarts(objective, starts, step, cfg.budget, evaluations);
  ComplexityPoint p = finish_point(ell, best, evaluations);
  try {
    const auto e = evaluate(best.x);
    if (!e.inner || !e.geo) throw EvaluationError("argmax is infeasible");
    p.psi = e.saddle + e.inner->value;
    p.saddle = e.saddle;
    p.rate = e.rate;
    p.params = {{"rho1", e.geo->rho1}, {"rho2", e.geo->rho2}, {"q1", e.geo->g.q1}, {"q2", e.geo->g.q2},
                {"q3", e.geo->g.q3},   {"kappa1", e.m.k1},    {"kappa2", e.m.k2}, {"f1", e.m.f1},
                {"f2", e.m.f2},        {"ell", ell}};
    copy_inner(p, *e.inner);
  } catch (const std::runtime_error& ex) {
    p.converged = false;
    p.feasible = std::isfinite(best.value);
    add_diag(p.diagnostic, std::string("sub-solver failed at the argmax: ") + ex.what());
  }
  return p;
}

}  // namespace

// ---- drivers --------------------------------------------------------------------

ComplexityPoint complexity_at(double ell, const ModelConfig& cfg, const std::vector<double>* warm) {
  cfg.validate();
  switch (cfg.model) {
    case ModelKind::L: {
      const auto [lo, hi] = value_range(cfg.activation);
      if (!(ell > lo && ell < hi)) throw DomainError("loss value outside the range of the activation");
      return complexity_L(ell, cfg, warm);
    }
    case ModelKind::L1: return complexity_L1(ell, cfg, warm);
    case ModelKind::L2: return complexity_L2(ell, cfg, warm);
  }
  throw DomainError("unknown model");
}

std::vector<ComplexityPoint> complexity_curve(const std::vector<double>& ell_grid, const ModelConfig& cfg) {
  std::vector<ComplexityPoint> out;
  out.reserve(ell_grid.size());
  const std::vector<double>* warm = nullptr;
  for (double ell : ell_grid) {
    out.push_back(complexity_at(ell, cfg, warm));
    warm = out.back().feasible && !out.back().coordinates.empty() ? &out.back().coordinates : nullptr;
  }
  return out;
}

}  // namespace landscape::variational
