#include "landscape/resolvent.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "landscape/errors.hpp"

namespace landscape::resolvent {

namespace {

// Flattened laws so the inner loops stay tight.
struct Law {
  std::vector<double> x;
  std::vector<double> p;
};

Law from_kernel(const KernelLaw& k) { return {k.values, k.probs}; }

Law from_model(const spectra::SpectralModel& m) {
  Law l;
  for (const auto& pt : m.points()) {
    l.x.push_back(pt.eigenvalue);
    l.p.push_back(pt.weight);
  }
  return l;
}

double max_abs(std::initializer_list<cplx> v) {
  double m = 0.0;
  for (const auto& c : v) m = std::max(m, std::abs(c));
  return m;
}

bool finite(cplx c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); }

// ---- single matrix --------------------------------------------------------

struct Single {
  Law k;
  Law lam;
  double b;

  // F1 = z phibar + E k/(1 + k phi/b), F2 = z phi + E lam/(1 + lam phibar).
  std::pair<cplx, cplx> residual(cplx z, cplx phi, cplx phibar, cplx* jac = nullptr) const {
    cplx e1 = 0.0, d1 = 0.0;
    for (std::size_t i = 0; i < k.x.size(); ++i) {
      const cplx den = 1.0 + k.x[i] * phi / b;
      const cplx t = k.x[i] / den;
      e1 += k.p[i] * t;
      d1 += k.p[i] * t * t;
    }
    cplx e2 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < lam.x.size(); ++i) {
      const cplx t = lam.x[i] / (1.0 + lam.x[i] * phibar);
      e2 += lam.p[i] * t;
      d2 += lam.p[i] * t * t;
    }
    if (jac) {
      jac[0] = -d1 / b;  // dF1/dphi
      jac[1] = z;        // dF1/dphibar
      jac[2] = z;        // dF2/dphi
      jac[3] = -d2;      // dF2/dphibar
    }
    return {z * phibar + e1, z * phi + e2};
  }

  double res(cplx z, cplx phi, cplx phibar) const {
    const auto [a, c] = residual(z, phi, phibar);
    if (!finite(a) || !finite(c)) return std::numeric_limits<double>::infinity();
    return max_abs({a, c});
  }

  FixedPointState solve_at(cplx z, cplx phi, cplx phibar, const SolveOptions& opt) const {
    double r = res(z, phi, phibar);
    int it = 0;
    // Damped Picard.
    for (; it < opt.picard_steps && r > opt.tol; ++it) {
      cplx e1 = 0.0;
      for (std::size_t i = 0; i < k.x.size(); ++i) e1 += k.p[i] * k.x[i] / (1.0 + k.x[i] * phi / b);
      const cplx pb = -e1 / z;
      cplx e2 = 0.0;
      for (std::size_t i = 0; i < lam.x.size(); ++i) e2 += lam.p[i] * lam.x[i] / (1.0 + lam.x[i] * pb);
      const cplx ph = -e2 / z;
      const cplx nphi = (1.0 - opt.relaxation) * phi + opt.relaxation * ph;
      const cplx nphibar = (1.0 - opt.relaxation) * phibar + opt.relaxation * pb;
      const double nr = res(z, nphi, nphibar);
      if (!std::isfinite(nr)) break;
      phi = nphi;
      phibar = nphibar;
      r = nr;
    }
    // Newton on the holomorphic 2x2 system.
    for (int n = 0; n < opt.max_newton && r > opt.tol; ++n, ++it) {
      cplx j[4];
      const auto [f1, f2] = residual(z, phi, phibar, j);
      const cplx det = j[0] * j[3] - j[1] * j[2];
      if (std::abs(det) == 0.0) break;
      const cplx dphi = -(j[3] * f1 - j[1] * f2) / det;
      const cplx dphibar = -(-j[2] * f1 + j[0] * f2) / det;
      double t = 1.0;
      bool ok = false;
      for (int h = 0; h < 40; ++h, t *= 0.5) {
        const double nr = res(z, phi + t * dphi, phibar + t * dphibar);
        if (nr < r) {
          phi += t * dphi;
          phibar += t * dphibar;
          r = nr;
          ok = true;
          break;
        }
      }
      if (!ok) break;
    }
    FixedPointState s{phi, phibar, r, it, true};
    s.herglotz = stieltjes(s, z).imag() <= 1e-12 * (1.0 + std::abs(stieltjes(s, z)));
    return s;
  }
};

// Sequence of Im z values from O(1) down to the target.
std::vector<double> continuation_path(cplx z) {
  const double target = z.imag();
  std::vector<double> path;
  double e = std::max(1.0, 0.5 * std::abs(z.real()));
  while (e > target * 1.5) {
    path.push_back(e);
    e *= 0.25;
  }
  path.push_back(target);
  return path;
}

}  // namespace

cplx stieltjes(const FixedPointState& s, cplx z) { return 1.0 / z + s.phi * s.phibar; }

FixedPointState solve_fixed_point(cplx z, const KernelLaw& kernel, const spectra::SpectralModel& model, double beta_eff,
                                  const SolveOptions& options, const std::optional<FixedPointState>& start) {
  if (!(z.imag() > 0.0)) throw DomainError("solve_fixed_point: need Im z > 0");
  if (!(beta_eff > 0.0)) throw DomainError("solve_fixed_point: need beta > 0");
  const Single sys{from_kernel(kernel), from_model(model), beta_eff};
  FixedPointState s;
  int total = 0;
  if (start) {
    s = sys.solve_at(z, start->phi, start->phibar, options);
    total = s.iterations;
  }
  if (!start || s.residual > options.tol) {
    std::vector<double> path = options.continuation ? continuation_path(z) : std::vector<double>{z.imag()};
    cplx phi = -1.0 / cplx(z.real(), path.front());
    cplx phibar = phi;
    for (double e : path) {
      s = sys.solve_at(cplx(z.real(), e), phi, phibar, options);
      total += s.iterations;
      phi = s.phi;
      phibar = s.phibar;
    }
  }
  s.iterations = total;
  if (!(s.residual <= options.tol))
    throw ConvergenceError("resolvent fixed point did not converge at z = " + std::to_string(z.real()) + "+" +
                               std::to_string(z.imag()) + "i",
                           s.residual);
  return s;
}

FixedPointState solve_fixed_point(cplx z, const tilted::TiltedMeasure1D& measure, const spectra::SpectralModel& model,
                                  double beta, const SolveOptions& options) {
  return solve_fixed_point(z, measure.kernel_law(), model, beta, options);
}

double stationarity_residual(const FixedPointState& s, cplx z, const KernelLaw& kernel,
                             const spectra::SpectralModel& model, double beta_eff) {
  const Single sys{from_kernel(kernel), from_model(model), beta_eff};
  return sys.res(z, s.phi, s.phibar);
}

double free_energy(const FixedPointState& s, cplx z, const KernelLaw& kernel, const spectra::SpectralModel& model,
                   double beta_eff) {
  double a = 0.0;
  for (std::size_t i = 0; i < kernel.values.size(); ++i)
    a += kernel.probs[i] * std::log(std::abs(1.0 + kernel.values[i] * s.phi / beta_eff));
  const double b = model.expect([&](double l) { return std::log(std::abs(z * (1.0 + s.phibar * l))); });
  const double v = beta_eff * a + b + (z * s.phi * s.phibar).real();
  if (!std::isfinite(v)) throw EvaluationError("resolvent free energy is singular at the state");
  return v;
}

double free_energy_rm(const FixedPointState& s, double kappa, double eps, const tilted::TiltedMeasure1D& measure,
                      const spectra::SpectralModel& model, double beta, tilted::ModulusPlacement placement) {
  const cplx z(kappa, eps);
  const double a = tilted::log_expect_abs(measure, s.phi, beta, placement);
  const double b = model.expect([&](double l) { return std::log(std::abs(z + z * s.phibar * l)); });
  return beta * a + b + (z * s.phibar * s.phi).real();
}

std::vector<double> default_schedule() { return {1e-2, 5e-3, 2.5e-3, 1.25e-3}; }

Extrapolation richardson(const std::vector<std::pair<double, double>>& samples) {
  if (samples.empty()) throw DomainError("richardson: empty schedule");
  if (samples.size() == 1) return {samples[0].second, 0.0, false};
  std::vector<double> ext;
  bool flagged = false;
  double prev_inc = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < samples.size(); ++i) {
    const auto [e0, v0] = samples[i];
    const auto [e1, v1] = samples[i + 1];
    if (!(e1 < e0)) throw DomainError("richardson: schedule must be decreasing");
    ext.push_back((e0 * v1 - e1 * v0) / (e0 - e1));
    const double inc = std::abs(v1 - v0);
    if (inc > prev_inc + 1e-12) flagged = true;
    prev_inc = inc;
  }
  const double err = ext.size() > 1 ? std::abs(ext.back() - ext[ext.size() - 2])
                                    : std::abs(samples.back().second - samples[samples.size() - 2].second);
  return {ext.back(), err, flagged};
}

LogPotential log_potential(double kappa, const KernelLaw& kernel, const spectra::SpectralModel& model, double beta_eff,
                           const std::vector<double>& schedule, const SolveOptions& options) {
  LogPotential out;
  std::optional<FixedPointState> warm;
  for (double eps : schedule) {
    if (!(eps > 0.0)) throw DomainError("log_potential: schedule entries must be positive");
    const cplx z(kappa, eps);
    const auto s = solve_fixed_point(z, kernel, model, beta_eff, options, warm);
    warm = s;
    out.epsilon_schedule.emplace_back(eps, free_energy(s, z, kernel, model, beta_eff));
    out.last = s;
  }
  const auto ex = richardson(out.epsilon_schedule);
  out.value = ex.value;
  out.extrapolation_error = ex.error;
  out.flagged = ex.flagged;
  return out;
}

LogPotential log_potential(double kappa, const tilted::TiltedMeasure1D& measure, const spectra::SpectralModel& model,
                           double beta, const std::vector<double>& schedule, const SolveOptions& options) {
  return log_potential(kappa, measure.kernel_law(), model, beta, schedule, options);
}

// ---- two datasets ---------------------------------------------------------

void check_alphas(double alpha1, double alpha2) {
  if (!(alpha1 > 1.0)) throw DomainError("two-dataset model needs alpha1 > 1");
  if (std::abs(alpha2 - alpha1 / (alpha1 - 1.0)) > 1e-9 * std::max(1.0, alpha2))
    throw DomainError("two-dataset model needs alpha2 = alpha1 / (alpha1 - 1)");
}

namespace {

// Spectral sums over X = I + phibar1 G - phibar2 Sigma.
struct DetTerms {
  cplx tg, ts;          // (1/d) tr G X^-1, (1/d) tr Sigma X^-1
  cplx tgg, tgs, tss;   // (1/d) tr G X^-1 G X^-1 etc.
  double logabs = 0.0;  // (1/d) log|det X|
};

DetTerms det_terms(const spectra::JointSpectralModel& joint, cplx pb1, cplx pb2, bool second_order) {
  DetTerms t;
  if (joint.has_pairs()) {
    for (const auto& p : joint.pairs()) {
      const cplx x = 1.0 + pb1 * p.lambda_g - pb2 * p.lambda_sigma;
      const cplx a = p.lambda_g / x;
      const cplx b = p.lambda_sigma / x;
      t.tg += p.weight * a;
      t.ts += p.weight * b;
      t.tgg += p.weight * a * a;
      t.tgs += p.weight * a * b;
      t.tss += p.weight * b * b;
      t.logabs += p.weight * std::log(std::abs(x));
    }
    return t;
  }
  using CM = Eigen::MatrixXcd;
  const auto& g = joint.g_matrix();
  const auto& s = joint.sigma_matrix();
  const double d = static_cast<double>(g.rows());
  CM x = CM::Identity(g.rows(), g.cols()) + pb1 * g.cast<cplx>() - pb2 * s.cast<cplx>();
  Eigen::PartialPivLU<CM> lu(x);
  const CM a = lu.solve(g.cast<cplx>());  // X^-1 G
  const CM b = lu.solve(s.cast<cplx>());  // X^-1 Sigma
  t.tg = a.trace() / d;
  t.ts = b.trace() / d;
  if (second_order) {
    t.tgg = (a * a).trace() / d;
    t.tgs = (a * b).trace() / d;
    t.tss = (b * b).trace() / d;
  }
  const auto& u = lu.matrixLU();
  for (Eigen::Index i = 0; i < u.rows(); ++i) t.logabs += std::log(std::abs(u(i, i)));
  t.logabs /= d;
  return t;
}

struct Two {
  const TwoMatrixProblem& pr;
  double b1, b2;

  // Residuals F1..F4 in the order (phi1, phi2, phibar1, phibar2) derivatives.
  std::array<cplx, 4> residual(cplx z, const TwoMatrixState& s, Eigen::Matrix4cd* jac = nullptr) const {
    cplx e1 = 0.0, d1 = 0.0, e2 = 0.0, d2 = 0.0;
    for (std::size_t i = 0; i < pr.kernel1.values.size(); ++i) {
      const double k = pr.kernel1.values[i];
      const cplx t = k / (1.0 + k * s.phi1 / b1);
      e1 += pr.kernel1.probs[i] * t;
      d1 += pr.kernel1.probs[i] * t * t;
    }
    for (std::size_t i = 0; i < pr.kernel2.values.size(); ++i) {
      const double k = pr.kernel2.values[i];
      const cplx t = k / (1.0 - k * s.phi2 / b2);
      e2 += pr.kernel2.probs[i] * t;
      d2 += pr.kernel2.probs[i] * t * t;
    }
    const DetTerms dt = det_terms(*pr.joint, s.phibar1, s.phibar2, jac != nullptr);
    // dV/dphi1 = E1 k/(1+k phi1/b1) + z phibar1
    // dV/dphi2 = -E2 k/(1-k phi2/b2) - z phibar2
    // dV/dphibar1 = tg + z phi1
    // dV/dphibar2 = -ts - z phi2
    std::array<cplx, 4> f{e1 + z * s.phibar1, e2 + z * s.phibar2, dt.tg + z * s.phi1, dt.ts + z * s.phi2};
    if (jac) {
      auto& j = *jac;
      j.setZero();
      j(0, 0) = -d1 / b1;
      j(0, 2) = z;
      j(1, 1) = d2 / b2;
      j(1, 3) = z;
      j(2, 2) = -dt.tgg;
      j(2, 3) = dt.tgs;
      j(2, 0) = z;
      j(3, 2) = -dt.tgs;
      j(3, 3) = dt.tss;
      j(3, 1) = z;
    }
    return f;
  }

  double res(cplx z, const TwoMatrixState& s) const {
    const auto f = residual(z, s);
    double m = 0.0;
    for (const auto& c : f) {
      if (!finite(c)) return std::numeric_limits<double>::infinity();
      m = std::max(m, std::abs(c));
    }
    return m;
  }

  TwoMatrixState solve_at(cplx z, TwoMatrixState s, const SolveOptions& opt) const {
    double r = res(z, s);
    int it = 0;
    for (; it < opt.picard_steps && r > opt.tol; ++it) {
      const auto f = residual(z, s);
      // Each equation solved for its own variable: F = E[...] + z * var.
      TwoMatrixState n = s;
      n.phibar1 = s.phibar1 - f[0] / z;
      n.phibar2 = s.phibar2 - f[1] / z;
      n.phi1 = s.phi1 - f[2] / z;
      n.phi2 = s.phi2 - f[3] / z;
      TwoMatrixState m = s;
      const double w = opt.relaxation;
      m.phi1 = (1 - w) * s.phi1 + w * n.phi1;
      m.phi2 = (1 - w) * s.phi2 + w * n.phi2;
      m.phibar1 = (1 - w) * s.phibar1 + w * n.phibar1;
      m.phibar2 = (1 - w) * s.phibar2 + w * n.phibar2;
      const double nr = res(z, m);
      if (!std::isfinite(nr)) break;
      s = m;
      r = nr;
      if (it > 20 && r < 1e-6) break;  // close enough for Newton
    }
    for (int n = 0; n < opt.max_newton && r > opt.tol; ++n, ++it) {
      Eigen::Matrix4cd j;
      const auto f = residual(z, s, &j);
      Eigen::Vector4cd fv(f[0], f[1], f[2], f[3]);
      const Eigen::Vector4cd step = -j.fullPivLu().solve(fv);
      if (!step.allFinite()) break;
      double t = 1.0;
      bool ok = false;
      for (int h = 0; h < 40; ++h, t *= 0.5) {
        TwoMatrixState c = s;
        c.phi1 += t * step(0);
        c.phi2 += t * step(1);
        c.phibar1 += t * step(2);
        c.phibar2 += t * step(3);
        const double nr = res(z, c);
        if (nr < r) {
          s = c;
          r = nr;
          ok = true;
          break;
        }
      }
      if (!ok) break;
    }
    s.residual = r;
    s.iterations = it;
    return s;
  }
};

double two_value(const TwoMatrixState& s, cplx z, const TwoMatrixProblem& pr, bool sanov) {
  const double b1 = pr.beta / pr.alpha1;
  const double b2 = pr.beta / pr.alpha2;
  double a1 = 0.0, a2 = 0.0;
  if (sanov) {
    a1 = tilted::log_expect_abs(pr.kernel1, s.phi1, b1);
    a2 = tilted::log_expect_abs(pr.kernel2, -s.phi2, b2);
  } else {
    for (std::size_t i = 0; i < pr.kernel1.values.size(); ++i)
      a1 += pr.kernel1.probs[i] * std::log(std::abs(1.0 + pr.kernel1.values[i] * s.phi1 / b1));
    for (std::size_t i = 0; i < pr.kernel2.values.size(); ++i)
      a2 += pr.kernel2.probs[i] * std::log(std::abs(1.0 - pr.kernel2.values[i] * s.phi2 / b2));
  }
  const DetTerms dt = det_terms(*pr.joint, s.phibar1, s.phibar2, false);
  const double v = b1 * a1 + b2 * a2 + std::log(std::abs(z)) + dt.logabs + (z * (s.phibar1 * s.phi1 - s.phibar2 * s.phi2)).real();
  if (!std::isfinite(v)) throw EvaluationError("two-matrix free energy is singular at the state");
  return v;
}

}  // namespace

std::array<cplx, 4> two_matrix_gradient(const TwoMatrixState& s, cplx z, const TwoMatrixProblem& problem) {
  const Two sys{problem, problem.beta / problem.alpha1, problem.beta / problem.alpha2};
  const auto f = sys.residual(z, s);
  // Convert the internal equation order back to derivative signs.
  return {f[0], -f[1], f[2], -f[3]};
}

double two_matrix_free_energy(const TwoMatrixState& s, cplx z, const TwoMatrixProblem& problem, bool sanov_form) {
  return two_value(s, z, problem, sanov_form);
}

TwoMatrixState solve_two_matrix(cplx z, const TwoMatrixProblem& problem, const SolveOptions& options,
                                const std::optional<TwoMatrixState>& start) {
  if (!(z.imag() > 0.0)) throw DomainError("solve_two_matrix: need Im z > 0");
  if (!problem.joint) throw DomainError("solve_two_matrix: joint spectrum missing");
  check_alphas(problem.alpha1, problem.alpha2);
  const Two sys{problem, problem.beta / problem.alpha1, problem.beta / problem.alpha2};
  TwoMatrixState s;
  int total = 0;
  if (start) {
    s = sys.solve_at(z, *start, options);
    total = s.iterations;
  }
  if (!start || s.residual > options.tol) {
    std::vector<double> path = options.continuation ? continuation_path(z) : std::vector<double>{z.imag()};
    const cplx z0(z.real(), path.front());
    TwoMatrixState cur;
    cur.phi1 = cur.phi2 = cur.phibar1 = cur.phibar2 = -1.0 / z0;
    for (double e : path) {
      cur = sys.solve_at(cplx(z.real(), e), cur, options);
      total += cur.iterations;
    }
    s = cur;
  }
  s.iterations = total;
  if (!(s.residual <= options.tol)) throw ConvergenceError("two-matrix fixed point did not converge", s.residual);
  s.value = two_value(s, z, problem, false);
  return s;
}

LogPotential two_matrix_log_potential(double kappa, const TwoMatrixProblem& problem,
                                      const std::vector<double>& schedule, const SolveOptions& options) {
  LogPotential out;
  std::optional<TwoMatrixState> warm;
  for (double eps : schedule) {
    const cplx z(kappa, eps);
    const auto s = solve_two_matrix(z, problem, options, warm);
    warm = s;
    out.epsilon_schedule.emplace_back(eps, s.value);
    out.last_two = s;
  }
  const auto ex = richardson(out.epsilon_schedule);
  out.value = ex.value;
  out.extrapolation_error = ex.error;
  out.flagged = ex.flagged;
  return out;
}

}  // namespace landscape::resolvent
