#include "landscape/tilted.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>

#include "landscape/errors.hpp"
#include "landscape/quadrature.hpp"

namespace landscape::tilted {

namespace detail {

// Functional grids for one parameter set, shared by every measure derived
// from it through with_barred / with_reweight.
struct GridSet {
  Activation activation;
  double rho;
  double p = 0.0;
  double rho_star = 0.0;
  bool two_dim = false;

  std::mutex mutex;
  std::map<std::size_t, std::shared_ptr<const FunctionalGrid>> grids;
  std::size_t start = 0;  // node count that sufficed last time

  GridSet(const Activation& a, double r) : activation(a), rho(r) {}
  GridSet(const Activation& a, double r, double pp, double rs)
      : activation(a), rho(r), p(pp), rho_star(rs), two_dim(true) {}

  std::shared_ptr<const FunctionalGrid> get(std::size_t n) {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = grids.find(n);
    if (it != grids.end()) return it->second;
    auto grid = std::make_shared<const FunctionalGrid>(two_dim ? build2d(n) : build1d(n));
    grids.emplace(n, grid);
    return grid;
  }

  FunctionalGrid build1d(std::size_t n) const {
    const auto& rule = quadrature::gauss_hermite(n);
    FunctionalGrid g;
    g.per_dim = n;
    g.log_base = rule.log_weights;
    g.gauss_exponent.resize(n);
    g.functionals.resize(3, static_cast<Eigen::Index>(n));
    g.kernel.resize(n);
    const double sr = std::sqrt(rho);
    for (std::size_t i = 0; i < n; ++i) {
      const double zeta = rule.nodes[i];
      const double y = sr * zeta;
      const auto t = activation.eval_triple(y);
      const auto c = static_cast<Eigen::Index>(i);
      g.functionals(0, c) = t.value;
      g.functionals(1, c) = y * t.d1;
      g.functionals(2, c) = t.d1 * t.d1;
      g.kernel[i] = t.d2;
      g.gauss_exponent[i] = 0.5 * zeta * zeta;
    }
    if (n >= 2) g.tail_pairs = {{0, 1}, {n - 1, n - 2}};
    return g;
  }

  FunctionalGrid build2d(std::size_t n) const {
    const auto& rule = quadrature::gauss_hermite(n);
    const std::size_t total = n * n;
    FunctionalGrid g;
    g.per_dim = n;
    g.log_base.resize(total);
    g.gauss_exponent.resize(total);
    g.functionals.resize(4, static_cast<Eigen::Index>(total));
    g.kernel.resize(total);
    const double sr = std::sqrt(rho);
    const double sp = std::sqrt(p);
    const double sq = std::sqrt(std::max(0.0, rho_star - p));
    for (std::size_t i = 0; i < n; ++i) {
      const double zeta = rule.nodes[i];
      const double y = sr * zeta;
      const auto t = activation.eval_triple(y);
      for (std::size_t j = 0; j < n; ++j) {
        const double zeta2 = rule.nodes[j];
        const double yp = sp * zeta + sq * zeta2;
        const double residual = t.value - activation.eval(yp);
        const double th = residual * t.d1;
        const std::size_t k = i * n + j;
        const auto c = static_cast<Eigen::Index>(k);
        g.log_base[k] = rule.log_weights[i] + rule.log_weights[j];
        g.gauss_exponent[k] = 0.5 * (zeta * zeta + zeta2 * zeta2);
        g.functionals(0, c) = residual * residual;
        g.functionals(1, c) = th * sr * zeta;
        g.functionals(2, c) = th * sr * zeta2;
        g.functionals(3, c) = th * th;
        g.kernel[k] = residual * t.d2;
      }
    }
    if (n >= 2) {
      for (std::size_t j = 0; j < n; ++j) {
        g.tail_pairs.emplace_back(0 * n + j, 1 * n + j);
        g.tail_pairs.emplace_back((n - 1) * n + j, (n - 2) * n + j);
        g.tail_pairs.emplace_back(j * n + 0, j * n + 1);
        g.tail_pairs.emplace_back(j * n + n - 1, j * n + n - 2);
      }
    }
    return g;
  }
};

}  // namespace detail

namespace {

double log_reweight(const std::optional<Reweight>& rw, double kernel) {
  if (!rw) return 0.0;
  return std::log(std::abs(1.0 + kernel * rw->phi / rw->beta_eff));
}

// Exponent of the unnormalized density relative to Lebesgue measure.
double total_exponent(const FunctionalGrid& g, std::size_t i, const Eigen::VectorXd& barred, double scale,
                      const std::optional<Reweight>& rw) {
  const double tilt = barred.dot(g.functionals.col(static_cast<Eigen::Index>(i)));
  return -g.gauss_exponent[i] - scale * tilt + log_reweight(rw, g.kernel[i]);
}

void check_tails(const FunctionalGrid& g, const Eigen::VectorXd& barred, double scale,
                 const std::optional<Reweight>& rw) {
  for (const auto& [outer, inner] : g.tail_pairs) {
    const double eo = total_exponent(g, outer, barred, scale, rw);
    const double ei = total_exponent(g, inner, barred, scale, rw);
    if (!std::isfinite(eo) && eo > 0.0)
      throw NormalizationError("tilted density is not finite at the quadrature boundary");
    if (std::isfinite(eo) && std::isfinite(ei) && eo >= ei)
      throw NormalizationError("tilted density does not decay in the tails (exponent grows outward)");
  }
}

bool close(const DiscreteTilt& a, const DiscreteTilt& b, double tol) {
  const double dz = std::abs(std::expm1(b.log_normalized_partition() - a.log_normalized_partition()));
  if (!(dz < tol)) return false;
  const Eigen::VectorXd ma = a.mean();
  const Eigen::VectorXd mb = b.mean();
  for (Eigen::Index k = 0; k < ma.size(); ++k)
    if (!(std::abs(ma(k) - mb(k)) <= tol * (1.0 + std::abs(mb(k))))) return false;
  return true;
}

// Doubles the node count from the cached start until the partition and the
// moments stabilize.
template <class GridSetPtr>
std::shared_ptr<const DiscreteTilt> resolve_adaptive(GridSetPtr& grids, const QuadratureSpec& quad,
                                                     const Eigen::VectorXd& barred, double scale,
                                                     const std::optional<Reweight>& rw, bool& converged) {
  std::size_t n;
  {
    std::lock_guard<std::mutex> lock(grids->mutex);
    n = grids->start ? grids->start : quad.initial_nodes;
  }
  n = std::clamp(n, std::min(quad.initial_nodes, quad.max_nodes), quad.max_nodes);
  auto grid = grids->get(n);
  check_tails(*grid, barred, scale, rw);
  auto current = std::make_shared<const DiscreteTilt>(grid, barred, scale, rw);
  converged = true;
  if (!quad.adaptive) return current;
  while (true) {
    if (n >= quad.max_nodes) {
      converged = false;
      return current;
    }
    const std::size_t next = std::min(2 * n, quad.max_nodes);
    auto fine_grid = grids->get(next);
    check_tails(*fine_grid, barred, scale, rw);
    auto fine = std::make_shared<const DiscreteTilt>(fine_grid, barred, scale, rw);
    if (close(*current, *fine, quad.rel_tol)) {
      std::lock_guard<std::mutex> lock(grids->mutex);
      grids->start = n;
      return fine;
    }
    n = next;
    current = fine;
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw DomainError(what);
}

}  // namespace

DiscreteTilt::DiscreteTilt(std::shared_ptr<const FunctionalGrid> grid, const Eigen::VectorXd& barred, double scale,
                           const std::optional<Reweight>& reweight)
    : grid_(std::move(grid)) {
  const auto& g = *grid_;
  const std::size_t n = g.log_base.size();
  std::vector<double> a(n);
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    const double tilt = barred.dot(g.functionals.col(static_cast<Eigen::Index>(i)));
    a[i] = g.log_base[i] - scale * tilt + log_reweight(reweight, g.kernel[i]);
    if (std::isnan(a[i])) throw EvaluationError("tilted density is not a number at a quadrature node");
    top = std::max(top, a[i]);
  }
  if (!std::isfinite(top)) throw NormalizationError("tilted density vanishes or diverges on the grid");
  double sum = 0.0;
  for (double v : a) sum += std::exp(v - top);
  log_z_ = top + std::log(sum);
  probs_.resize(n);
  for (std::size_t i = 0; i < n; ++i) probs_[i] = std::exp(a[i] - log_z_);
}

Eigen::VectorXd DiscreteTilt::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(grid_->functionals.rows());
  for (std::size_t i = 0; i < probs_.size(); ++i)
    if (probs_[i] > 0.0) m += probs_[i] * grid_->functionals.col(static_cast<Eigen::Index>(i));
  return m;
}

Eigen::MatrixXd DiscreteTilt::covariance() const {
  const Eigen::VectorXd mu = mean();
  const auto k = grid_->functionals.rows();
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, k);
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    if (probs_[i] <= 0.0) continue;
    const Eigen::VectorXd d = grid_->functionals.col(static_cast<Eigen::Index>(i)) - mu;
    c.noalias() += probs_[i] * d * d.transpose();
  }
  return 0.5 * (c + c.transpose());
}

// ---- 1-D ------------------------------------------------------------------

TiltedMeasure1D::TiltedMeasure1D(const Activation& activation, double rho, double beta, double scale, Barred1D barred,
                                 QuadratureSpec quad, std::optional<Reweight> reweight)
    : TiltedMeasure1D(activation, rho, beta, scale, barred, quad, reweight,
                      std::make_shared<detail::GridSet>(activation, rho)) {}

TiltedMeasure1D::TiltedMeasure1D(const Activation& activation, double rho, double beta, double scale, Barred1D barred,
                                 QuadratureSpec quad, std::optional<Reweight> reweight,
                                 std::shared_ptr<detail::GridSet> grids)
    : activation_(activation),
      rho_(rho),
      beta_(beta),
      scale_(scale),
      barred_(barred),
      quad_(quad),
      reweight_(reweight),
      grids_(std::move(grids)) {
  require(rho >= 0.0 && std::isfinite(rho), "tilted measure: rho must be finite and nonnegative");
  require(std::isfinite(scale) && scale > 0.0, "tilted measure: scale must be positive");
  require(std::isfinite(barred.ell) && std::isfinite(barred.kappa) && std::isfinite(barred.f),
          "tilted measure: barred multipliers must be finite");
  resolve();
}

void TiltedMeasure1D::resolve() {
  tilt_ = resolve_adaptive(grids_, quad_, barred_.vec(), scale_, reweight_, quad_converged_);
}

TiltedMeasure1D TiltedMeasure1D::with_barred(Barred1D barred) const {
  return TiltedMeasure1D(activation_, rho_, beta_, scale_, barred, quad_, reweight_, grids_);
}

TiltedMeasure1D TiltedMeasure1D::with_reweight(std::optional<Reweight> reweight) const {
  return TiltedMeasure1D(activation_, rho_, beta_, scale_, barred_, quad_, reweight, grids_);
}

KernelLaw TiltedMeasure1D::kernel_law() const {
  KernelLaw law;
  const auto& p = tilt_->probs();
  const auto& k = tilt_->grid().kernel;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    law.values.push_back(k[i]);
    law.probs.push_back(p[i]);
  }
  return law;
}

// ---- 2-D ------------------------------------------------------------------

TiltedMeasure2D::TiltedMeasure2D(const Activation& activation, double rho, double p, double rho_star, double beta,
                                 Barred2D barred, QuadratureSpec quad, std::optional<Reweight> reweight)
    : TiltedMeasure2D(activation, rho, p, rho_star, beta, barred, quad, reweight,
                      std::make_shared<detail::GridSet>(activation, rho, p, rho_star)) {}

TiltedMeasure2D::TiltedMeasure2D(const Activation& activation, double rho, double p, double rho_star, double beta,
                                 Barred2D barred, QuadratureSpec quad, std::optional<Reweight> reweight,
                                 std::shared_ptr<detail::GridSet> grids)
    : activation_(activation),
      rho_(rho),
      p_(p),
      rho_star_(rho_star),
      beta_(beta),
      barred_(barred),
      quad_(quad),
      reweight_(reweight),
      grids_(std::move(grids)) {
  require(rho >= 0.0 && std::isfinite(rho), "tilted measure: rho must be finite and nonnegative");
  require(p >= 0.0 && p <= rho_star * (1.0 + 1e-12), "tilted measure: need 0 <= p <= rho_star");
  require(beta > 0.0, "tilted measure: beta must be positive");
  resolve();
}

void TiltedMeasure2D::resolve() {
  tilt_ = resolve_adaptive(grids_, quad_, barred_.vec(), 1.0 / beta_, reweight_, quad_converged_);
}

TiltedMeasure2D TiltedMeasure2D::with_barred(Barred2D barred) const {
  return TiltedMeasure2D(activation_, rho_, p_, rho_star_, beta_, barred, quad_, reweight_, grids_);
}

TiltedMeasure2D TiltedMeasure2D::with_reweight(std::optional<Reweight> reweight) const {
  return TiltedMeasure2D(activation_, rho_, p_, rho_star_, beta_, barred_, quad_, reweight, grids_);
}

KernelLaw TiltedMeasure2D::kernel_law() const {
  KernelLaw law;
  const auto& p = tilt_->probs();
  const auto& k = tilt_->grid().kernel;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    law.values.push_back(k[i]);
    law.probs.push_back(p[i]);
  }
  return law;
}

// ---- free functions -------------------------------------------------------

double partition(const TiltedMeasure1D& m) {
  return std::sqrt(2.0 * std::numbers::pi) * std::exp(m.tilt().log_normalized_partition());
}

double partition(const TiltedMeasure2D& m) {
  return 2.0 * std::numbers::pi * std::exp(m.tilt().log_normalized_partition());
}

double log_partition_normalized(const TiltedMeasure1D& m) {
  return m.tilt().log_normalized_partition() / m.scale();
}

double log_partition_normalized(const TiltedMeasure2D& m) {
  return m.tilt().log_normalized_partition() / m.scale();
}

Moments moments(const TiltedMeasure1D& m) {
  const Eigen::VectorXd mu = m.tilt().mean();
  return {mu(0), mu(1), mu(2), std::nullopt};
}

Moments moments(const TiltedMeasure2D& m) {
  const Eigen::VectorXd mu = m.tilt().mean();
  return {mu(0), mu(1), mu(3), mu(2)};
}

Eigen::Matrix3d moment_jacobian(const TiltedMeasure1D& m) {
  return -m.scale() * m.tilt().covariance();
}

Eigen::Matrix4d moment_jacobian(const TiltedMeasure2D& m) {
  return -m.scale() * m.tilt().covariance();
}

namespace {

Eigen::Vector3d target_vec(const Moments& t) { return {t.ell, t.kappa, t.f}; }

Eigen::Vector4d target_vec2(const Moments& t) {
  if (!t.kappa2) throw DomainError("match_moments2d: target needs kappa2");
  return {t.ell, t.kappa, *t.kappa2, t.f};
}

// Newton on mean(barred) = target over the active coordinates. The step is
// the Newton step of the convex dual  scale * barred . target + log Z(barred),
// and a backtracking step is accepted on Armijo decrease of that dual (or, near
// the solution where the dual is flat to rounding, on a smaller residual).
template <class Measure, int K>
std::pair<Measure, int> newton_match(const Measure& start, const Eigen::Matrix<double, K, 1>& target,
                                     const std::array<bool, K>& active, const MatchOptions& opt) {
  std::vector<Eigen::Index> idx;
  for (int k = 0; k < K; ++k)
    if (active[static_cast<std::size_t>(k)]) idx.push_back(k);
  const auto na = static_cast<Eigen::Index>(idx.size());
  auto at = [&](Eigen::Index a) { return idx[static_cast<std::size_t>(a)]; };

  auto residual_of = [&](const Measure& m, Eigen::VectorXd& r) {
    const Eigen::VectorXd mu = m.tilt().mean();
    r.resize(na);
    for (Eigen::Index a = 0; a < na; ++a) r(a) = mu(at(a)) - target(at(a));
    return r.cwiseAbs().maxCoeff();
  };
  auto dual_of = [&](const Measure& m) {
    const Eigen::Matrix<double, K, 1> b = m.barred().vec();
    double v = m.tilt().log_normalized_partition();
    for (Eigen::Index a = 0; a < na; ++a) v += m.scale() * b(at(a)) * target(at(a));
    return v;
  };

  Measure current = start;
  Eigen::VectorXd r;
  double res = residual_of(current, r);
  double dual = dual_of(current);
  int it = 0;
  for (; it < opt.max_iterations && res > opt.tol; ++it) {
    const Eigen::MatrixXd cov = current.tilt().covariance();
    Eigen::MatrixXd jac(na, na);
    for (Eigen::Index a = 0; a < na; ++a)
      for (Eigen::Index b = 0; b < na; ++b) jac(a, b) = -current.scale() * cov(at(a), at(b));
    const Eigen::VectorXd step = jac.completeOrthogonalDecomposition().solve(-r);
    // Directional derivative of the dual along the step: scale * (target - mean) . step.
    const double slope = -current.scale() * r.dot(step);
    const Eigen::Matrix<double, K, 1> base = current.barred().vec();
    bool accepted = false;
    double t = 1.0;
    for (int h = 0; h <= opt.max_halvings; ++h, t *= 0.5) {
      Eigen::Matrix<double, K, 1> trial = base;
      for (Eigen::Index a = 0; a < na; ++a) trial(at(a)) += t * step(a);
      try {
        using B = std::decay_t<decltype(current.barred())>;
        Measure cand = current.with_barred(B::from(trial));
        Eigen::VectorXd rc;
        const double rn = residual_of(cand, rc);
        const double dn = dual_of(cand);
        if (dn <= dual + 1e-4 * t * std::min(slope, 0.0) || (rn < res && dn <= dual + 1e-12 * (1.0 + std::abs(dual)))) {
          current = std::move(cand);
          r = rc;
          res = rn;
          dual = dn;
          accepted = true;
          break;
        }
      } catch (const NormalizationError&) {
      } catch (const EvaluationError&) {
      }
    }
    if (!accepted || !(current.barred().vec().cwiseAbs().maxCoeff() < 1e8)) break;
  }
  if (res > opt.tol)
    throw ConvergenceError("match_moments: target moments not reached after " + std::to_string(it) + " iterations",
                           res);
  return {current, it};
}

}  // namespace

MatchResult1D match_moments(const Moments& target, const TiltedMeasure1D& start, std::array<bool, 3> active,
                            MatchOptions options) {
  auto [m, it] = newton_match<TiltedMeasure1D, 3>(start, target_vec(target), active, options);
  MatchResult1D out;
  out.barred = m.barred();
  out.achieved = moments(m);
  const Eigen::Vector3d diff = target_vec(out.achieved) - target_vec(target);
  double res = 0.0;
  for (int k = 0; k < 3; ++k)
    if (active[static_cast<std::size_t>(k)]) res = std::max(res, std::abs(diff(k)));
  out.residual = res;
  out.iterations = it;
  return out;
}

MatchResult1D match_moments(const Moments& target, double rho, double beta, const Activation& activation,
                            MatchOptions options) {
  TiltedMeasure1D start(activation, rho, beta, 1.0 / beta, {});
  if (activation.functionals_coincide()) {
    // Only one independent constraint: kappa = f = 2 ell on every measure.
    const double gap = std::max(std::abs(target.kappa - 2.0 * target.ell), std::abs(target.f - 2.0 * target.ell));
    if (gap > options.tol)
      throw ConvergenceError("match_moments: quadratic activation forces kappa = f = 2 ell", gap);
    return match_moments(target, start, {true, false, false}, options);
  }
  return match_moments(target, start, {true, true, true}, options);
}

MatchResult2D match_moments2d(const Moments& target, const TiltedMeasure2D& start, MatchOptions options) {
  const Eigen::Vector4d t = target_vec2(target);
  auto [m, it] = newton_match<TiltedMeasure2D, 4>(start, t, {true, true, true, true}, options);
  MatchResult2D out;
  out.barred = m.barred();
  out.achieved = moments(m);
  out.residual = (target_vec2(out.achieved) - t).cwiseAbs().maxCoeff();
  out.iterations = it;
  return out;
}

double log_expect_abs(const KernelLaw& law, std::complex<double> phi, double beta_eff, ModulusPlacement placement) {
  if (phi == 0.0) return 0.0;
  double value = 0.0;
  if (placement == ModulusPlacement::inside) {
    for (std::size_t i = 0; i < law.values.size(); ++i)
      value += law.probs[i] * std::abs(1.0 + law.values[i] * phi / beta_eff);
  } else {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < law.values.size(); ++i) acc += law.probs[i] * (1.0 + law.values[i] * phi / beta_eff);
    value = std::abs(acc);
  }
  if (!(value >= 1e-300)) throw EvaluationError("log_expect_abs: expectation vanishes (spectral edge singularity)");
  return std::log(value);
}

double log_expect_abs(const TiltedMeasure1D& m, std::complex<double> phi, double beta_eff,
                      ModulusPlacement placement) {
  return log_expect_abs(m.kernel_law(), phi, beta_eff, placement);
}

double log_expect_abs(const TiltedMeasure2D& m, std::complex<double> phi, double beta_eff,
                      ModulusPlacement placement) {
  return log_expect_abs(m.kernel_law(), phi, beta_eff, placement);
}

double sanov_value(const TiltedMeasure1D& m, const Moments& target) {
  return m.barred().vec().dot(target_vec(target)) + log_partition_normalized(m);
}

double sanov_value(const TiltedMeasure2D& m, const Moments& target) {
  return m.barred().vec().dot(target_vec2(target)) + log_partition_normalized(m);
}

}  // namespace landscape::tilted
