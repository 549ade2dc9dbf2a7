#include "landscape/geometry.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "landscape/errors.hpp"

namespace landscape::geometry {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::VectorXd project(Eigen::VectorXd x, const std::vector<bool>& upper_zero) {
  for (std::size_t k = 0; k < upper_zero.size(); ++k)
    if (upper_zero[k] && x(static_cast<Eigen::Index>(k)) > 0.0) x(static_cast<Eigen::Index>(k)) = 0.0;
  return x;
}

}  // namespace

MaximizeResult maximize_concave(const std::function<std::optional<ConcaveEval>(const Eigen::VectorXd&)>& eval,
                                Eigen::VectorXd x0, const std::vector<bool>& upper_zero,
                                const MaximizeOptions& options) {
  Eigen::VectorXd x = project(std::move(x0), upper_zero);
  auto ev = eval(x);
  if (!ev) throw EvaluationError("maximize_concave: starting point outside the domain");
  const auto n = x.size();
  MaximizeResult out{x, ev->value, ev->grad, false, false, 0};
  double mu = 1e-12;
  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it;
    // Free coordinates: not pinned at the bound with an outward gradient.
    std::vector<Eigen::Index> free;
    Eigen::VectorXd pg = ev->grad;
    for (Eigen::Index k = 0; k < n; ++k) {
      const bool pinned = static_cast<std::size_t>(k) < upper_zero.size() && upper_zero[static_cast<std::size_t>(k)] &&
                          x(k) >= 0.0 && ev->grad(k) > 0.0;
      if (pinned)
        pg(k) = 0.0;
      else
        free.push_back(k);
    }
    if (pg.cwiseAbs().maxCoeff() < options.grad_tol) {
      out.converged = true;
      break;
    }
    const auto nf = static_cast<Eigen::Index>(free.size());
    Eigen::MatrixXd h(nf, nf);
    Eigen::VectorXd g(nf);
    for (Eigen::Index a = 0; a < nf; ++a) {
      g(a) = ev->grad(free[static_cast<std::size_t>(a)]);
      for (Eigen::Index b = 0; b < nf; ++b)
        h(a, b) = -ev->hess(free[static_cast<std::size_t>(a)], free[static_cast<std::size_t>(b)]);
    }
    const double hscale = std::max(1e-300, h.cwiseAbs().maxCoeff());
    bool accepted = false;
    for (int damp = 0; damp < 8 && !accepted; ++damp) {
      Eigen::MatrixXd hd = h + (mu * hscale) * Eigen::MatrixXd::Identity(nf, nf);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(hd);
      Eigen::VectorXd s = ldlt.solve(g);
      if (ldlt.info() != Eigen::Success || !s.allFinite() || s.dot(g) <= 0.0) s = g / hscale;
      Eigen::VectorXd step = Eigen::VectorXd::Zero(n);
      for (Eigen::Index a = 0; a < nf; ++a) step(free[static_cast<std::size_t>(a)]) = s(a);
      double t = 1.0;
      for (int hlv = 0; hlv < 60; ++hlv, t *= 0.5) {
        Eigen::VectorXd xn = project(x + t * step, upper_zero);
        auto en = eval(xn);
        if (!en) continue;
        if (en->value >= ev->value - 1e-14 * (1.0 + std::abs(ev->value))) {
          const bool progress = en->value > ev->value || en->grad.norm() < ev->grad.norm();
          if (!progress) continue;
          x = xn;
          ev = std::move(en);
          accepted = true;
          break;
        }
      }
      if (!accepted) mu *= 1e3;
    }
    mu = std::max(1e-12, mu * 1e-2);
    out.x = x;
    out.value = ev->value;
    out.grad = ev->grad;
    if (x.norm() > options.runaway) {
      out.runaway = true;
      break;
    }
    if (!accepted) break;
  }
  out.x = x;
  out.value = ev->value;
  out.grad = ev->grad;
  if (!out.converged && !out.runaway) {
    Eigen::VectorXd pg = ev->grad;
    for (Eigen::Index k = 0; k < n; ++k)
      if (static_cast<std::size_t>(k) < upper_zero.size() && upper_zero[static_cast<std::size_t>(k)] && x(k) >= 0.0 &&
          pg(k) > 0.0)
        pg(k) = 0.0;
    out.converged = pg.cwiseAbs().maxCoeff() < options.grad_tol;
  }
  return out;
}

namespace {

RateResult finish(const MaximizeResult& mr, Eigen::VectorXd envelope) {
  RateResult r;
  r.barred = mr.x;
  r.iterations = mr.iterations;
  if (mr.runaway) {
    r.value = kInf;
    r.outside = true;
    r.diagnostic = "multipliers diverge: parameters are outside the image of the sphere";
    r.envelope = Eigen::VectorXd::Constant(envelope.size(), std::numeric_limits<double>::quiet_NaN());
    return r;
  }
  r.value = std::max(0.0, mr.value);
  r.converged = mr.converged;
  r.envelope = std::move(envelope);
  if (!mr.converged) {
    r.boundary = true;
    r.diagnostic = "no ascent direction left before the gradient tolerance; treating as a boundary point";
  }
  return r;
}

// Dense (1/2d) tr log[(1 - tb.a) I + sum tb_k M_k].
std::optional<ConcaveEval> dense_inner(const Eigen::VectorXd& t, const Eigen::VectorXd& a,
                                       const std::vector<const Eigen::MatrixXd*>& mats, double* trace_inv = nullptr,
                                       std::vector<double>* trace_inv_mk = nullptr) {
  const auto d = mats.front()->rows();
  const auto k = static_cast<Eigen::Index>(mats.size());
  Eigen::MatrixXd m = (1.0 - t.dot(a)) * Eigen::MatrixXd::Identity(d, d);
  for (Eigen::Index i = 0; i < k; ++i) m.noalias() += t(i) * *mats[static_cast<std::size_t>(i)];
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success || !(es.eigenvalues().minCoeff() > 0.0)) return std::nullopt;
  const double dd = static_cast<double>(d);
  ConcaveEval out;
  out.value = es.eigenvalues().array().log().sum() / (2.0 * dd);
  const Eigen::MatrixXd minv =
      es.eigenvectors() * es.eigenvalues().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  std::vector<Eigen::MatrixXd> c(static_cast<std::size_t>(k));
  out.grad.resize(k);
  out.hess.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    c[static_cast<std::size_t>(i)] = minv * *mats[static_cast<std::size_t>(i)] - a(i) * minv;
    out.grad(i) = c[static_cast<std::size_t>(i)].trace() / (2.0 * dd);
  }
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i; j < k; ++j) {
      const double tr = (c[static_cast<std::size_t>(i)].array() * c[static_cast<std::size_t>(j)].transpose().array()).sum();
      out.hess(i, j) = out.hess(j, i) = -tr / (2.0 * dd);
    }
  if (trace_inv) *trace_inv = minv.trace();
  if (trace_inv_mk) {
    trace_inv_mk->clear();
    for (Eigen::Index i = 0; i < k; ++i)
      trace_inv_mk->push_back((minv.array() * mats[static_cast<std::size_t>(i)]->array()).sum());
  }
  return out;
}

}  // namespace

// ---- model L --------------------------------------------------------------

std::optional<ConcaveEval> inner_I(const Eigen::VectorXd& t, const GeomParamsL& g, const spectra::SpectralModel& model) {
  ConcaveEval out{0.0, Eigen::Vector2d::Zero(), Eigen::Matrix2d::Zero()};
  for (const auto& pt : model.points()) {
    const double b0 = pt.eigenvalue - g.rho;
    const double b1 = 1.0 / pt.eigenvalue - g.q;
    const double arg = 1.0 + t(0) * b0 + t(1) * b1;
    if (!(arg > 0.0)) return std::nullopt;
    const double w = 0.5 * pt.weight;
    out.value += w * std::log(arg);
    out.grad(0) += w * b0 / arg;
    out.grad(1) += w * b1 / arg;
    out.hess(0, 0) -= w * b0 * b0 / (arg * arg);
    out.hess(0, 1) -= w * b0 * b1 / (arg * arg);
    out.hess(1, 1) -= w * b1 * b1 / (arg * arg);
  }
  out.hess(1, 0) = out.hess(0, 1);
  return out;
}

GeomParamsL typical_L(const spectra::SpectralModel& model) {
  return {model.expect([](double l) { return l; }), model.expect([](double l) { return 1.0 / l; })};
}

RateResult rate_I(const GeomParamsL& g, const spectra::SpectralModel& model, const MaximizeOptions& options) {
  const auto domain = spectra::feasible_domain(model);
  if (!domain.contains(g.rho, g.q, 1e-13)) {
    RateResult r;
    r.value = kInf;
    r.outside = true;
    r.barred = Eigen::Vector2d::Zero();
    r.envelope = Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
    r.diagnostic = "(rho, q) lies outside the feasible domain";
    return r;
  }
  auto mr = maximize_concave([&](const Eigen::VectorXd& t) { return inner_I(t, g, model); }, Eigen::Vector2d::Zero(),
                             {}, options);
  // E[1/A] = 1 at the maximizer, so the envelope gradient is -barred/2.
  double inv_mean = 0.0;
  for (const auto& pt : model.points())
    inv_mean += pt.weight / (1.0 + mr.x(0) * (pt.eigenvalue - g.rho) + mr.x(1) * (1.0 / pt.eigenvalue - g.q));
  auto r = finish(mr, -0.5 * inv_mean * mr.x);
  if (r.boundary && domain.slack(g.rho, g.q) < 1e-9) r.diagnostic = "point on the boundary of the feasible domain";
  return r;
}

double f_sp(const GeomParamsL& g, double kappa, double f, const spectra::SpectralModel& model, double beta,
            RateResult* rate) {
  if (!(f > 0.0)) throw DomainError("f_sp: f must be positive");
  if (!(g.rho > 0.0)) throw DomainError("f_sp: rho must be positive");
  const auto r = rate_I(g, model);
  if (rate) *rate = r;
  const double elog = model.expect([](double l) { return std::log(l); });
  return 0.5 * std::log(beta * std::numbers::e) - 0.5 * std::log(f) - 0.5 * elog +
         0.5 * beta * (kappa * kappa / (f * g.rho)) * (1.0 - g.rho * g.q) - r.value;
}

// ---- model L1 -------------------------------------------------------------

PlantedGeometry::PlantedGeometry(Eigen::MatrixXd sigma, Eigen::VectorXd w_star)
    : sigma_(std::move(sigma)), w_star_(std::move(w_star)) {
  if (sigma_.rows() != sigma_.cols() || sigma_.rows() != w_star_.size())
    throw DomainError("planted geometry: Sigma must be square and match w_*");
  const double n = w_star_.norm();
  if (std::abs(n - 1.0) > 1e-10) throw DomainError("planted geometry: w_* must be a unit vector");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma_);
  eig_ = es.eigenvalues();
  if (!(eig_.minCoeff() > 0.0)) throw DomainError("planted geometry: Sigma must be positive definite");
  sigma_inv_ = es.eigenvectors() * eig_.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  sigma_w_ = sigma_ * w_star_;
  rho_star_ = w_star_.dot(sigma_w_);
  logdet_d_ = eig_.array().log().mean();
}

GeomParamsL1 typical_L1(const PlantedGeometry& geo) {
  const double d = static_cast<double>(geo.dimension());
  const double rho = geo.sigma().trace() / d;
  return {rho, geo.sigma_inverse().trace() / d, geo.sigma_w_star().squaredNorm() / (d * rho), 1.0 / std::sqrt(d)};
}

namespace {

struct L1Mats {
  Eigen::MatrixXd mp;
  Eigen::MatrixXd mr;
};

L1Mats l1_mats(const GeomParamsL1& g, const PlantedGeometry& geo) {
  return {geo.sigma_w_star() * geo.sigma_w_star().transpose() / g.rho, geo.w_star() * geo.w_star().transpose()};
}

Eigen::Vector4d l1_params(const GeomParamsL1& g) { return {g.rho, g.q, g.p, g.r * g.r}; }

}  // namespace

std::optional<ConcaveEval> inner_I1(const Eigen::VectorXd& barred, const GeomParamsL1& g, const PlantedGeometry& geo) {
  const auto m = l1_mats(g, geo);
  return dense_inner(barred, l1_params(g), {&geo.sigma(), &geo.sigma_inverse(), &m.mp, &m.mr});
}

RateResult rate_I1(const GeomParamsL1& g, const PlantedGeometry& geo, const MaximizeOptions& options) {
  if (!(g.rho > 0.0)) throw DomainError("rate_I1: rho must be positive");
  const auto m = l1_mats(g, geo);
  const Eigen::Vector4d a = l1_params(g);
  const std::vector<const Eigen::MatrixXd*> mats{&geo.sigma(), &geo.sigma_inverse(), &m.mp, &m.mr};
  auto mr = maximize_concave([&](const Eigen::VectorXd& t) { return dense_inner(t, a, mats); }, Eigen::Vector4d::Zero(),
                             {false, false, true, true}, options);
  Eigen::Vector4d env = Eigen::Vector4d::Zero();
  if (!mr.runaway) {
    double tr_inv = 0.0;
    std::vector<double> tr_mk;
    dense_inner(mr.x, a, mats, &tr_inv, &tr_mk);
    const double d2 = 2.0 * static_cast<double>(geo.dimension());
    const double c = tr_inv / d2;
    // M_p carries 1/rho, so rho also enters through pb tr(M^-1 dM_p/drho).
    env(0) = -mr.x(0) * c - mr.x(2) * tr_mk[2] / (g.rho * d2);
    env(1) = -mr.x(1) * c;
    env(2) = -mr.x(2) * c;
    env(3) = -mr.x(3) * c * 2.0 * g.r;
  }
  return finish(mr, env);
}

double f_sp1(const GeomParamsL1& g, double kappa, double kappa2, double f, const PlantedGeometry& geo, double beta,
             RateResult* rate) {
  if (!(f > 0.0)) throw DomainError("f_sp1: f must be positive");
  const double gap = geo.rho_star() - g.p;
  if (!(gap > 1e-10 * geo.rho_star())) throw EvaluationError("f_sp1: p reaches rho_star, the mixed term is singular");
  const auto r = rate_I1(g, geo);
  if (rate) *rate = r;
  const double quad = (1.0 - g.q * g.rho) * kappa * kappa + kappa2 * kappa2 -
                      2.0 * (g.r * std::sqrt(g.rho) - std::sqrt(g.p)) / std::sqrt(gap) * kappa * kappa2;
  return 0.5 * std::log(beta * std::numbers::e) - 0.5 * std::log(f) - 0.5 * geo.logdet_over_d() +
         0.5 * beta * quad / (f * g.rho) - r.value;
}

// ---- model L2 -------------------------------------------------------------

DiscriminatingMatrices discriminating_matrices(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma, double alpha1,
                                               double alpha2, double f1, double f2, double kappa1, double kappa2,
                                               double rho1, double rho2) {
  if (g.rows() != sigma.rows() || g.rows() != g.cols() || sigma.rows() != sigma.cols())
    throw DomainError("discriminating geometry: G and Sigma must be square of equal size");
  if (!(rho1 > 0.0) || !(rho2 > 0.0)) throw DomainError("discriminating geometry: rho must be positive");
  DiscriminatingMatrices m;
  m.g = g;
  m.sigma = sigma;
  m.s = alpha1 * f1 * g + alpha2 * f2 * sigma;
  m.d = (kappa1 / rho1) * g - (kappa2 / rho2) * sigma;
  Eigen::LLT<Eigen::MatrixXd> llt(m.s);
  if (llt.info() != Eigen::Success) throw DomainError("discriminating geometry: S is not positive definite");
  const auto n = g.rows();
  m.s_inv = llt.solve(Eigen::MatrixXd::Identity(n, n));
  m.s_inv = 0.5 * (m.s_inv + m.s_inv.transpose()).eval();
  m.dsd = m.d * m.s_inv * m.d;
  m.dsd = 0.5 * (m.dsd + m.dsd.transpose()).eval();
  const Eigen::MatrixXd sd = m.s_inv * m.d;
  m.sd_sym = 0.5 * (sd + sd.transpose());
  double ld = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) ld += 2.0 * std::log(llt.matrixLLT()(i, i));
  m.logdet_s_over_d = ld / static_cast<double>(n);
  return m;
}

GeomParamsL2 typical_L2(const DiscriminatingMatrices& m) {
  const double d = static_cast<double>(m.g.rows());
  return {m.g.trace() / d, m.sigma.trace() / d, m.dsd.trace() / d, m.s_inv.trace() / d, m.sd_sym.trace() / d};
}

namespace {
Eigen::VectorXd l2_params(const GeomParamsL2& g) {
  Eigen::VectorXd a(5);
  a << g.rho1, g.rho2, g.q1, g.q2, g.q3;
  return a;
}
}  // namespace

std::optional<ConcaveEval> inner_I2(const Eigen::VectorXd& barred, const GeomParamsL2& g,
                                    const DiscriminatingMatrices& m) {
  return dense_inner(barred, l2_params(g), {&m.g, &m.sigma, &m.dsd, &m.s_inv, &m.sd_sym});
}

RateResult rate_I2(const GeomParamsL2& g, const DiscriminatingMatrices& m, const MaximizeOptions& options) {
  const Eigen::VectorXd a = l2_params(g);
  const std::vector<const Eigen::MatrixXd*> mats{&m.g, &m.sigma, &m.dsd, &m.s_inv, &m.sd_sym};
  auto mr = maximize_concave([&](const Eigen::VectorXd& t) { return dense_inner(t, a, mats); },
                             Eigen::VectorXd::Zero(5), {}, options);
  Eigen::VectorXd env = Eigen::VectorXd::Zero(5);
  if (!mr.runaway) {
    double tr_inv = 0.0;
    dense_inner(mr.x, a, mats, &tr_inv);
    env = -mr.x * tr_inv / (2.0 * static_cast<double>(m.g.rows()));
  }
  return finish(mr, env);
}

double f_sp2(const GeomParamsL2& g, double kappa1, double kappa2, const DiscriminatingMatrices& m, double beta,
             RateResult* rate) {
  const auto r = rate_I2(g, m);
  if (rate) *rate = r;
  const double dk = kappa1 - kappa2;
  return 0.5 * std::log(beta * std::numbers::e) - 0.5 * m.logdet_s_over_d - 0.5 * beta * g.q1 -
         0.5 * beta * g.q2 * dk * dk + beta * g.q3 * dk - r.value;
}

}  // namespace landscape::geometry
