#include "landscape/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "landscape/errors.hpp"
#include "landscape/spectra.hpp"

namespace landscape::montecarlo {

namespace {

using activations::Activation;

Eigen::MatrixXd cholesky_factor(const Eigen::MatrixXd& sigma) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw DomainError("covariance matrix is not positive definite");
  return llt.matrixL();
}

Eigen::MatrixXd normal_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  Eigen::MatrixXd z(rows, cols);
  // Column-major fill keeps the stream layout independent of Eigen internals.
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) z(i, j) = n01(rng);
  return z;
}

Eigen::VectorXd uniform_sphere(int d, std::mt19937_64& rng) {
  Eigen::VectorXd w = normal_matrix(d, 1, rng).col(0);
  return w / w.norm();
}

// Orthonormal basis of the tangent space at w (d x (d-1)).
Eigen::MatrixXd tangent_basis(const Eigen::VectorXd& w) {
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(w);
  const Eigen::MatrixXd q = qr.householderQ();
  return q.rightCols(w.size() - 1);
}

struct Tangent {
  double loss;
  Eigen::VectorXd grad;     // tangent coordinates
  Eigen::MatrixXd hess;     // tangent Hessian
  Eigen::MatrixXd basis;
};

Tangent tangent_derivatives(const Loss& loss, const Eigen::VectorXd& w) {
  double v;
  Eigen::VectorXd g;
  Eigen::MatrixXd h;
  loss.derivatives(w, v, g, h);
  Tangent t;
  t.loss = v;
  t.basis = tangent_basis(w);
  const double lambda = w.dot(g);
  t.grad = t.basis.transpose() * g;
  t.hess = t.basis.transpose() * (h - lambda * Eigen::MatrixXd::Identity(w.size(), w.size())) * t.basis;
  return t;
}

std::optional<CriticalPoint> newton_from(const Loss& loss, Eigen::VectorXd w, const NewtonOptions& opt) {
  for (int it = 0; it <= opt.max_iterations; ++it) {
    const Tangent t = tangent_derivatives(loss, w);
    if (!t.grad.allFinite() || !t.hess.allFinite()) return std::nullopt;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.hess);
    if (t.grad.norm() <= opt.grad_tol) {
      CriticalPoint p;
      p.w = w;
      p.loss = t.loss;
      p.grad_norm = t.grad.norm();
      p.index = static_cast<int>((es.eigenvalues().array() < 0.0).count());
      p.min_abs_eigenvalue = es.eigenvalues().cwiseAbs().minCoeff();
      return p;
    }
    if (it == opt.max_iterations) break;
    // Newton step in the eigenbasis; near-zero curvature directions are left out.
    const Eigen::VectorXd b = es.eigenvectors().transpose() * t.grad;
    const double scale = es.eigenvalues().cwiseAbs().maxCoeff();
    Eigen::VectorXd c = Eigen::VectorXd::Zero(b.size());
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double th = es.eigenvalues()(i);
      if (std::abs(th) > 1e-14 * std::max(1.0, scale)) c(i) = -b(i) / th;
    }
    Eigen::VectorXd v = t.basis * (es.eigenvectors() * c);
    const double len = v.norm();
    if (!(len > 0.0)) return std::nullopt;
    if (len > opt.max_step) v *= opt.max_step / len;
    w += v;
    w /= w.norm();
  }
  return std::nullopt;
}

bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i)
    if (a(i) != b(i)) return a(i) < b(i);
  return false;
}

void run_starts(const Loss& loss, int first, int last, std::uint64_t seed, const NewtonOptions& opt, Enumeration& out) {
  for (int i = first; i < last; ++i) {
    std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
    const auto p = newton_from(loss, uniform_sphere(loss.dimension(), rng), opt);
    if (!p) {
      ++out.discarded;
      continue;
    }
    const bool seen = std::any_of(out.points.begin(), out.points.end(),
                                  [&](const CriticalPoint& q) { return (q.w - p->w).norm() < opt.dedup_tol; });
    if (!seen) out.points.push_back(*p);
  }
  out.restarts = last;
  std::sort(out.points.begin(), out.points.end(), [](const CriticalPoint& a, const CriticalPoint& b) {
    if (a.loss != b.loss) return a.loss < b.loss;
    return lexicographic_less(a.w, b.w);
  });
}

int round_count(double x) { return std::max(1, static_cast<int>(std::lround(x))); }

}  // namespace

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer of a combined key
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---- datasets ------------------------------------------------------------------

Dataset sample_dataset(const Eigen::MatrixXd& sigma, int m, std::uint64_t seed) {
  if (m < 1) throw DomainError("dataset needs at least one sample");
  Dataset ds;
  ds.d = static_cast<int>(sigma.rows());
  ds.seed = seed;
  ds.r = cholesky_factor(sigma);
  std::mt19937_64 rng(stream_seed(seed, 0));
  ds.data = ds.r * normal_matrix(ds.d, m, rng);
  return ds;
}

Dataset sample_planted(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& w_star, int m, std::uint64_t seed) {
  if (w_star.size() != sigma.rows() || std::abs(w_star.norm() - 1.0) > 1e-12)
    throw DomainError("teacher must be a unit vector of the data dimension");
  Dataset ds = sample_dataset(sigma, m, seed);
  ds.w_star = w_star;
  return ds;
}

Dataset sample_two_datasets(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma, int m1, int m2,
                            std::uint64_t seed) {
  if (g.rows() != sigma.rows()) throw DomainError("the two covariances must have the same size");
  Dataset ds = sample_dataset(g, m1, seed);
  if (m2 < 1) throw DomainError("dataset needs at least one sample");
  ds.r2 = cholesky_factor(sigma);
  std::mt19937_64 rng(stream_seed(seed, 1));
  ds.data2 = ds.r2 * normal_matrix(ds.d, m2, rng);
  return ds;
}

// ---- losses --------------------------------------------------------------------

Loss::Loss(LossKind kind, const Dataset& data, Activation activation, Activation activation2)
    : kind_(kind), d_(data.d) {
  const double m = static_cast<double>(data.m());
  switch (kind) {
    case LossKind::L: blocks_.push_back({data.data, {}, 1.0 / m, activation}); break;
    case LossKind::L1: {
      if (data.w_star.size() != data.d) throw DomainError("planted loss needs a teacher");
      Eigen::VectorXd t(data.m());
      const Eigen::VectorXd y = data.data.transpose() * data.w_star;
      for (Eigen::Index i = 0; i < y.size(); ++i) t(i) = activation.eval(y(i));
      blocks_.push_back({data.data, t, 1.0 / m, activation});
      break;
    }
    case LossKind::L2:
      if (data.data2.size() == 0) throw DomainError("two-dataset loss needs a second dataset");
      blocks_.push_back({data.data, {}, 1.0 / m, activation});
      blocks_.push_back({data.data2, {}, -1.0 / static_cast<double>(data.data2.cols()), activation2});
      break;
  }
}

bool Loss::even() const {
  if (kind_ == LossKind::L1) return false;
  return std::all_of(blocks_.begin(), blocks_.end(), [](const Block& b) { return b.act.even(); });
}

double Loss::value(const Eigen::VectorXd& w) const {
  double v = 0.0;
  for (const auto& b : blocks_) {
    const Eigen::VectorXd y = b.data.transpose() * w;
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double a = b.act.eval(y(i));
      s += b.targets.size() ? (a - b.targets(i)) * (a - b.targets(i)) : a;
    }
    v += b.weight * s;
  }
  return v;
}

void Loss::derivatives(const Eigen::VectorXd& w, double& value, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
  value = 0.0;
  grad = Eigen::VectorXd::Zero(d_);
  hess = Eigen::MatrixXd::Zero(d_, d_);
  for (const auto& b : blocks_) {
    const Eigen::VectorXd y = b.data.transpose() * w;
    Eigen::VectorXd g1(y.size()), g2(y.size());
    double s = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const auto t = b.act.eval_triple(y(i));
      if (b.targets.size()) {
        const double r = t.value - b.targets(i);
        s += r * r;
        g1(i) = 2.0 * r * t.d1;
        g2(i) = 2.0 * (t.d1 * t.d1 + r * t.d2);
      } else {
        s += t.value;
        g1(i) = t.d1;
        g2(i) = t.d2;
      }
    }
    value += b.weight * s;
    grad += b.weight * (b.data * g1);
    hess += b.weight * (b.data * g2.asDiagonal() * b.data.transpose());
  }
}

// ---- enumeration ---------------------------------------------------------------

int Enumeration::euler_sum() const {
  int s = 0;
  for (const auto& p : points) s += p.index % 2 == 0 ? 1 : -1;
  return s;
}

int default_restarts(int d) { return 200 * d * d; }

Enumeration find_critical_points(const Loss& loss, int restarts, std::uint64_t seed, const NewtonOptions& opt) {
  if (loss.dimension() > 12) throw DomainError("critical point enumeration is limited to d <= 12");
  if (restarts < 1) throw DomainError("need at least one restart");
  Enumeration out;
  run_starts(loss, 0, restarts, seed, opt, out);
  return out;
}

SaturatedEnumeration enumerate_saturated(const Loss& loss, int initial, int max_doublings, std::uint64_t seed,
                                         const NewtonOptions& opt) {
  SaturatedEnumeration s;
  s.result = find_critical_points(loss, initial, seed, opt);
  s.counts.push_back(static_cast<int>(s.result.points.size()));
  int n = initial;
  for (int k = 0; k < max_doublings; ++k) {
    // Starts are indexed, so doubling extends the same stream of starts.
    run_starts(loss, n, 2 * n, seed, opt, s.result);
    n *= 2;
    s.counts.push_back(static_cast<int>(s.result.points.size()));
    if (s.counts.back() == s.counts[s.counts.size() - 2]) {
      s.saturated = true;
      break;
    }
  }
  return s;
}

// ---- empirical complexity --------------------------------------------------------

Eigen::MatrixXd covariance_for(const std::string& descriptor, int d) {
  const auto spec = spectra::parse_spectrum(descriptor.rfind("ar1:", 0) == 0 && std::count(descriptor.begin(), descriptor.end(), ':') == 1
                                                ? descriptor + ":" + std::to_string(d)
                                                : descriptor);
  switch (spec.kind) {
    case spectra::SpectrumKind::identity: return Eigen::MatrixXd::Identity(d, d);
    case spectra::SpectrumKind::ar1: return spectra::ar1_matrix(spec.coefficient, static_cast<std::size_t>(d));
    case spectra::SpectrumKind::file: {
      auto m = spectra::read_matrix_file(spec.path).matrix;
      if (m.rows() != d) throw DomainError("covariance file has dimension " + std::to_string(m.rows()) + ", not " + std::to_string(d));
      return m;
    }
    default: throw DomainError("enumeration needs a covariance matrix: use identity, ar1:c or file:path");
  }
}

EmpiricalComplexity empirical_complexity(const CountConfig& cfg, const std::vector<int>& d_list, int samples_per_d,
                                         const std::vector<double>& bin_edges, int bootstrap) {
  if (bin_edges.size() < 2 || !std::is_sorted(bin_edges.begin(), bin_edges.end()))
    throw DomainError("loss bins need at least two increasing edges");
  if (samples_per_d < 1) throw DomainError("need at least one sample per dimension");
  if (!(cfg.beta > 1.0)) throw DomainError("beta must exceed 1");
  const std::size_t nbins = bin_edges.size() - 1;
  EmpiricalComplexity out;
  for (int d : d_list) {
    if (d < 2 || d > 12) throw DomainError("enumeration dimensions must lie in [2, 12]");
    const Eigen::MatrixXd sigma = covariance_for(cfg.sigma, d);
    std::vector<std::vector<double>> counts(nbins);
    for (int s = 0; s < samples_per_d; ++s) {
      const std::uint64_t seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(d) * 1000003ULL + s);
      Dataset ds;
      switch (cfg.loss) {
        case LossKind::L: ds = sample_dataset(sigma, round_count(cfg.beta * d), seed); break;
        case LossKind::L1: {
          const Eigen::VectorXd w = Eigen::VectorXd::Constant(d, 1.0 / std::sqrt(static_cast<double>(d)));
          ds = sample_planted(sigma, w, round_count(cfg.beta * d), seed);
          break;
        }
        case LossKind::L2: {
          const double a2 = cfg.alpha1 / (cfg.alpha1 - 1.0);
          ds = sample_two_datasets(covariance_for(cfg.g, d), sigma, round_count(cfg.beta * d / cfg.alpha1),
                                   round_count(cfg.beta * d / a2), seed);
          break;
        }
      }
      const Loss loss(cfg.loss, ds, cfg.activation, cfg.activation2);
      const auto en = enumerate_saturated(loss, cfg.restarts_per_d2 * d * d, cfg.max_doublings, seed, cfg.newton);
      SampleCounts sc;
      sc.d = d;
      sc.sample = s;
      sc.seed = seed;
      sc.total = static_cast<int>(en.result.points.size());
      sc.per_bin.assign(nbins, 0);
      sc.euler_sum = en.result.euler_sum();
      sc.euler_ok = sc.euler_sum == 1 + (d % 2 == 1 ? 1 : -1);
      sc.saturated = en.saturated;
      for (const auto& p : en.result.points) {
        sc.losses.push_back(p.loss);
        const auto it = std::upper_bound(bin_edges.begin(), bin_edges.end(), p.loss);
        const auto k = it - bin_edges.begin() - 1;
        if (k >= 0 && static_cast<std::size_t>(k) < nbins) ++sc.per_bin[static_cast<std::size_t>(k)];
      }
      for (std::size_t k = 0; k < nbins; ++k) counts[k].push_back(sc.per_bin[k]);
      out.samples.push_back(std::move(sc));
    }
    std::mt19937_64 rng(stream_seed(cfg.seed, 0xB00757A9ULL + static_cast<std::uint64_t>(d)));
    std::uniform_int_distribution<int> pick(0, samples_per_d - 1);
    for (std::size_t k = 0; k < nbins; ++k) {
      double mean = 0.0;
      for (double c : counts[k]) mean += c;
      mean /= samples_per_d;
      if (!(mean > 0.0)) continue;
      ComplexityRow row;
      row.d = d;
      row.bin_lo = bin_edges[k];
      row.bin_hi = bin_edges[k + 1];
      row.mean_count = mean;
      row.log_count_over_d = std::log(mean) / d;
      row.samples = samples_per_d;
      double s1 = 0.0, s2 = 0.0;
      int used = 0;
      for (int b = 0; b < bootstrap; ++b) {
        double mb = 0.0;
        for (int i = 0; i < samples_per_d; ++i) mb += counts[k][static_cast<std::size_t>(pick(rng))];
        mb /= samples_per_d;
        if (!(mb > 0.0)) continue;
        const double v = std::log(mb) / d;
        s1 += v;
        s2 += v * v;
        ++used;
      }
      row.bootstrap_se = used > 1 ? std::sqrt(std::max(0.0, (s2 - s1 * s1 / used) / (used - 1))) : 0.0;
      out.rows.push_back(row);
    }
  }
  return out;
}

std::optional<ComplexityRow> modal_bin(const EmpiricalComplexity& e, int d) {
  std::optional<ComplexityRow> best;
  for (const auto& r : e.rows)
    if (r.d == d && (!best || r.mean_count > best->mean_count)) best = r;
  return best;
}

// ---- Hessian log-determinants ------------------------------------------------------

namespace {

Eigen::VectorXd kernel_draws(const Activation& act, double rho, const std::optional<tilted::TiltedMeasure1D>& measure,
                             int m, std::mt19937_64& rng) {
  Eigen::VectorXd k(m);
  if (measure) {
    const auto law = measure->kernel_law();
    std::discrete_distribution<std::size_t> pick(law.probs.begin(), law.probs.end());
    for (int i = 0; i < m; ++i) k(i) = law.values[pick(rng)];
  } else {
    std::normal_distribution<double> n01;
    const double s = std::sqrt(rho);
    for (int i = 0; i < m; ++i) k(i) = act.deriv2(s * n01(rng));
  }
  return k;
}

Eigen::MatrixXd weighted_gram(const Eigen::MatrixXd& r, const Eigen::VectorXd& k, int d, std::mt19937_64& rng) {
  Eigen::MatrixXd x = normal_matrix(d, k.size(), rng);
  if (r.size()) x = r * x;
  return x * k.asDiagonal() * x.transpose() / static_cast<double>(k.size());
}

}  // namespace

Eigen::MatrixXd sample_hessian(const HessianConfig& cfg, std::uint64_t seed) {
  if (cfg.d < 1) throw DomainError("Hessian dimension must be positive");
  if (!(cfg.beta > 1.0)) throw DomainError("beta must exceed 1");
  std::mt19937_64 rng(seed);
  const Eigen::MatrixXd r = cfg.sigma.size() ? cholesky_factor(cfg.sigma) : Eigen::MatrixXd();
  if (r.size() && r.rows() != cfg.d) throw DomainError("covariance size differs from d");
  if (!cfg.two_datasets) {
    const int m = round_count(cfg.beta * cfg.d);
    return weighted_gram(r, kernel_draws(cfg.activation, cfg.rho, cfg.measure, m, rng), cfg.d, rng);
  }
  if (!(cfg.alpha1 > 1.0)) throw DomainError("alpha1 must exceed 1");
  const double a2 = cfg.alpha1 / (cfg.alpha1 - 1.0);
  const int m1 = round_count(cfg.beta * cfg.d / cfg.alpha1), m2 = round_count(cfg.beta * cfg.d / a2);
  const Eigen::MatrixXd r2 = cfg.sigma2.size() ? cholesky_factor(cfg.sigma2) : Eigen::MatrixXd();
  Eigen::MatrixXd h = weighted_gram(r, kernel_draws(cfg.activation, cfg.rho, cfg.measure, m1, rng), cfg.d, rng);
  h -= weighted_gram(r2, kernel_draws(cfg.activation2, cfg.rho2, cfg.measure2, m2, rng), cfg.d, rng);
  return h;
}

std::vector<LogDetEstimate> hessian_logdet_mc(const HessianConfig& cfg, const std::vector<double>& kappas, int draws) {
  if (draws < 1) throw DomainError("need at least one draw");
  std::vector<LogDetEstimate> out(kappas.size());
  std::vector<double> s1(kappas.size(), 0.0), s2(kappas.size(), 0.0);
  for (std::size_t j = 0; j < kappas.size(); ++j) out[j].kappa = kappas[j];
  for (int t = 0; t < draws; ++t) {
    const Eigen::MatrixXd h = sample_hessian(cfg, stream_seed(cfg.seed, static_cast<std::uint64_t>(t)));
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues();
    for (std::size_t j = 0; j < kappas.size(); ++j) {
      double s = 0.0;
      bool singular = false;
      for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const double gap = std::abs(ev(i) - kappas[j]);
        if (gap == 0.0) {
          singular = true;
          break;
        }
        s += std::log(gap);
      }
      if (singular) {
        ++out[j].rejected;
        continue;
      }
      s /= cfg.d;
      s1[j] += s;
      s2[j] += s * s;
      ++out[j].draws;
    }
  }
  for (std::size_t j = 0; j < kappas.size(); ++j) {
    const int n = out[j].draws;
    if (n == 0) throw EvaluationError("every Hessian draw was singular at the requested shift");
    out[j].mean = s1[j] / n;
    out[j].stderr_ = n > 1 ? std::sqrt(std::max(0.0, (s2[j] - s1[j] * s1[j] / n) / (n - 1)) / n) : 0.0;
  }
  return out;
}

LogDetEstimate hessian_logdet_mc(const HessianConfig& cfg, double kappa, int draws) {
  return hessian_logdet_mc(cfg, std::vector<double>{kappa}, draws).front();
}

// ---- sphere overlaps -----------------------------------------------------------------

std::vector<Overlap> sample_sphere_overlaps(const Eigen::MatrixXd& sigma, int n_samples, std::uint64_t seed,
                                            const Eigen::VectorXd* w_star) {
  const int d = static_cast<int>(sigma.rows());
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) throw DomainError("covariance matrix is not positive definite");
  const Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(d, d));
  std::vector<Overlap> out;
  out.reserve(static_cast<std::size_t>(n_samples));
  for (int i = 0; i < n_samples; ++i) {
    std::mt19937_64 rng(stream_seed(seed, static_cast<std::uint64_t>(i)));
    const Eigen::VectorXd w = uniform_sphere(d, rng);
    Overlap o{w.dot(sigma * w), w.dot(inv * w)};
    if (w_star) {
      const double c = w.dot(sigma * *w_star);
      o.p = c * c / o.rho;
      o.r = w.dot(*w_star);
    }
    out.push_back(o);
  }
  return out;
}

}  // namespace landscape::montecarlo
