#include "landscape/spectra.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <sstream>

#include "landscape/quadrature.hpp"

namespace landscape::spectra {

SpectralModel::SpectralModel(std::vector<SpectralPoint> atoms, std::vector<SpectralPoint> nodes, std::string label)
    : atoms_(std::move(atoms)), nodes_(std::move(nodes)), label_(std::move(label)) {
  points_.reserve(atoms_.size() + nodes_.size());
  points_.insert(points_.end(), atoms_.begin(), atoms_.end());
  points_.insert(points_.end(), nodes_.begin(), nodes_.end());
  if (points_.empty()) throw DomainError("spectral model " + label_ + " has no support");
  double total = 0.0;
  min_ = points_.front().eigenvalue;
  max_ = min_;
  for (const auto& p : points_) {
    if (!(p.eigenvalue > 0.0) || !std::isfinite(p.eigenvalue))
      throw DomainError("spectral model " + label_ + ": eigenvalue must be positive and finite, got " +
                        std::to_string(p.eigenvalue));
    if (p.weight < 0.0) throw DomainError("spectral model " + label_ + ": negative weight");
    total += p.weight;
    min_ = std::min(min_, p.eigenvalue);
    max_ = std::max(max_, p.eigenvalue);
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw DomainError("spectral model " + label_ + ": total mass " + std::to_string(total) + " != 1");
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(item);
  return out;
}

double to_double(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DomainError("cannot parse " + what + " from '" + s + "'");
  }
}

std::vector<SpectralPoint> normalized(std::vector<SpectralPoint> points) {
  double total = 0.0;
  for (const auto& p : points) total += p.weight;
  for (auto& p : points) p.weight /= total;
  return points;
}

SpectralModel with_outliers(std::vector<SpectralPoint> atoms, std::vector<SpectralPoint> nodes, std::string label,
                            const SpectrumSpec& spec) {
  if (spec.outliers.empty()) return SpectralModel(std::move(atoms), std::move(nodes), std::move(label));
  const double mass = 1.0 / static_cast<double>(spec.d_hint);
  const double bulk = 1.0 - mass * static_cast<double>(spec.outliers.size());
  if (bulk <= 0.0) throw DomainError("outlier mass exceeds one; increase d_hint");
  for (auto& p : atoms) p.weight *= bulk;
  for (auto& p : nodes) p.weight *= bulk;
  for (double v : spec.outliers) atoms.push_back({v, mass});
  // Renormalize away rounding so the mass invariant holds to 1e-12.
  double total = 0.0;
  for (const auto& p : atoms) total += p.weight;
  for (const auto& p : nodes) total += p.weight;
  for (auto& p : atoms) p.weight /= total;
  for (auto& p : nodes) p.weight /= total;
  return SpectralModel(std::move(atoms), std::move(nodes), label + "+outliers");
}

}  // namespace

SpectrumSpec parse_spectrum(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.empty()) throw DomainError("empty spectrum descriptor");
  SpectrumSpec spec;
  const std::string& head = parts[0];
  if (head == "identity") {
    spec.kind = SpectrumKind::identity;
  } else if (head == "atoms") {
    if (parts.size() != 2) throw DomainError("atoms descriptor: expected atoms:v/m,v/m,...");
    spec.kind = SpectrumKind::atoms;
    for (const auto& item : split(parts[1], ',')) {
      const auto vm = split(item, '/');
      if (vm.empty() || vm.size() > 2) throw DomainError("bad atom '" + item + "'");
      spec.atoms.push_back({to_double(vm[0], "atom eigenvalue"), vm.size() == 2 ? to_double(vm[1], "atom mass") : -1.0});
    }
  } else if (head == "marchenko_pastur" || head == "mp") {
    if (parts.size() < 2 || parts.size() > 3) throw DomainError("marchenko_pastur descriptor: mp:ratio[:nodes]");
    spec.kind = SpectrumKind::marchenko_pastur;
    spec.ratio = to_double(parts[1], "ratio");
    if (parts.size() == 3) spec.nodes = static_cast<std::size_t>(to_double(parts[2], "node count"));
  } else if (head == "ar1") {
    if (parts.size() != 3) throw DomainError("ar1 descriptor: ar1:coefficient:dimension");
    spec.kind = SpectrumKind::ar1;
    spec.coefficient = to_double(parts[1], "ar1 coefficient");
    spec.dimension = static_cast<std::size_t>(to_double(parts[2], "ar1 dimension"));
  } else if (head == "file") {
    if (parts.size() < 2) throw DomainError("file descriptor: file:path");
    spec.kind = SpectrumKind::file;
    spec.path = text.substr(5);
  } else {
    throw DomainError("unknown spectrum '" + head + "'");
  }
  return spec;
}

std::pair<double, double> marchenko_pastur_edges(double ratio) {
  const double c = 1.0 / ratio;
  return {(1.0 - std::sqrt(c)) * (1.0 - std::sqrt(c)), (1.0 + std::sqrt(c)) * (1.0 + std::sqrt(c))};
}

Eigen::MatrixXd ar1_matrix(double coefficient, std::size_t dimension) {
  const auto d = static_cast<Eigen::Index>(dimension);
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = std::pow(coefficient, static_cast<double>(std::abs(i - j)));
  return m;
}

SpectralModel from_matrix(const Eigen::MatrixXd& matrix, std::string label) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(matrix, Eigen::EigenvaluesOnly);
  const auto d = static_cast<std::size_t>(matrix.rows());
  std::vector<SpectralPoint> atoms;
  atoms.reserve(d);
  for (std::size_t i = 0; i < d; ++i)
    atoms.push_back({solver.eigenvalues()(static_cast<Eigen::Index>(i)), 1.0 / static_cast<double>(d)});
  return SpectralModel(normalized(std::move(atoms)), {}, std::move(label));
}

SpectralModel from_named(const SpectrumSpec& spec) {
  switch (spec.kind) {
    case SpectrumKind::identity:
      return with_outliers({{1.0, 1.0}}, {}, "identity", spec);
    case SpectrumKind::atoms: {
      if (spec.atoms.empty()) throw DomainError("atoms descriptor with no atoms");
      std::vector<SpectralPoint> atoms = spec.atoms;
      const bool equal = std::all_of(atoms.begin(), atoms.end(), [](const auto& p) { return p.weight <= 0.0; });
      if (equal)
        for (auto& p : atoms) p.weight = 1.0 / static_cast<double>(atoms.size());
      double total = 0.0;
      for (const auto& p : atoms) total += p.weight;
      if (std::abs(total - 1.0) > 1e-9) throw DomainError("atom masses must sum to one");
      return with_outliers(normalized(std::move(atoms)), {}, "atoms", spec);
    }
    case SpectrumKind::marchenko_pastur: {
      if (!(spec.ratio > 1.0)) throw DomainError("marchenko_pastur requires ratio > 1 (m/d -> beta > 1)");
      // Substituting lambda = mid + half cos(t) turns the square-root edges
      // into a smooth integrand, so Gauss–Legendre in t converges spectrally.
      const auto [lo, hi] = marchenko_pastur_edges(spec.ratio);
      const double c = 1.0 / spec.ratio;
      const double mid = 0.5 * (lo + hi);
      const double half = 0.5 * (hi - lo);
      const auto& gl = quadrature::gauss_legendre(spec.nodes);
      std::vector<SpectralPoint> nodes;
      nodes.reserve(gl.size());
      for (std::size_t i = 0; i < gl.size(); ++i) {
        const double t = 0.5 * std::numbers::pi * (gl.nodes[i] + 1.0);
        const double lambda = mid + half * std::cos(t);
        const double s = std::sin(t);
        const double w = 0.5 * std::numbers::pi * gl.weights[i] * half * half * s * s / (2.0 * std::numbers::pi * c * lambda);
        nodes.push_back({lambda, w});
      }
      return with_outliers({}, normalized(std::move(nodes)), "marchenko_pastur", spec);
    }
    case SpectrumKind::ar1: {
      if (spec.dimension == 0) throw DomainError("ar1 dimension must be positive");
      if (!(std::abs(spec.coefficient) < 1.0)) throw DomainError("ar1 coefficient must lie in (-1, 1)");
      auto m = from_matrix(ar1_matrix(spec.coefficient, spec.dimension), "ar1");
      return with_outliers(m.atoms(), {}, "ar1", spec);
    }
    case SpectrumKind::file: {
      const auto values = read_eigenvalue_file(spec.path);
      if (values.empty()) throw DomainError("eigenvalue file " + spec.path + " is empty");
      std::vector<SpectralPoint> atoms;
      for (double v : values) {
        if (!(v > 0.0)) throw DomainError("eigenvalue file " + spec.path + ": nonpositive eigenvalue " + std::to_string(v));
        atoms.push_back({v, 1.0 / static_cast<double>(values.size())});
      }
      return with_outliers(normalized(std::move(atoms)), {}, "file", spec);
    }
  }
  throw DomainError("unhandled spectrum kind");
}

GeometryDomain::GeometryDomain(std::vector<double> eigenvalues) {
  if (eigenvalues.empty()) throw DomainError("geometry domain needs at least one eigenvalue");
  std::sort(eigenvalues.begin(), eigenvalues.end());
  const double scale = eigenvalues.back();
  for (double v : eigenvalues) {
    if (!vertices_.empty() && v - vertices_.back().first <= 1e-14 * scale) continue;
    vertices_.emplace_back(v, 1.0 / v);
  }
}

std::pair<double, double> GeometryDomain::q_range(double rho) const {
  const auto& first = vertices_.front();
  const auto& last = vertices_.back();
  if (degenerate()) return {first.second, first.second};
  const double t = (rho - first.first) / (last.first - first.first);
  const double upper = first.second + t * (last.second - first.second);
  auto it = std::lower_bound(vertices_.begin(), vertices_.end(), rho,
                             [](const auto& v, double r) { return v.first < r; });
  double lower;
  if (it == vertices_.begin()) {
    lower = it->second;
  } else if (it == vertices_.end()) {
    lower = last.second;
  } else {
    const auto& a = *(it - 1);
    const auto& b = *it;
    lower = a.second + (rho - a.first) / (b.first - a.first) * (b.second - a.second);
  }
  return {lower, upper};
}

double GeometryDomain::slack(double rho, double q) const {
  const auto& first = vertices_.front();
  const auto& last = vertices_.back();
  if (degenerate()) return -std::hypot(rho - first.first, q - first.second);
  const double width = std::min(rho - first.first, last.first - rho);
  const auto [lo, hi] = q_range(std::clamp(rho, first.first, last.first));
  return std::min({width, q - lo, hi - q});
}

bool GeometryDomain::contains(double rho, double q, double tol) const {
  const double scale = vertices_.front().second + vertices_.back().first;
  return slack(rho, q) >= -tol * scale;
}

std::pair<double, double> GeometryDomain::centroid() const {
  double r = 0.0;
  double q = 0.0;
  for (const auto& v : vertices_) {
    r += v.first;
    q += v.second;
  }
  const double n = static_cast<double>(vertices_.size());
  return {r / n, q / n};
}

GeometryDomain feasible_domain(const SpectralModel& model) {
  std::vector<double> ev;
  ev.reserve(model.points().size());
  for (const auto& p : model.points()) ev.push_back(p.eigenvalue);
  return GeometryDomain(std::move(ev));
}

JointSpectralModel::JointSpectralModel(std::vector<Pair> pairs, std::size_t dimension_hint)
    : pairs_(std::move(pairs)), dimension_hint_(dimension_hint) {
  double total = 0.0;
  for (const auto& p : pairs_) {
    if (!(p.lambda_g > 0.0) || !(p.lambda_sigma > 0.0)) throw DomainError("joint spectrum: eigenvalues must be positive");
    total += p.weight;
  }
  if (pairs_.empty() || std::abs(total - 1.0) > 1e-12) throw DomainError("joint spectrum: weights must sum to one");
}

JointSpectralModel JointSpectralModel::finite_dimensional(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma) {
  if (g.rows() != g.cols() || sigma.rows() != sigma.cols() || g.rows() != sigma.rows())
    throw DomainError("joint spectrum: matrices must be square and of equal size");
  JointSpectralModel out;
  out.g_ = g;
  out.sigma_ = sigma;
  out.dimension_hint_ = static_cast<std::size_t>(g.rows());
  return out;
}

JointSpectralModel JointSpectralModel::from_matrices(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma,
                                                    double commute_tol) {
  auto finite = finite_dimensional(g, sigma);
  const double comm = (g * sigma - sigma * g).norm();
  if (comm > commute_tol * g.norm() * sigma.norm()) return finite;
  // A generic combination of commuting symmetric matrices shares their eigenbasis.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(g + std::numbers::sqrt2 * sigma);
  const Eigen::MatrixXd& v = solver.eigenvectors();
  const Eigen::MatrixXd gd = v.transpose() * g * v;
  const Eigen::MatrixXd sd = v.transpose() * sigma * v;
  const double off = (gd - Eigen::MatrixXd(gd.diagonal().asDiagonal())).norm() +
                     (sd - Eigen::MatrixXd(sd.diagonal().asDiagonal())).norm();
  if (off > 1e-8 * (g.norm() + sigma.norm())) return finite;
  const auto d = static_cast<std::size_t>(g.rows());
  std::vector<Pair> pairs;
  for (Eigen::Index i = 0; i < g.rows(); ++i) pairs.push_back({gd(i, i), sd(i, i), 1.0 / static_cast<double>(d)});
  double total = 0.0;
  for (const auto& p : pairs) total += p.weight;
  for (auto& p : pairs) p.weight /= total;
  JointSpectralModel out(std::move(pairs), d);
  out.g_ = g;
  out.sigma_ = sigma;
  return out;
}

std::vector<double> read_eigenvalue_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open eigenvalue file " + path);
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    values.push_back(to_double(line.substr(first, last - first + 1), "eigenvalue in " + path));
  }
  return values;
}

MatrixFile read_matrix_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open matrix file " + path);
  std::vector<double> values;
  std::string token;
  while (in >> token) values.push_back(to_double(token, "matrix entry in " + path));
  const auto d = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(values.size()))));
  if (d == 0 || static_cast<std::size_t>(d * d) != values.size())
    throw DomainError("matrix file " + path + " does not hold a square matrix");
  MatrixFile out;
  out.matrix.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) out.matrix(i, j) = values[static_cast<std::size_t>(i * d + j)];
  const double asym = (out.matrix - out.matrix.transpose()).norm();
  if (asym > 1e-12 * out.matrix.norm()) {
    out.matrix = 0.5 * (out.matrix + out.matrix.transpose()).eval();
    out.symmetrized = true;
  }
  return out;
}

}  // namespace landscape::spectra
