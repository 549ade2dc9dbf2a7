#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "landscape/errors.hpp"

namespace landscape::spectra {

struct SpectralPoint {
  double eigenvalue;
  double weight;
};

/// Limiting spectral law of a covariance matrix: finitely many atoms plus a
/// weighted node discretization of any absolutely continuous part.
/// Immutable after construction.
class SpectralModel {
 public:
  SpectralModel(std::vector<SpectralPoint> atoms, std::vector<SpectralPoint> nodes, std::string label);

  const std::vector<SpectralPoint>& atoms() const { return atoms_; }
  const std::vector<SpectralPoint>& nodes() const { return nodes_; }
  const std::string& label() const { return label_; }

  /// Atoms followed by nodes.
  const std::vector<SpectralPoint>& points() const { return points_; }

  double min_eigenvalue() const { return min_; }
  double max_eigenvalue() const { return max_; }

  /// True when every support point sits at the same eigenvalue (Sigma = c I).
  bool is_scalar(double tol = 1e-12) const { return max_ - min_ <= tol * max_; }

  /// E_lambda[g(lambda)] as a weighted sum. Throws EvaluationError when g is
  /// not finite at a support point.
  template <class G>
  auto expect(G&& g) const -> std::decay_t<decltype(g(1.0))> {
    using R = std::decay_t<decltype(g(1.0))>;
    R acc{};
    for (const auto& p : points_) {
      const R v = g(p.eigenvalue);
      if (!is_finite(v))
        throw EvaluationError("non-finite integrand at eigenvalue " + std::to_string(p.eigenvalue) + " of " +
                              label_);
      acc += p.weight * v;
    }
    return acc;
  }

 private:
  static bool is_finite(double v) { return std::isfinite(v); }
  static bool is_finite(const std::complex<double>& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); }

  std::vector<SpectralPoint> atoms_;
  std::vector<SpectralPoint> nodes_;
  std::vector<SpectralPoint> points_;
  std::string label_;
  double min_ = 0.0;
  double max_ = 0.0;
};

enum class SpectrumKind { identity, atoms, marchenko_pastur, ar1, file };

/// Descriptor accepted by from_named.
struct SpectrumSpec {
  SpectrumKind kind = SpectrumKind::identity;
  std::vector<SpectralPoint> atoms;  // kind == atoms; weights <= 0 mean "equal share"
  double ratio = 2.0;                // marchenko_pastur
  std::size_t nodes = 512;           // marchenko_pastur discretization
  double coefficient = 0.0;          // ar1
  std::size_t dimension = 0;         // ar1
  std::string path;                  // file
  std::vector<double> outliers;      // explicit outlier atoms of mass 1/d_hint
  std::size_t d_hint = 1000;
};

/// Parse "identity", "atoms:0.5/0.5,2/0.5", "marchenko_pastur:2[:nodes]",
/// "ar1:0.5:512" or "file:path".
SpectrumSpec parse_spectrum(const std::string& text);

SpectralModel from_named(const SpectrumSpec& spec);

/// Eigenvalues of a symmetric matrix as an equal-weight empirical law.
SpectralModel from_matrix(const Eigen::MatrixXd& matrix, std::string label);

/// The d x d Toeplitz correlation matrix with entries c^|i-j|.
Eigen::MatrixXd ar1_matrix(double coefficient, std::size_t dimension);

/// Bulk edges of the Marchenko–Pastur law of (1/m) X X^T with m/d = ratio.
std::pair<double, double> marchenko_pastur_edges(double ratio);

/// Convex hull of {(lambda, 1/lambda)} over the support: the possible values
/// of (w^T Sigma w, w^T Sigma^{-1} w) for unit w. The points lie on a convex
/// curve, so every distinct support point is a vertex.
class GeometryDomain {
 public:
  explicit GeometryDomain(std::vector<double> eigenvalues);

  /// Vertices (rho, q) ordered by increasing rho.
  const std::vector<std::pair<double, double>>& vertices() const { return vertices_; }
  bool degenerate() const { return vertices_.size() == 1; }
  bool contains(double rho, double q, double tol = 1e-12) const;

  /// Signed slack to the boundary: positive inside, negative outside.
  double slack(double rho, double q) const;

  /// q bounds at a given rho (lower piecewise-linear boundary, upper chord).
  std::pair<double, double> q_range(double rho) const;

  std::pair<double, double> centroid() const;

 private:
  std::vector<std::pair<double, double>> vertices_;
};

GeometryDomain feasible_domain(const SpectralModel& model);

/// Joint law of the eigenvalue pairs of two commuting covariances (G, Sigma),
/// or the finite-dimensional matrices themselves when they do not commute.
class JointSpectralModel {
 public:
  struct Pair {
    double lambda_g;
    double lambda_sigma;
    double weight;
  };

  JointSpectralModel(std::vector<Pair> pairs, std::size_t dimension_hint);

  /// Diagonalizes jointly when the commutator vanishes (relative tolerance),
  /// otherwise keeps both matrices for direct determinant evaluation.
  static JointSpectralModel from_matrices(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma,
                                          double commute_tol = 1e-10);

  /// Keep both matrices even if they commute.
  static JointSpectralModel finite_dimensional(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma);

  bool has_pairs() const { return !pairs_.empty(); }
  const std::vector<Pair>& pairs() const { return pairs_; }
  std::size_t dimension_hint() const { return dimension_hint_; }
  const Eigen::MatrixXd& g_matrix() const { return g_; }
  const Eigen::MatrixXd& sigma_matrix() const { return sigma_; }

 private:
  JointSpectralModel() = default;
  std::vector<Pair> pairs_;
  std::size_t dimension_hint_ = 0;
  Eigen::MatrixXd g_;
  Eigen::MatrixXd sigma_;
};

/// Eigenvalues, one per line; blank lines ignored.
std::vector<double> read_eigenvalue_file(const std::string& path);

struct MatrixFile {
  Eigen::MatrixXd matrix;
  bool symmetrized = false;  // input was not symmetric and was replaced by (A + A^T)/2
};

/// Dense whitespace-separated square matrix, row-major.
MatrixFile read_matrix_file(const std::string& path);

}  // namespace landscape::spectra
