#pragma once

#include <Eigen/Dense>
#include <array>
#include <complex>
#include <cstddef>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "landscape/activations.hpp"

namespace landscape::tilted {

using activations::Activation;

struct QuadratureSpec {
  std::size_t initial_nodes = 200;  // per dimension
  std::size_t max_nodes = 1600;     // per dimension
  double rel_tol = 1e-10;
  bool adaptive = true;

  static QuadratureSpec two_dimensional() { return {64, 400, 1e-10, true}; }
};

/// Lagrange multipliers of the one-dimensional tilt, in the order (ell, kappa, f).
struct Barred1D {
  double ell = 0.0;
  double kappa = 0.0;
  double f = 0.0;

  Eigen::Vector3d vec() const { return {ell, kappa, f}; }
  static Barred1D from(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }
};

/// Multipliers of the two-dimensional tilt, in the order (ell, kappa, kappa', f).
struct Barred2D {
  double ell = 0.0;
  double kappa = 0.0;
  double kappa2 = 0.0;
  double f = 0.0;

  Eigen::Vector4d vec() const { return {ell, kappa, kappa2, f}; }
  static Barred2D from(const Eigen::Vector4d& v) { return {v(0), v(1), v(2), v(3)}; }
};

struct Moments {
  double ell = 0.0;
  double kappa = 0.0;
  double f = 0.0;
  std::optional<double> kappa2;  // the second kappa of the planted model only
};

/// Extra factor |1 + k(zeta) phi / beta_eff| on the density, with k the
/// Hessian kernel (sigma'' in 1-D, psi_sigma in 2-D). This is the Sanov-optimal
/// reweighting when the determinant term is optimized together with the tilt.
struct Reweight {
  std::complex<double> phi;
  double beta_eff;
};

/// Discrete law of the Hessian kernel values under a measure.
struct KernelLaw {
  std::vector<double> values;
  std::vector<double> probs;
};

namespace detail {
struct GridSet;
}

/// One row per functional g_k evaluated at every quadrature node, together with
/// log base weights and the Hessian kernel. Built once per parameter set.
struct FunctionalGrid {
  std::vector<double> log_base;        // log Gauss–Hermite weight for the standard normal
  std::vector<double> gauss_exponent;  // |zeta|^2 / 2 at each node
  Eigen::MatrixXd functionals;         // K x N
  std::vector<double> kernel;          // sigma''(sqrt(rho) zeta) or psi_sigma
  // (outer, inner) node pairs on the grid boundary for the tail test
  std::vector<std::pair<std::size_t, std::size_t>> tail_pairs;
  std::size_t per_dim = 0;
};

/// Discretized tilted law: probabilities on a fixed grid plus log partition.
class DiscreteTilt {
 public:
  DiscreteTilt(std::shared_ptr<const FunctionalGrid> grid, const Eigen::VectorXd& barred, double scale,
               const std::optional<Reweight>& reweight);

  const FunctionalGrid& grid() const { return *grid_; }
  const std::vector<double>& probs() const { return probs_; }
  /// log of E_N[weight * exp(-scale F)] (standard-normal base, so 0 when untilted).
  double log_normalized_partition() const { return log_z_; }
  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  template <class F>
  auto expect(F&& f) const -> decltype(f(std::size_t{0})) {
    using R = decltype(f(std::size_t{0}));
    R acc{};
    for (std::size_t i = 0; i < probs_.size(); ++i)
      if (probs_[i] > 0.0) acc += probs_[i] * f(i);
    return acc;
  }

 private:
  std::shared_ptr<const FunctionalGrid> grid_;
  std::vector<double> probs_;
  double log_z_ = 0.0;
};

/// Gibbs-tilted law of zeta with density proportional to
/// exp{-zeta^2/2 - scale * F_nu(zeta)}, optionally reweighted. F_nu is
/// ell_bar sigma(sqrt(rho) zeta) + f_bar sigma'(.)^2 + kappa_bar sqrt(rho) zeta sigma'(.).
class TiltedMeasure1D {
 public:
  /// scale is 1/beta for the single-dataset loss and alpha_j/beta for the
  /// discriminating loss. Throws NormalizationError for a divergent tail.
  TiltedMeasure1D(const Activation& activation, double rho, double beta, double scale, Barred1D barred,
                  QuadratureSpec quad = {}, std::optional<Reweight> reweight = std::nullopt);

  TiltedMeasure1D with_barred(Barred1D barred) const;
  TiltedMeasure1D with_reweight(std::optional<Reweight> reweight) const;

  const Activation& activation() const { return activation_; }
  double rho() const { return rho_; }
  double beta() const { return beta_; }
  double scale() const { return scale_; }
  const Barred1D& barred() const { return barred_; }
  const std::optional<Reweight>& reweight() const { return reweight_; }
  const QuadratureSpec& quadrature() const { return quad_; }
  std::size_t nodes_used() const { return tilt_->grid().per_dim; }
  /// False when node doubling hit the cap before the tolerance was met.
  bool quadrature_converged() const { return quad_converged_; }

  const DiscreteTilt& tilt() const { return *tilt_; }
  KernelLaw kernel_law() const;

 private:
  TiltedMeasure1D(const Activation& activation, double rho, double beta, double scale, Barred1D barred,
                  QuadratureSpec quad, std::optional<Reweight> reweight, std::shared_ptr<detail::GridSet> grids);
  void resolve();

  Activation activation_;
  double rho_;
  double beta_;
  double scale_;
  Barred1D barred_;
  QuadratureSpec quad_;
  std::optional<Reweight> reweight_;
  std::shared_ptr<detail::GridSet> grids_;
  std::shared_ptr<const DiscreteTilt> tilt_;
  bool quad_converged_ = true;
};

/// Planted-model law of (zeta, zeta') with product-normal base and tilt
/// F1_nu built from the residual sigma(sqrt(rho) zeta) - sigma(sqrt(p) zeta + sqrt(rho_* - p) zeta').
class TiltedMeasure2D {
 public:
  TiltedMeasure2D(const Activation& activation, double rho, double p, double rho_star, double beta, Barred2D barred,
                  QuadratureSpec quad = QuadratureSpec::two_dimensional(), std::optional<Reweight> reweight = std::nullopt);

  TiltedMeasure2D with_barred(Barred2D barred) const;
  TiltedMeasure2D with_reweight(std::optional<Reweight> reweight) const;

  const Activation& activation() const { return activation_; }
  double rho() const { return rho_; }
  double p() const { return p_; }
  double rho_star() const { return rho_star_; }
  double beta() const { return beta_; }
  double scale() const { return 1.0 / beta_; }
  const Barred2D& barred() const { return barred_; }
  const std::optional<Reweight>& reweight() const { return reweight_; }
  const QuadratureSpec& quadrature() const { return quad_; }
  std::size_t nodes_used() const { return tilt_->grid().per_dim; }
  /// False when node doubling hit the cap before the tolerance was met.
  bool quadrature_converged() const { return quad_converged_; }

  const DiscreteTilt& tilt() const { return *tilt_; }
  KernelLaw kernel_law() const;

 private:
  TiltedMeasure2D(const Activation& activation, double rho, double p, double rho_star, double beta, Barred2D barred,
                  QuadratureSpec quad, std::optional<Reweight> reweight, std::shared_ptr<detail::GridSet> grids);
  void resolve();

  Activation activation_;
  double rho_;
  double p_;
  double rho_star_;
  double beta_;
  Barred2D barred_;
  QuadratureSpec quad_;
  std::optional<Reweight> reweight_;
  std::shared_ptr<detail::GridSet> grids_;
  std::shared_ptr<const DiscreteTilt> tilt_;
  bool quad_converged_ = true;
};

/// Raw normalization integral Z = int dzeta exp{-zeta^2/2 - scale F_nu}
/// (times the reweight factor when present); Z = sqrt(2 pi) untilted.
double partition(const TiltedMeasure1D& m);
/// Same for the 2-D law; Z = 2 pi untilted.
double partition(const TiltedMeasure2D& m);

/// beta_eff * log(Z / Z_untilted): the log-partition entering the Sanov term,
/// so that it vanishes at zero tilt.
double log_partition_normalized(const TiltedMeasure1D& m);
double log_partition_normalized(const TiltedMeasure2D& m);

Moments moments(const TiltedMeasure1D& m);
Moments moments(const TiltedMeasure2D& m);

/// d(moments)/d(barred) = -scale * Cov_nu(functionals). Rows and columns
/// ordered as the barred vector.
Eigen::Matrix3d moment_jacobian(const TiltedMeasure1D& m);
Eigen::Matrix4d moment_jacobian(const TiltedMeasure2D& m);

struct MatchOptions {
  double tol = 1e-10;  // absolute, componentwise
  int max_iterations = 100;
  int max_halvings = 20;
};

struct MatchResult1D {
  Barred1D barred;
  Moments achieved;
  double residual = 0.0;
  int iterations = 0;
};

struct MatchResult2D {
  Barred2D barred;
  Moments achieved;
  double residual = 0.0;
  int iterations = 0;
};

/// Damped Newton for barred multipliers whose tilted moments hit the
/// target. `active` masks constraints; inactive multipliers stay at their
/// starting value and their moments are not required to match.
/// Throws ConvergenceError with the final residual when the target is not
/// reached.
MatchResult1D match_moments(const Moments& target, const TiltedMeasure1D& start,
                            std::array<bool, 3> active = {true, true, true}, MatchOptions options = {});
MatchResult1D match_moments(const Moments& target, double rho, double beta, const Activation& activation,
                            MatchOptions options = {});

MatchResult2D match_moments2d(const Moments& target, const TiltedMeasure2D& start, MatchOptions options = {});

enum class ModulusPlacement {
  inside,   // log E|1 + k phi / b|
  of_mean,  // log |E[1 + k phi / b]|
};

/// log of E_nu|1 + kernel * phi / beta_eff| (or of the modulus of the mean).
/// Kernel is sigma''(sqrt(rho) zeta) in 1-D and psi_sigma in 2-D.
/// Throws EvaluationError when the value falls below 1e-300.
double log_expect_abs(const TiltedMeasure1D& m, std::complex<double> phi, double beta_eff,
                      ModulusPlacement placement = ModulusPlacement::inside);
double log_expect_abs(const TiltedMeasure2D& m, std::complex<double> phi, double beta_eff,
                      ModulusPlacement placement = ModulusPlacement::inside);
double log_expect_abs(const KernelLaw& law, std::complex<double> phi, double beta_eff,
                      ModulusPlacement placement = ModulusPlacement::inside);

/// Sanov rate with Legendre structure:
/// barred . target + beta_eff * log(Z / Z_untilted).
double sanov_value(const TiltedMeasure1D& m, const Moments& target);
double sanov_value(const TiltedMeasure2D& m, const Moments& target);

}  // namespace landscape::tilted
