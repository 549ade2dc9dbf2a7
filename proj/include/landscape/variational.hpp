#pragma once

#include <Eigen/Dense>
#include <complex>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "landscape/activations.hpp"
#include "landscape/geometry.hpp"
#include "landscape/resolvent.hpp"
#include "landscape/spectra.hpp"
#include "landscape/tilted.hpp"

namespace landscape::variational {

enum class ModelKind { L, L1, L2 };

std::string model_name(ModelKind k);
ModelKind parse_model(const std::string& name);

struct Budget {
  int max_evaluations = 1000;  // per restart
  int restarts = 3;
  double size_tol = 1e-5;  // simplex size in search coordinates
};

struct ModelConfig {
  ModelKind model = ModelKind::L;
  activations::Activation activation{activations::Kind::quadratic};
  activations::Activation activation2{activations::Kind::quadratic};  // second dataset of L2
  double beta = 2.0;
  double alpha1 = 2.0;  // L2 only

  std::shared_ptr<const spectra::SpectralModel> spectrum;  // L; filled from sigma for L1 when empty
  std::shared_ptr<const spectra::JointSpectralModel> joint;  // L2; filled from (g, sigma) when empty
  Eigen::MatrixXd sigma;   // L1: data covariance; L2: covariance of the second dataset
  Eigen::MatrixXd g;       // L2: covariance of the first dataset
  Eigen::VectorXd w_star;  // L1 teacher, unit norm

  std::vector<double> schedule = resolvent::default_schedule();
  tilted::QuadratureSpec quad{};
  tilted::QuadratureSpec quad2d = tilted::QuadratureSpec::two_dimensional();
  resolvent::SolveOptions solve{};
  tilted::MatchOptions match{};
  double coupling_tol = 1e-6;
  int coupling_max = 60;
  Budget budget{};

  double alpha2() const { return alpha1 / (alpha1 - 1.0); }
  /// Throws DomainError on beta <= 1, missing matrices or a bad alpha1.
  void validate() const;
};

using Named = std::vector<std::pair<std::string, double>>;

struct ComplexityPoint {
  double ell = 0.0;
  double psi = std::numeric_limits<double>::quiet_NaN();
  double saddle = 0.0;  // F^SP part at the argmax
  double inner = 0.0;   // inf over nu of lim extr (F^RM + F^S)
  double rate = 0.0;    // geometric rate function at the argmax
  Named params;         // argmax order parameters
  Named barred;         // tilt multipliers
  std::vector<std::complex<double>> phi;  // (phi, phibar) or (phi1, phi2, phibar1, phibar2) at the smallest eps
  double moment_residual = 0.0;
  double resolvent_residual = 0.0;
  double coupling_residual = 0.0;
  double extrapolation_error = 0.0;
  bool converged = false;
  bool boundary = false;  // argmax on a declared domain boundary
  bool feasible = true;
  int evaluations = 0;
  std::string diagnostic;
  std::vector<double> coordinates;  // search coordinates of the argmax (warm starts)

  double param(const std::string& name) const;
};

/// Result of the inner problem at fixed order parameters.
struct InnerResult {
  double value = std::numeric_limits<double>::quiet_NaN();
  Named barred;
  std::vector<std::complex<double>> phi;
  double moment_residual = 0.0;
  double resolvent_residual = 0.0;
  double coupling_residual = 0.0;
  double extrapolation_error = 0.0;
  bool flagged = false;  // Richardson increments grew
  bool converged = false;
  std::vector<std::pair<double, double>> schedule_values;
};

/// Model L inner value at (rho, kappa) with targets (ell, kappa, f). The tilt
/// is reweighted by |1 + sigma'' phi / beta| and (phi, phibar) solve the
/// resolvent equations under the reweighted law, iterated to a joint fixed
/// point at every eps; the eps -> 0 limit is extrapolated.
InnerResult inner_L(double rho, double kappa, double ell, double f, const ModelConfig& cfg,
                    const InnerResult* warm = nullptr);

/// Full model-L objective F^SP + inner at an explicit order-parameter point.
/// For the quadratic activation kappa and f are ignored and set to 2 ell.
struct ObjectiveValue {
  double total = -std::numeric_limits<double>::infinity();
  double saddle = 0.0;
  double rate = 0.0;
  InnerResult inner;
  bool ok = false;
  std::string diagnostic;
};
ObjectiveValue objective_L(double rho, double q, double kappa, double f, double ell, const ModelConfig& cfg);

/// Planted-model inner value; target carries (ell, kappa, f, kappa') and the
/// Hessian kernel is (sigma(y) - sigma(y')) sigma''(y).
InnerResult inner_L1(double rho, double p, const tilted::Moments& target, const ModelConfig& cfg,
                     const InnerResult* warm = nullptr);

/// Two-dataset inner value: targets (ell, kappa1, f1, kappa2, f2), one shared
/// ell multiplier entering the second law with the opposite sign.
InnerResult inner_L2(double rho1, double rho2, double kappa1, double kappa2, double f1, double f2, double ell,
                     const ModelConfig& cfg, const InnerResult* warm = nullptr);

/// Psi(ell): supremum over the order parameters with ell pinned.
ComplexityPoint complexity_at(double ell, const ModelConfig& cfg, const std::vector<double>* warm = nullptr);

/// Grid evaluation with a warm restart from the previous point.
std::vector<ComplexityPoint> complexity_curve(const std::vector<double>& ell_grid, const ModelConfig& cfg);

/// E sigma(x sqrt(rho)), x standard normal.
double generalization_error(double rho, const activations::Activation& activation);

/// Open range (inf, sup) of the activation values; infinite ends allowed.
std::pair<double, double> value_range(const activations::Activation& activation);

}  // namespace landscape::variational
