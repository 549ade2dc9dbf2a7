#pragma once

#include <array>
#include <complex>
#include <optional>
#include <utility>
#include <vector>

#include "landscape/spectra.hpp"
#include "landscape/tilted.hpp"

namespace landscape::resolvent {

using cplx = std::complex<double>;
using tilted::KernelLaw;

struct SolveOptions {
  double tol = 1e-10;
  double relaxation = 0.5;
  int picard_steps = 200;
  int max_newton = 100;
  bool continuation = true;  // walk Im z down from O(1) with warm starts
};

/// Stationary point of G(phi, phibar; z) =
///   b E_k log(1 + k phi / b) + E_lambda log(z (1 + phibar lambda)) + z phi phibar,
/// with b = beta_eff. Real part and modulus are taken at evaluation.
struct FixedPointState {
  cplx phi;
  cplx phibar;
  double residual = 0.0;
  int iterations = 0;
  bool herglotz = true;  // Im g(z) <= 0 at the solution
};

/// Stieltjes transform g(z) = (1/d) tr (z - H)^{-1} = 1/z + phi phibar.
cplx stieltjes(const FixedPointState& s, cplx z);

/// Solves -z phibar = E k / (1 + k phi / b), -z phi = E lambda / (1 + lambda phibar).
/// Throws DomainError for Im z <= 0 and ConvergenceError on failure.
FixedPointState solve_fixed_point(cplx z, const KernelLaw& kernel, const spectra::SpectralModel& model, double beta_eff,
                                  const SolveOptions& options = {},
                                  const std::optional<FixedPointState>& start = std::nullopt);
FixedPointState solve_fixed_point(cplx z, const tilted::TiltedMeasure1D& measure, const spectra::SpectralModel& model,
                                  double beta, const SolveOptions& options = {});

/// Residual of the stationarity system (max modulus of the two equations).
double stationarity_residual(const FixedPointState& s, cplx z, const KernelLaw& kernel,
                             const spectra::SpectralModel& model, double beta_eff);

/// Re G at the state: b E log|1 + k phi/b| + E log|z (1 + phibar lambda)| + Re(z phi phibar).
double free_energy(const FixedPointState& s, cplx z, const KernelLaw& kernel, const spectra::SpectralModel& model,
                   double beta_eff);

/// Sanov form: b log E|1 + k phi/b| + E log|z + z phibar lambda| + Re(z phibar phi), z = kappa + i eps.
double free_energy_rm(const FixedPointState& s, double kappa, double eps, const tilted::TiltedMeasure1D& measure,
                      const spectra::SpectralModel& model, double beta,
                      tilted::ModulusPlacement placement = tilted::ModulusPlacement::inside);

/// Stationary point of
///   b1 E1 log(1 + k1 phi1 / b1) + b2 E2 log(1 - k2 phi2 / b2)
///   + (1/d) log det(z (I + phibar1 G - phibar2 Sigma)) + z (phibar1 phi1 - phibar2 phi2),
/// with b_j = beta / alpha_j. This is the log-potential of
/// H = (1/m1) sum k1 x x^T - (1/m2) sum k2 u u^T with x ~ N(0, G), u ~ N(0, Sigma).
struct TwoMatrixState {
  cplx phi1, phi2, phibar1, phibar2;
  double residual = 0.0;
  int iterations = 0;
  double value = 0.0;  // Re of the free energy at the state
};

struct LogPotential {
  double value = 0.0;
  std::vector<std::pair<double, double>> epsilon_schedule;  // (eps, Re G(kappa + i eps))
  double extrapolation_error = 0.0;
  bool flagged = false;  // increments grew along the schedule
  FixedPointState last;       // state at the smallest eps
  TwoMatrixState last_two;    // two-dataset runs only
};

std::vector<double> default_schedule();

/// lim_{eps -> 0} Re G(kappa + i eps) = E log|lambda - kappa| by order-1
/// Richardson extrapolation over the schedule.
LogPotential log_potential(double kappa, const KernelLaw& kernel, const spectra::SpectralModel& model, double beta_eff,
                           const std::vector<double>& schedule = default_schedule(), const SolveOptions& options = {});
LogPotential log_potential(double kappa, const tilted::TiltedMeasure1D& measure, const spectra::SpectralModel& model,
                           double beta, const std::vector<double>& schedule = default_schedule(),
                           const SolveOptions& options = {});

/// Richardson order 1 on a decreasing schedule; returns (limit, error, flagged).
struct Extrapolation {
  double value;
  double error;
  bool flagged;
};
Extrapolation richardson(const std::vector<std::pair<double, double>>& samples);

// ---- two datasets ---------------------------------------------------------

struct TwoMatrixProblem {
  KernelLaw kernel1;
  KernelLaw kernel2;
  const spectra::JointSpectralModel* joint = nullptr;
  double beta = 2.0;
  double alpha1 = 2.0;
  double alpha2 = 2.0;
};

/// Checks alpha2 = alpha1 / (alpha1 - 1) within 1e-9.
void check_alphas(double alpha1, double alpha2);

TwoMatrixState solve_two_matrix(cplx z, const TwoMatrixProblem& problem, const SolveOptions& options = {},
                                const std::optional<TwoMatrixState>& start = std::nullopt);

/// The four derivatives of the two-matrix free energy at a state.
std::array<cplx, 4> two_matrix_gradient(const TwoMatrixState& s, cplx z, const TwoMatrixProblem& problem);

/// Re of the two-matrix free energy with either E log|.| (pre) or log E|.| (Sanov) on the kernel terms.
double two_matrix_free_energy(const TwoMatrixState& s, cplx z, const TwoMatrixProblem& problem,
                              bool sanov_form = false);

LogPotential two_matrix_log_potential(double kappa, const TwoMatrixProblem& problem,
                                      const std::vector<double>& schedule = default_schedule(),
                                      const SolveOptions& options = {});

}  // namespace landscape::resolvent
