#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "landscape/spectra.hpp"

namespace landscape::geometry {

struct GeomParamsL {
  double rho;
  double q;
};

struct GeomParamsL1 {
  double rho;
  double q;
  double p;
  double r;
};

struct GeomParamsL2 {
  double rho1;  // w^T G w
  double rho2;  // w^T Sigma w
  double q1;    // w^T D S^-1 D w
  double q2;    // w^T S^-1 w
  double q3;    // w^T S^-1 D w
};

/// Supremum of a concave inner objective over the barred multipliers.
struct RateResult {
  double value = 0.0;
  Eigen::VectorXd barred;    // maximizer
  Eigen::VectorXd envelope;  // gradient of the value in the order parameters
  bool converged = false;
  bool outside = false;   // the parameters are not in the image of the sphere: value is +inf
  bool boundary = false;  // multipliers ran away; value is a large lower bound
  int iterations = 0;
  std::string diagnostic;
};

// ---- concave maximization -------------------------------------------------

struct ConcaveEval {
  double value;
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
};

struct MaximizeOptions {
  double grad_tol = 1e-10;
  int max_iterations = 200;
  double runaway = 1e8;  // multiplier norm treated as divergence to +inf
};

struct MaximizeResult {
  Eigen::VectorXd x;
  double value;
  Eigen::VectorXd grad;
  bool converged;
  bool runaway;
  int iterations;
};

/// Damped Newton ascent for a concave function. `eval` returns nullopt where
/// the function is -inf (outside its domain). `upper_zero[k]` constrains
/// x_k <= 0 (projected steps). Starts from x0, which must be feasible.
MaximizeResult maximize_concave(const std::function<std::optional<ConcaveEval>(const Eigen::VectorXd&)>& eval,
                                Eigen::VectorXd x0, const std::vector<bool>& upper_zero = {},
                                const MaximizeOptions& options = {});

// ---- model L --------------------------------------------------------------

/// 1/2 E log(1 - rb rho - qb q + rb lambda + qb / lambda); nullopt when the
/// argument is not positive on the support.
std::optional<ConcaveEval> inner_I(const Eigen::VectorXd& barred, const GeomParamsL& g,
                                   const spectra::SpectralModel& model);

RateResult rate_I(const GeomParamsL& g, const spectra::SpectralModel& model, const MaximizeOptions& options = {});

/// (E lambda, E 1/lambda)
GeomParamsL typical_L(const spectra::SpectralModel& model);

/// 1/2 log(beta e) - 1/2 log f - 1/2 E log lambda + (beta/2)(kappa^2/(f rho))(1 - rho q) - I(rho, q)
double f_sp(const GeomParamsL& g, double kappa, double f, const spectra::SpectralModel& model, double beta,
            RateResult* rate = nullptr);

// ---- model L1 -------------------------------------------------------------

/// Finite-dimensional data for the planted model: Sigma and the teacher w_*.
class PlantedGeometry {
 public:
  PlantedGeometry(Eigen::MatrixXd sigma, Eigen::VectorXd w_star);

  const Eigen::MatrixXd& sigma() const { return sigma_; }
  const Eigen::MatrixXd& sigma_inverse() const { return sigma_inv_; }
  const Eigen::VectorXd& w_star() const { return w_star_; }
  const Eigen::VectorXd& sigma_w_star() const { return sigma_w_; }
  /// ||R^T w_*||^2 = w_*^T Sigma w_*
  double rho_star() const { return rho_star_; }
  double logdet_over_d() const { return logdet_d_; }
  std::size_t dimension() const { return static_cast<std::size_t>(sigma_.rows()); }
  const Eigen::VectorXd& sigma_eigenvalues() const { return eig_; }

 private:
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd sigma_inv_;
  Eigen::VectorXd w_star_;
  Eigen::VectorXd sigma_w_;
  Eigen::VectorXd eig_;
  double rho_star_;
  double logdet_d_;
};

/// Trace averages: (tr Sigma/d, tr Sigma^-1/d, |Sigma w_*|^2/(d rho), 1/sqrt(d)).
GeomParamsL1 typical_L1(const PlantedGeometry& geo);

/// (1/2d) tr log[(1 - sum tb a) I + rb Sigma + qb Sigma^-1 + pb Sigma w_* w_*^T Sigma / rho + rb' w_* w_*^T]
/// with a = (rho, q, p, r^2) and barred order (rho, q, p, r).
std::optional<ConcaveEval> inner_I1(const Eigen::VectorXd& barred, const GeomParamsL1& g, const PlantedGeometry& geo);

/// The rank-one multipliers (p, r) are restricted to be nonpositive.
RateResult rate_I1(const GeomParamsL1& g, const PlantedGeometry& geo, const MaximizeOptions& options = {});

/// 1/2 log(beta e) - 1/2 log f - (1/2d) log det Sigma
///   + (beta/(2 f rho)) [(1 - q rho) kappa^2 + kappa'^2 - 2 (r sqrt(rho) - sqrt(p))/sqrt(rho_* - p) kappa kappa'] - I1
double f_sp1(const GeomParamsL1& g, double kappa, double kappa2, double f, const PlantedGeometry& geo, double beta,
             RateResult* rate = nullptr);

// ---- model L2 -------------------------------------------------------------

/// S = a1 f1 G + a2 f2 Sigma, D = (k1/r1) G - (k2/r2) Sigma and the quadratic-form matrices.
struct DiscriminatingMatrices {
  Eigen::MatrixXd g;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd s;
  Eigen::MatrixXd d;
  Eigen::MatrixXd s_inv;
  Eigen::MatrixXd dsd;    // D S^-1 D
  Eigen::MatrixXd sd_sym; // (S^-1 D + D S^-1) / 2
  double logdet_s_over_d;
};

DiscriminatingMatrices discriminating_matrices(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma, double alpha1,
                                               double alpha2, double f1, double f2, double kappa1, double kappa2,
                                               double rho1, double rho2);

GeomParamsL2 typical_L2(const DiscriminatingMatrices& m);

std::optional<ConcaveEval> inner_I2(const Eigen::VectorXd& barred, const GeomParamsL2& g,
                                    const DiscriminatingMatrices& m);

RateResult rate_I2(const GeomParamsL2& g, const DiscriminatingMatrices& m, const MaximizeOptions& options = {});

/// 1/2 log(beta e) - (1/2d) log det S - (beta/2) q1 - (beta/2) q2 (k1 - k2)^2 + beta q3 (k1 - k2) - I2
double f_sp2(const GeomParamsL2& g, double kappa1, double kappa2, const DiscriminatingMatrices& m, double beta,
             RateResult* rate = nullptr);

}  // namespace landscape::geometry
