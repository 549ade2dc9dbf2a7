#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "landscape/activations.hpp"
#include "landscape/tilted.hpp"

namespace landscape::montecarlo {

/// Independent stream for task `index` of a run seeded with `seed`.
std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index);

/// Columns xi = R z with z standard normal and R the Cholesky factor of the
/// covariance, so the column covariance is R R^T.
struct Dataset {
  int d = 0;
  Eigen::MatrixXd r;
  Eigen::MatrixXd data;  // d x m
  Eigen::MatrixXd r2;    // second dataset (two-dataset loss only)
  Eigen::MatrixXd data2;
  Eigen::VectorXd w_star;  // teacher (planted loss only)
  std::uint64_t seed = 0;
  int m() const { return static_cast<int>(data.cols()); }
};

Dataset sample_dataset(const Eigen::MatrixXd& sigma, int m, std::uint64_t seed);
Dataset sample_planted(const Eigen::MatrixXd& sigma, const Eigen::VectorXd& w_star, int m, std::uint64_t seed);
Dataset sample_two_datasets(const Eigen::MatrixXd& g, const Eigen::MatrixXd& sigma, int m1, int m2,
                            std::uint64_t seed);

enum class LossKind { L, L1, L2 };

/// (1/m) sum sigma(w.xi); (1/m) sum (sigma(w.xi) - sigma(w_*.xi))^2;
/// (1/m1) sum sigma1(w.xi1) - (1/m2) sum sigma2(w.xi2).
class Loss {
 public:
  Loss(LossKind kind, const Dataset& data, activations::Activation activation,
       activations::Activation activation2 = activations::Activation(activations::Kind::quadratic));

  double value(const Eigen::VectorXd& w) const;
  /// Euclidean value, gradient and Hessian.
  void derivatives(const Eigen::VectorXd& w, double& value, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const;
  int dimension() const { return d_; }
  /// Losses of -w equal those of w.
  bool even() const;

 private:
  struct Block {
    Eigen::MatrixXd data;
    Eigen::VectorXd targets;  // planted residual targets, empty otherwise
    double weight;
    activations::Activation act;
  };
  LossKind kind_;
  int d_;
  std::vector<Block> blocks_;
};

struct CriticalPoint {
  Eigen::VectorXd w;
  double loss = 0.0;
  double grad_norm = 0.0;  // Riemannian gradient
  int index = 0;           // negative tangent Hessian eigenvalues
  double min_abs_eigenvalue = 0.0;
};

struct NewtonOptions {
  double grad_tol = 1e-10;
  int max_iterations = 100;
  double max_step = 0.5;      // tangent step length cap
  double dedup_tol = 1e-6;    // ||w - w'|| below which two points coincide
};

struct Enumeration {
  std::vector<CriticalPoint> points;  // sorted by loss
  int restarts = 0;
  int discarded = 0;  // starts whose Newton run did not converge
  int euler_sum() const;
};

/// Riemannian Newton on the unit sphere from `restarts` uniform starts.
Enumeration find_critical_points(const Loss& loss, int restarts, std::uint64_t seed, const NewtonOptions& opt = {});

/// Doubles the restart count from `initial` until the deduplicated count is
/// unchanged (at most `max_doublings` times).
struct SaturatedEnumeration {
  Enumeration result;
  bool saturated = false;
  std::vector<int> counts;  // count after each round
};
SaturatedEnumeration enumerate_saturated(const Loss& loss, int initial, int max_doublings, std::uint64_t seed,
                                         const NewtonOptions& opt = {});

/// Default starts: 200 d^2.
int default_restarts(int d);

// ---- empirical complexity -----------------------------------------------------

struct CountConfig {
  LossKind loss = LossKind::L;
  activations::Activation activation{activations::Kind::logistic};
  activations::Activation activation2{activations::Kind::logistic};
  double beta = 2.0;
  double alpha1 = 2.0;  // two-dataset loss
  std::string sigma = "identity";  // spectrum descriptor resolved at each d; "file:" paths are fixed size
  std::string g = "identity";
  int restarts_per_d2 = 200;
  int max_doublings = 2;
  std::uint64_t seed = 1;
  NewtonOptions newton{};
};

struct SampleCounts {
  int d = 0;
  int sample = 0;
  std::uint64_t seed = 0;
  int total = 0;
  std::vector<int> per_bin;
  int euler_sum = 0;
  bool euler_ok = false;
  bool saturated = false;
  std::vector<double> losses;
};

struct ComplexityRow {
  int d = 0;
  double bin_lo = 0.0, bin_hi = 0.0;
  double mean_count = 0.0;
  double log_count_over_d = 0.0;  // (1/d) log of the mean count
  double bootstrap_se = 0.0;
  int samples = 0;
};

struct EmpiricalComplexity {
  std::vector<ComplexityRow> rows;  // empty bins are absent
  std::vector<SampleCounts> samples;
};

/// Covariance for a descriptor at dimension d (identity, ar1:c, atoms are
/// not supported here; matrices come from spectra::ar1_matrix or a file).
Eigen::MatrixXd covariance_for(const std::string& descriptor, int d);

EmpiricalComplexity empirical_complexity(const CountConfig& cfg, const std::vector<int>& d_list, int samples_per_d,
                                         const std::vector<double>& bin_edges, int bootstrap = 200);

/// Index of the bin with the largest mean count at dimension d (ties: lowest).
std::optional<ComplexityRow> modal_bin(const EmpiricalComplexity& e, int d);

// ---- Hessian log-determinants ---------------------------------------------------

/// H = (1/m) R Z diag(k) Z^T R^T with k = sigma''(sqrt(rho) y) and y from the
/// standard normal or from a tilted measure; the two-dataset variant subtracts
/// (1/m2) R2 U diag(k2) U^T R2^T.
struct HessianConfig {
  int d = 100;
  double beta = 2.0;
  double rho = 1.0;
  activations::Activation activation{activations::Kind::quadratic};
  Eigen::MatrixXd sigma;  // d x d; empty means identity
  std::optional<tilted::TiltedMeasure1D> measure;

  bool two_datasets = false;
  double alpha1 = 2.0;
  double rho2 = 1.0;
  activations::Activation activation2{activations::Kind::quadratic};
  Eigen::MatrixXd sigma2;
  std::optional<tilted::TiltedMeasure1D> measure2;
  std::uint64_t seed = 1;
};

struct LogDetEstimate {
  double kappa = 0.0;
  double mean = 0.0;
  double stderr_ = 0.0;
  int draws = 0;
  int rejected = 0;  // exactly singular draws
};

/// Mean and standard error of (1/d) log|det(H - kappa I)| per kappa.
std::vector<LogDetEstimate> hessian_logdet_mc(const HessianConfig& cfg, const std::vector<double>& kappas, int draws);
LogDetEstimate hessian_logdet_mc(const HessianConfig& cfg, double kappa, int draws);

/// One draw of H (exposed for spectrum inspection).
Eigen::MatrixXd sample_hessian(const HessianConfig& cfg, std::uint64_t seed);

// ---- sphere overlaps ------------------------------------------------------------

struct Overlap {
  double rho, q;
  double p = 0.0, r = 0.0;  // planted overlaps when a teacher is given
};

/// rho = w^T Sigma w, q = w^T Sigma^-1 w, p = (w^T Sigma w_*)^2 / rho, r = w.w_*
/// for w uniform on the sphere.
std::vector<Overlap> sample_sphere_overlaps(const Eigen::MatrixXd& sigma, int n_samples, std::uint64_t seed,
                                            const Eigen::VectorXd* w_star = nullptr);

}  // namespace landscape::montecarlo
