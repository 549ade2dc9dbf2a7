#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

namespace testsupport {

struct MeanSe {
  double mean;
  double se;
};

/// Running mean and standard error.
class Accumulator {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  MeanSe result() const {
    const double var = n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
    return {mean_, std::sqrt(var / static_cast<double>(n_))};
  }
  std::size_t count() const { return n_; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Importance-free estimate of E_N[h(z)] for a standard normal z.
template <class H>
MeanSe normal_mean(H&& h, std::size_t samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  Accumulator acc;
  for (std::size_t i = 0; i < samples; ++i) acc.add(h(n01(rng)));
  return acc.result();
}

/// Ratio estimator E_N[w h] / E_N[w] with delta-method standard error.
template <class W, class H>
MeanSe weighted_ratio(W&& weight, H&& h, std::size_t samples, std::uint64_t seed, int dims = 1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01;
  double sw = 0, swh = 0, sww = 0, swwh = 0, swwhh = 0;
  for (std::size_t i = 0; i < samples; ++i) {
    const double a = n01(rng);
    const double b = dims > 1 ? n01(rng) : 0.0;
    const double w = weight(a, b);
    const double v = h(a, b);
    sw += w;
    swh += w * v;
    sww += w * w;
    swwh += w * w * v;
    swwhh += w * w * v * v;
  }
  const double n = static_cast<double>(samples);
  const double r = swh / sw;
  // Var of sum w (h - r) over (sum w)^2.
  const double s2 = swwhh - 2 * r * swwh + r * r * sww;
  return {r, std::sqrt(s2) / sw * std::sqrt(n / (n - 1))};
}

}  // namespace testsupport

namespace testsupport {

/// Eigenvalues of (1/m) R X diag(k) X^T R^T with X a d x m standard normal
/// matrix and k_j = kernel(z_j) for independent standard normals z_j.
template <class K>
Eigen::VectorXd wishart_eigs(const Eigen::MatrixXd& r, std::size_t m, K&& kernel, std::mt19937_64& rng) {
  std::normal_distribution<double> n01;
  const auto d = r.rows();
  Eigen::MatrixXd x(d, static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < x.cols(); ++j)
    for (Eigen::Index i = 0; i < d; ++i) x(i, j) = n01(rng);
  Eigen::VectorXd k(static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < k.size(); ++j) k(j) = kernel(n01(rng));
  const Eigen::MatrixXd y = r * x;
  Eigen::MatrixXd h = (y * k.asDiagonal() * y.transpose()) / static_cast<double>(m);
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues();
}

/// Symmetric square root of a positive definite matrix.
inline Eigen::MatrixXd sqrtm(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(a);
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace testsupport
