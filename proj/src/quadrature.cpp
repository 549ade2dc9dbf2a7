#include "landscape/quadrature.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace landscape::quadrature {
namespace {

// Orthonormal probabilists' Hermite recurrence evaluated at x. Returns
// log of sum_{k<n} h_k(x)^2 together with the ratio h_n / h_{n-1}, with
// running rescaling so that large |x| does not overflow.
struct HermiteEval {
  double log_sum_sq;
  double newton_step;  // h_n / h_n'
};

HermiteEval eval_hermite(std::size_t n, double x) {
  double prev = 0.0;
  double cur = 1.0;  // h_0
  double scale_log = 0.0;
  double sum_sq = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    sum_sq += cur * cur;
    const double next =
        (x * cur - std::sqrt(static_cast<double>(k)) * prev) / std::sqrt(static_cast<double>(k + 1));
    prev = cur;
    cur = next;
    const double mag = std::max(std::abs(cur), std::abs(prev));
    if (mag > 1e150) {
      prev /= mag;
      cur /= mag;
      sum_sq /= mag * mag;
      scale_log += std::log(mag);
    }
  }
  // h_n' = sqrt(n) h_{n-1}
  const double step = cur / (std::sqrt(static_cast<double>(n)) * prev);
  return {std::log(sum_sq) + 2.0 * scale_log, step};
}

Rule build_hermite(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_hermite: zero nodes");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  Eigen::VectorXd off(static_cast<Eigen::Index>(n > 1 ? n - 1 : 0));
  for (Eigen::Index k = 0; k < off.size(); ++k) off(k) = std::sqrt(static_cast<double>(k + 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);

  Rule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  rule.log_weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = solver.eigenvalues()(static_cast<Eigen::Index>(i));
    if (n > 1) {
      for (int it = 0; it < 8; ++it) {
        const double step = eval_hermite(n, x).newton_step;
        x -= step;
        if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
      }
    }
    rule.nodes[i] = x;
    rule.log_weights[i] = -eval_hermite(n, x).log_sum_sq;
  }
  // Symmetrize to remove eigen-solver asymmetry.
  for (std::size_t i = 0; i < n / 2; ++i) {
    const std::size_t j = n - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double lw = 0.5 * (rule.log_weights[i] + rule.log_weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.log_weights[i] = lw;
    rule.log_weights[j] = lw;
  }
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  const double top = *std::max_element(rule.log_weights.begin(), rule.log_weights.end());
  double total = 0.0;
  for (double lw : rule.log_weights) total += std::exp(lw - top);
  const double log_total = top + std::log(total);
  for (std::size_t i = 0; i < n; ++i) {
    rule.log_weights[i] -= log_total;
    rule.weights[i] = std::exp(rule.log_weights[i]);
  }
  return rule;
}

Rule build_legendre(std::size_t n) {
  if (n == 0) throw std::invalid_argument("gauss_legendre: zero nodes");
  Rule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = std::cos(std::numbers::pi * (static_cast<double>(i) + 0.75) / (static_cast<double>(n) + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (std::size_t k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * static_cast<double>(k) - 1.0) * x * p1 - (static_cast<double>(k) - 1.0) * p0) /
                          static_cast<double>(k);
        p0 = p1;
        p1 = p2;
      }
      if (n == 1) {
        p1 = x;
        p0 = 1.0;
      }
      dp = static_cast<double>(n) * (x * p1 - p0) / (x * x - 1.0);
      const double step = p1 / dp;
      x -= step;
      if (std::abs(step) < 1e-16) break;
    }
    rule.nodes[n - 1 - i] = x;
    rule.weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
  return rule;
}

template <class Builder>
const Rule& cached(std::map<std::size_t, std::unique_ptr<Rule>>& cache, std::mutex& mutex, std::size_t n,
                   Builder build) {
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, std::make_unique<Rule>(build(n))).first;
  return *it->second;
}

}  // namespace

const Rule& gauss_hermite(std::size_t n) {
  static std::map<std::size_t, std::unique_ptr<Rule>> cache;
  static std::mutex mutex;
  return cached(cache, mutex, n, build_hermite);
}

const Rule& gauss_legendre(std::size_t n) {
  static std::map<std::size_t, std::unique_ptr<Rule>> cache;
  static std::mutex mutex;
  return cached(cache, mutex, n, build_legendre);
}

}  // namespace landscape::quadrature
