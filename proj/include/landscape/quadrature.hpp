#pragma once

#include <cstddef>
#include <vector>

namespace landscape::quadrature {

/// Nodes and weights of a one-dimensional quadrature rule.
struct Rule {
  std::vector<double> nodes;
  std::vector<double> weights;
  std::vector<double> log_weights;  // Gauss–Hermite only; finite where weights underflow

  std::size_t size() const { return nodes.size(); }
};

/// Gauss–Hermite rule for the standard normal weight: sum_i w_i g(x_i)
/// approximates E[g(X)], X ~ N(0,1). Weights sum to one.
/// Rules are cached per node count; returned references stay valid for the
/// lifetime of the program and may be shared between threads.
const Rule& gauss_hermite(std::size_t n);

/// Gauss–Legendre rule on [-1, 1]; weights sum to two.
const Rule& gauss_legendre(std::size_t n);

}  // namespace landscape::quadrature
