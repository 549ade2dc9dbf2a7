#pragma once

#include <string>
#include <vector>

namespace landscape::activations {

enum class Kind { quadratic, logistic, tanh, softplus, gaussian_bump };

enum class Growth { even, subquadratic, other };

struct Triple {
  double value;
  double d1;
  double d2;
};

/// Bounds over the real line; infinite entries mean unbounded.
struct RangeMeta {
  double min_d1_sq;
  double max_d1_sq;
  double min_y_d1;
  double max_y_d1;
};

/// A built-in C^2 activation with analytic first and second derivatives.
class Activation {
 public:
  explicit Activation(Kind kind);

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  Growth growth() const { return growth_; }
  bool even() const { return kind_ == Kind::quadratic || kind_ == Kind::gaussian_bump; }
  const RangeMeta& range_meta() const { return range_; }

  /// sigma, sigma' and sigma'' share the functionals (y sigma', sigma'^2,
  /// sigma) only for the quadratic.
  bool functionals_coincide() const { return kind_ == Kind::quadratic; }

  Triple eval_triple(double z) const;
  double eval(double z) const { return eval_triple(z).value; }
  double deriv(double z) const { return eval_triple(z).d1; }
  double deriv2(double z) const { return eval_triple(z).d2; }

 private:
  Kind kind_;
  std::string name_;
  Growth growth_;
  RangeMeta range_;
};

/// quadratic | logistic | tanh | softplus | gaussian_bump
Activation from_name(const std::string& name);
std::vector<std::string> builtin_names();

/// (sigma(z) - sigma(z')) sigma'(z)
double theta(const Activation& a, double z, double zp);
/// (sigma(z) - sigma(z')) sigma''(z)
double psi(const Activation& a, double z, double zp);

}  // namespace landscape::activations
