#include "landscape/activations.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "landscape/errors.hpp"

namespace landscape::activations {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::string kind_name(Kind k) {
  switch (k) {
    case Kind::quadratic: return "quadratic";
    case Kind::logistic: return "logistic";
    case Kind::tanh: return "tanh";
    case Kind::softplus: return "softplus";
    case Kind::gaussian_bump: return "gaussian_bump";
  }
  return "unknown";
}

// Extrema of g over a fine grid, refined by golden-section search around
// the best grid point.
template <class G>
std::pair<double, double> scan_extrema(G g) {
  const double lo = -40.0;
  const double hi = 40.0;
  const int n = 80001;
  const double h = (hi - lo) / (n - 1);
  int imin = 0;
  int imax = 0;
  double vmin = g(lo);
  double vmax = vmin;
  for (int i = 1; i < n; ++i) {
    const double v = g(lo + i * h);
    if (v < vmin) { vmin = v; imin = i; }
    if (v > vmax) { vmax = v; imax = i; }
  }
  auto refine = [&](int i, double sign) {
    double a = lo + std::max(i - 1, 0) * h;
    double b = lo + std::min(i + 1, n - 1) * h;
    const double r = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 100; ++it) {
      const double c = b - r * (b - a);
      const double d = a + r * (b - a);
      if (sign * g(c) > sign * g(d)) b = d; else a = c;
    }
    return g(0.5 * (a + b));
  };
  return {refine(imin, -1.0), refine(imax, 1.0)};
}

}  // namespace

Activation::Activation(Kind kind) : kind_(kind), name_(kind_name(kind)) {
  growth_ = kind == Kind::quadratic ? Growth::even : Growth::subquadratic;
  auto d1_sq = [this](double y) { const double v = eval_triple(y).d1; return v * v; };
  auto y_d1 = [this](double y) { return y * eval_triple(y).d1; };
  const auto [fmin, fmax] = scan_extrema(d1_sq);
  const auto [kmin, kmax] = scan_extrema(y_d1);
  range_ = {fmin, fmax, kmin, kmax};
  switch (kind) {
    case Kind::quadratic: range_ = {0.0, kInf, 0.0, kInf}; break;
    case Kind::softplus: range_.max_y_d1 = kInf; break;
    // sigma'^2 and y sigma' decay to zero at infinity without attaining it
    default: break;
  }
  if (kind == Kind::logistic || kind == Kind::tanh || kind == Kind::softplus) range_.min_d1_sq = 0.0;
}

Triple Activation::eval_triple(double z) const {
  switch (kind_) {
    case Kind::quadratic:
      return {0.5 * z * z, z, 1.0};
    case Kind::logistic: {
      const double s = logistic(z);
      const double d1 = s * (1.0 - s);
      return {s, d1, d1 * (1.0 - 2.0 * s)};
    }
    case Kind::tanh: {
      const double t = std::tanh(z);
      const double e = std::exp(-2.0 * std::abs(z));
      const double sech2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
      return {t, sech2, -2.0 * t * sech2};
    }
    case Kind::softplus: {
      const double v = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
      const double s = logistic(z);
      return {v, s, s * (1.0 - s)};
    }
    case Kind::gaussian_bump: {
      const double g = std::exp(-0.5 * z * z);
      return {g, -z * g, (z * z - 1.0) * g};
    }
  }
  return {0.0, 0.0, 0.0};
}

Activation from_name(const std::string& name) {
  for (Kind k : {Kind::quadratic, Kind::logistic, Kind::tanh, Kind::softplus, Kind::gaussian_bump})
    if (kind_name(k) == name) return Activation(k);
  throw DomainError("unknown activation '" + name + "'");
}

std::vector<std::string> builtin_names() {
  return {"quadratic", "logistic", "tanh", "softplus", "gaussian_bump"};
}

double theta(const Activation& a, double z, double zp) {
  const auto t = a.eval_triple(z);
  return (t.value - a.eval(zp)) * t.d1;
}

double psi(const Activation& a, double z, double zp) {
  const auto t = a.eval_triple(z);
  return (t.value - a.eval(zp)) * t.d2;
}

}  // namespace landscape::activations
