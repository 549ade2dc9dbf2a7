#include <cmath>

#include "doctest.h"
#include "landscape/activations.hpp"

using namespace landscape::activations;

TEST_CASE("closed-form triples") {
  auto q = from_name("quadratic").eval_triple(2.0);
  CHECK(q.value == 2.0);
  CHECK(q.d1 == 2.0);
  CHECK(q.d2 == 1.0);

  auto l = from_name("logistic").eval_triple(0.0);
  CHECK(l.value == doctest::Approx(0.5));
  CHECK(l.d1 == doctest::Approx(0.25));
  CHECK(std::abs(l.d2) < 1e-15);

  auto s = from_name("softplus").eval_triple(0.0);
  CHECK(s.value == doctest::Approx(std::log(2.0)));
  CHECK(s.d1 == doctest::Approx(0.5));
  CHECK(s.d2 == doctest::Approx(0.25));
}

TEST_CASE("derivatives agree with central differences") {
  for (const auto& name : builtin_names()) {
    const auto a = from_name(name);
    for (int i = 0; i <= 100; ++i) {
      const double z = -6.0 + 0.12 * i;
      const double h = 1e-5;
      const double fd1 = (a.eval(z + h) - a.eval(z - h)) / (2 * h);
      const double fd2 = (a.deriv(z + h) - a.deriv(z - h)) / (2 * h);
      CHECK(a.deriv(z) == doctest::Approx(fd1).epsilon(1e-6).scale(1e-4));
      CHECK(a.deriv2(z) == doctest::Approx(fd2).epsilon(1e-6).scale(1e-4));
    }
  }
}

TEST_CASE("stable in the far tails") {
  for (const auto& name : {"logistic", "tanh", "softplus", "gaussian_bump"}) {
    const auto a = from_name(name);
    for (double z : {-800.0, -50.0, 50.0, 800.0}) {
      auto t = a.eval_triple(z);
      CHECK(std::isfinite(t.value));
      CHECK(std::isfinite(t.d1));
      CHECK(std::isfinite(t.d2));
    }
  }
}

TEST_CASE("growth classes and range bounds") {
  CHECK(from_name("quadratic").growth() == Growth::even);
  CHECK(from_name("tanh").growth() == Growth::subquadratic);
  const auto& lg = from_name("logistic").range_meta();
  CHECK(lg.max_d1_sq == doctest::Approx(0.0625).epsilon(1e-9));
  CHECK(lg.min_d1_sq == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lg.max_y_d1 == doctest::Approx(-lg.min_y_d1).epsilon(1e-9));
  CHECK(std::isinf(from_name("quadratic").range_meta().max_y_d1));
  CHECK_THROWS(from_name("relu"));
}

TEST_CASE("quadratic functionals coincide pointwise") {
  const auto a = from_name("quadratic");
  CHECK(a.functionals_coincide());
  CHECK_FALSE(from_name("tanh").functionals_coincide());
  for (double rho : {0.3, 1.0, 2.5})
    for (int i = -20; i <= 20; ++i) {
      const double zeta = 0.3 * i;
      const double y = std::sqrt(rho) * zeta;
      const double a1 = y * a.deriv(y);
      const double a2 = a.deriv(y) * a.deriv(y);
      const double a3 = 2 * a.eval(y);
      CHECK(a1 == doctest::Approx(rho * zeta * zeta));
      CHECK(a2 == doctest::Approx(a1));
      CHECK(a3 == doctest::Approx(a1));
    }
}

TEST_CASE("theta and psi") {
  const auto q = from_name("quadratic");
  const auto l = from_name("logistic");
  CHECK(theta(q, 2, 0) == 4.0);
  CHECK(psi(q, 2, 0) == 2.0);
  CHECK(theta(l, 0.7, 0.7) == 0.0);
  CHECK(psi(l, -1.3, -1.3) == 0.0);
  const double sp1 = 1 / (1 + std::exp(-1.0));
  const double sm1 = 1 / (1 + std::exp(1.0));
  const double d1 = sp1 * (1 - sp1);
  const double d2 = d1 * (1 - 2 * sp1);
  CHECK(theta(l, 1, -1) == doctest::Approx((sp1 - sm1) * d1).epsilon(1e-12));
  CHECK(psi(l, 1, -1) == doctest::Approx((sp1 - sm1) * d2).epsilon(1e-12));
  CHECK(theta(l, 1, -1) == doctest::Approx(0.0908).epsilon(1e-3));
  CHECK(psi(l, 1, -1) == doctest::Approx(-0.0420).epsilon(2e-3));
}
