#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "landscape/activations.hpp"
#include "landscape/errors.hpp"
#include "landscape/resolvent.hpp"
#include "support/sampling.hpp"

using namespace landscape;
using namespace landscape::resolvent;
using activations::from_name;

namespace {

const spectra::SpectralModel& identity() {
  static const auto m = spectra::from_named(spectra::parse_spectrum("identity"));
  return m;
}

KernelLaw unit_kernel() { return {{1.0}, {1.0}}; }

// (1/d) sum log|z - lambda_i|
double sampled_log_abs(const Eigen::VectorXd& ev, cplx z) {
  double s = 0;
  for (Eigen::Index i = 0; i < ev.size(); ++i) s += std::log(std::abs(z - ev(i)));
  return s / static_cast<double>(ev.size());
}

}  // namespace

TEST_CASE("Marchenko–Pastur fixed point") {
  const cplx z(5.0, 0.01);
  const auto s = solve_fixed_point(z, unit_kernel(), identity(), 2.0);
  CHECK(s.residual < 1e-10);
  CHECK(s.herglotz);
  // Closed-form Stieltjes transform (1/d) tr (z - H)^{-1} of MP with c = d/m = 1/2.
  const double c = 0.5;
  cplx root = std::sqrt((z - 1.0 - c) * (z - 1.0 - c) - 4.0 * c);
  if ((root / z).real() < 0) root = -root;
  const cplx g = (z - 1.0 + c - root) / (2.0 * c * z);
  CHECK(std::abs(stieltjes(s, z) - g) < 1e-8);

  std::mt19937_64 rng(1);
  const auto ev = testsupport::wishart_eigs(Eigen::MatrixXd::Identity(1000, 1000), 2000, [](double) { return 1.0; }, rng);
  CHECK(std::abs(free_energy(s, z, unit_kernel(), identity(), 2.0) - sampled_log_abs(ev, z)) < 0.01);
}

TEST_CASE("stationarity and large-z asymptotics") {
  const auto a = from_name("tanh");
  tilted::TiltedMeasure1D m(a, 1.0, 3.0, 1.0 / 3.0, {});
  const auto k = m.kernel_law();
  const auto ar = spectra::from_named(spectra::parse_spectrum("ar1:0.5:128"));
  const cplx z(2.0, 0.01);
  const auto s = solve_fixed_point(z, k, ar, 3.0);
  CHECK(stationarity_residual(s, z, k, ar, 3.0) < 1e-10);
  // Re G is stationary in both variables: first differences vanish to O(h^2).
  const double v0 = free_energy(s, z, k, ar, 3.0);
  for (cplx h : {cplx(1e-5, 0), cplx(0, 1e-5)}) {
    auto sp = s;
    sp.phi += h;
    auto sm = s;
    sm.phi -= h;
    CHECK(std::abs(free_energy(sp, z, k, ar, 3.0) - free_energy(sm, z, k, ar, 3.0)) / 2e-5 < 1e-8);
    sp = s;
    sp.phibar += h;
    sm = s;
    sm.phibar -= h;
    CHECK(std::abs(free_energy(sp, z, k, ar, 3.0) - free_energy(sm, z, k, ar, 3.0)) / 2e-5 < 1e-8);
  }
  CHECK(std::isfinite(v0));

  const KernelLaw zero{{0.0}, {1.0}};
  const cplx big(1e6, 1.0);
  const auto sb = solve_fixed_point(big, zero, identity(), 2.0);
  CHECK(std::abs(free_energy(sb, big, zero, identity(), 2.0) - std::log(1e6)) < 1e-5);
  for (double r : {1e3, 1e4}) {
    const cplx zz(r, 1.0);
    const auto st = solve_fixed_point(zz, k, ar, 3.0);
    const double gap = free_energy(st, zz, k, ar, 3.0) - std::log(std::abs(zz));
    CHECK(std::abs(gap) < 3.0 / r);
  }
  CHECK_THROWS_AS(solve_fixed_point(cplx(1, 0), k, ar, 3.0), DomainError);
}

TEST_CASE("free energy at the origin of the order parameters") {
  tilted::TiltedMeasure1D m(from_name("logistic"), 1.0, 2.0, 0.5, {});
  FixedPointState s{0.0, 0.0, 0, 0, true};
  CHECK(free_energy_rm(s, 1.0, 0.0, m, identity(), 2.0) == doctest::Approx(0.0).scale(1e-14));
  CHECK(free_energy_rm(s, std::numbers::e, 0.0, m, identity(), 2.0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("log-potential of the Marchenko–Pastur law") {
  const auto far = log_potential(100.0, unit_kernel(), identity(), 2.0);
  // log k - E lambda / k - E lambda^2 / (2 k^2), E lambda = 1, E lambda^2 = 1.5
  CHECK(far.value == doctest::Approx(std::log(100.0) - 0.01 - 0.75e-4).epsilon(1e-6));
  CHECK(std::abs(far.value - 4.5952) < 2e-3);

  // Inside the bulk: compare with E log|lambda - 1| by direct quadrature
  // of the density (theta substitution, many nodes around the log singularity).
  const auto mp = spectra::from_named(spectra::parse_spectrum("mp:2:20000"));
  const double exact = mp.expect([](double l) { return std::log(std::abs(l - 1.0)); });
  const auto in = log_potential(1.0, unit_kernel(), identity(), 2.0);
  CHECK(std::abs(in.value - exact) < 2e-3);
  CHECK_FALSE(in.flagged);

  std::mt19937_64 rng(2);
  double acc = 0;
  for (int r = 0; r < 4; ++r) {
    const auto ev = testsupport::wishart_eigs(Eigen::MatrixXd::Identity(800, 800), 1600, [](double) { return 1.0; }, rng);
    acc += sampled_log_abs(ev, 1.0) / 4;
  }
  CHECK(std::abs(in.value - acc) < 0.02);
}

TEST_CASE("log-potential at zero for a positive kernel") {
  const auto a = from_name("softplus");
  tilted::TiltedMeasure1D m(a, 1.0, 3.0, 1.0 / 3.0, {});
  const auto lp = log_potential(0.0, m, identity(), 3.0);
  std::mt19937_64 rng(3);
  double acc = 0;
  for (int r = 0; r < 3; ++r) {
    const auto ev = testsupport::wishart_eigs(Eigen::MatrixXd::Identity(600, 600), 1800,
                                              [&](double x) { return a.deriv2(x); }, rng);
    CHECK(ev.minCoeff() > 0.0);
    acc += sampled_log_abs(ev, 0.0) / 3;
  }
  CHECK(std::abs(lp.value - acc) < 0.02);
}

TEST_CASE("Richardson extrapolation") {
  // V(eps) = 2 + 3 eps is extrapolated exactly.
  std::vector<std::pair<double, double>> s;
  for (double e : default_schedule()) s.emplace_back(e, 2 + 3 * e);
  const auto ex = richardson(s);
  CHECK(ex.value == doctest::Approx(2.0).epsilon(1e-13));
  CHECK(ex.error < 1e-12);
  CHECK_FALSE(ex.flagged);
  s = {{1e-2, 0.0}, {5e-3, 0.1}, {2.5e-3, 0.4}};
  CHECK(richardson(s).flagged);
}

TEST_CASE("two-dataset resolvent") {
  const auto id_pairs = spectra::JointSpectralModel({{1.0, 1.0, 1.0}}, 1);
  SUBCASE("inert second dataset reduces to one dataset") {
    tilted::TiltedMeasure1D m(from_name("logistic"), 1.0, 3.0, 1.0 / 3.0, {});
    const auto g = spectra::ar1_matrix(0.5, 64);
    const auto joint = spectra::JointSpectralModel::from_matrices(g, Eigen::MatrixXd::Identity(64, 64));
    REQUIRE(joint.has_pairs());
    TwoMatrixProblem pr{m.kernel_law(), {{0.0}, {1.0}}, &joint, 3.0, 1.5, 3.0};
    const cplx z(0.7, 0.01);
    const auto two = solve_two_matrix(z, pr);
    const auto gm = spectra::from_matrix(g, "g");
    const auto one = solve_fixed_point(z, m.kernel_law(), gm, 2.0);
    CHECK(two.value == doctest::Approx(free_energy(one, z, m.kernel_law(), gm, 2.0)).epsilon(1e-8));
    const auto grad = two_matrix_gradient(two, z, pr);
    for (const auto& gcomp : grad) CHECK(std::abs(gcomp) < 1e-8);
  }
  SUBCASE("difference of two white Wisharts") {
    TwoMatrixProblem pr{unit_kernel(), unit_kernel(), &id_pairs, 2.0, 2.0, 2.0};
    const cplx z(4.0, 0.01);
    const auto s = solve_two_matrix(z, pr);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    const int d = 1000;
    Eigen::MatrixXd x1(d, d), x2(d, d);
    for (int j = 0; j < d; ++j)
      for (int i = 0; i < d; ++i) {
        x1(i, j) = n01(rng);
        x2(i, j) = n01(rng);
      }
    Eigen::MatrixXd h = (x1 * x1.transpose() - x2 * x2.transpose()) / double(d);
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues();
    CHECK(std::abs(s.value - sampled_log_abs(ev, z)) < 0.02);
    CHECK_THROWS_AS(solve_two_matrix(z, TwoMatrixProblem{unit_kernel(), unit_kernel(), &id_pairs, 2.0, 2.0, 3.0}),
                    DomainError);
  }
  SUBCASE("correlated first dataset through the finite-dimensional path") {
    const auto t = from_name("tanh");
    tilted::TiltedMeasure1D m(t, 1.0, 2.0, 0.5, {});
    const int d = 256;
    const Eigen::MatrixXd g = spectra::ar1_matrix(0.5, d);
    const auto joint = spectra::JointSpectralModel::finite_dimensional(g, Eigen::MatrixXd::Identity(d, d));
    TwoMatrixProblem pr{m.kernel_law(), m.kernel_law(), &joint, 2.0, 2.0, 2.0};
    const cplx z(3.0, 0.01);
    const auto s = solve_two_matrix(z, pr);
    const auto grad = two_matrix_gradient(s, z, pr);
    for (const auto& gcomp : grad) CHECK(std::abs(gcomp) < 1e-8);
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd rg = testsupport::sqrtm(g);
    double acc = 0;
    const int draws = 10;
    for (int r = 0; r < draws; ++r) {
      std::normal_distribution<double> n01;
      Eigen::MatrixXd x1(d, d), x2(d, d);
      Eigen::VectorXd k1(d), k2(d);
      for (int j = 0; j < d; ++j) {
        for (int i = 0; i < d; ++i) {
          x1(i, j) = n01(rng);
          x2(i, j) = n01(rng);
        }
        k1(j) = t.deriv2(n01(rng));
        k2(j) = t.deriv2(n01(rng));
      }
      const Eigen::MatrixXd y1 = rg * x1;
      Eigen::MatrixXd h = (y1 * k1.asDiagonal() * y1.transpose() - x2 * k2.asDiagonal() * x2.transpose()) / double(d);
      const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(h, Eigen::EigenvaluesOnly).eigenvalues();
      acc += sampled_log_abs(ev, z) / draws;
    }
    CHECK(std::abs(s.value - acc) < 0.03);
  }
}
