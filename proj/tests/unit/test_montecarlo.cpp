#include <cmath>

#include "doctest.h"
#include "landscape/errors.hpp"
#include "landscape/montecarlo.hpp"
#include "landscape/spectra.hpp"
#include "support/sampling.hpp"

using namespace landscape;
using namespace landscape::montecarlo;
using activations::Activation;
using activations::Kind;

TEST_CASE("loss derivatives agree with central differences") {
  const int d = 5;
  const Eigen::MatrixXd sigma = spectra::ar1_matrix(0.3, d);
  const Eigen::VectorXd ws = Eigen::VectorXd::Unit(d, 1);
  const Dataset planted = sample_planted(sigma, ws, 11, 7);
  const Dataset two = sample_two_datasets(sigma, Eigen::MatrixXd::Identity(d, d), 6, 9, 8);
  const Loss losses[] = {Loss(LossKind::L, planted, Activation(Kind::softplus)),
                         Loss(LossKind::L1, planted, Activation(Kind::tanh)),
                         Loss(LossKind::L2, two, Activation(Kind::logistic), Activation(Kind::gaussian_bump))};
  Eigen::VectorXd w(d);
  w << 0.3, -0.5, 0.2, 0.7, -0.1;
  for (const auto& loss : losses) {
    double v;
    Eigen::VectorXd g;
    Eigen::MatrixXd h;
    loss.derivatives(w, v, g, h);
    CHECK(v == doctest::Approx(loss.value(w)).epsilon(1e-14));
    const double e = 1e-5;
    for (int i = 0; i < d; ++i) {
      const Eigen::VectorXd u = Eigen::VectorXd::Unit(d, i) * e;
      CHECK(g(i) == doctest::Approx((loss.value(w + u) - loss.value(w - u)) / (2 * e)).epsilon(1e-7));
      double vp, vm;
      Eigen::VectorXd gp, gm;
      Eigen::MatrixXd hp, hm;
      loss.derivatives(w + u, vp, gp, hp);
      loss.derivatives(w - u, vm, gm, hm);
      const Eigen::VectorXd col = (gp - gm) / (2 * e);
      CHECK((h.col(i) - col).norm() <= 1e-6 * (1.0 + col.norm()));
    }
  }
}

TEST_CASE("quadratic critical points are the eigenvectors") {
  for (int d : {4, 8}) {
    const Dataset ds = sample_dataset(Eigen::MatrixXd::Identity(d, d), 2 * d, 100 + d);
    const Loss loss(LossKind::L, ds, Activation(Kind::quadratic));
    const auto en = find_critical_points(loss, default_restarts(d), 3);
    REQUIRE(en.points.size() == static_cast<std::size_t>(2 * d));
    const Eigen::MatrixXd c = ds.data * ds.data.transpose() / ds.m();
    const Eigen::VectorXd ev = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(c).eigenvalues();
    for (int i = 0; i < d; ++i) {
      // Both signs of each eigenvector, sorted by loss.
      CHECK(std::abs(en.points[2 * i].loss - ev(i) / 2) < 1e-8);
      CHECK(std::abs(en.points[2 * i + 1].loss - ev(i) / 2) < 1e-8);
      CHECK(en.points[2 * i].index == i);
    }
    for (const auto& p : en.points) {
      CHECK(p.grad_norm <= 1e-10);
      CHECK(std::abs(p.w.norm() - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("Morse sums on the sphere") {
  const Activation logistic(Kind::logistic);
  const Dataset d3 = sample_dataset(Eigen::MatrixXd::Identity(3, 3), 12, 21);
  const Dataset d4 = sample_dataset(Eigen::MatrixXd::Identity(4, 4), 12, 22);
  const auto e3 = enumerate_saturated(Loss(LossKind::L, d3, logistic), default_restarts(3), 3, 5);
  const auto e4 = enumerate_saturated(Loss(LossKind::L, d4, logistic), default_restarts(4), 3, 5);
  CHECK(e3.saturated);
  CHECK(e4.saturated);
  CHECK(e3.result.euler_sum() == 2);
  CHECK(e4.result.euler_sum() == 0);
}

TEST_CASE("even activation pairs antipodal critical points") {
  const Dataset ds = sample_dataset(spectra::ar1_matrix(0.5, 4), 8, 31);
  const Loss loss(LossKind::L, ds, Activation(Kind::gaussian_bump));
  REQUIRE(loss.even());
  const auto en = find_critical_points(loss, default_restarts(4), 9);
  REQUIRE(en.points.size() % 2 == 0);
  for (const auto& p : en.points) {
    const auto it = std::find_if(en.points.begin(), en.points.end(),
                                 [&](const CriticalPoint& q) { return (q.w + p.w).norm() < 1e-8; });
    REQUIRE(it != en.points.end());
    CHECK(it->loss == doctest::Approx(p.loss).epsilon(1e-12));
    CHECK(it->index == p.index);
  }
}

TEST_CASE("seeded enumeration is reproducible") {
  const Dataset a = sample_dataset(Eigen::MatrixXd::Identity(3, 3), 6, 77);
  const Dataset b = sample_dataset(Eigen::MatrixXd::Identity(3, 3), 6, 77);
  CHECK(a.data == b.data);
  const Loss la(LossKind::L, a, Activation(Kind::tanh)), lb(LossKind::L, b, Activation(Kind::tanh));
  const auto ea = find_critical_points(la, 500, 4), eb = find_critical_points(lb, 500, 4);
  REQUIRE(ea.points.size() == eb.points.size());
  for (std::size_t i = 0; i < ea.points.size(); ++i) CHECK(ea.points[i].w == eb.points[i].w);
  CHECK_THROWS_AS(find_critical_points(Loss(LossKind::L, sample_dataset(Eigen::MatrixXd::Identity(13, 13), 26, 1),
                                            Activation(Kind::tanh)),
                                       10, 1),
                  DomainError);
}

TEST_CASE("empirical counts for the quadratic loss") {
  CountConfig cfg;
  cfg.activation = Activation(Kind::quadratic);
  cfg.restarts_per_d2 = 50;
  const std::vector<double> edges{0.0, 0.5, 1.0, 1.5, 2.0, 10.0};
  const auto e = empirical_complexity(cfg, {4, 6}, 3, edges);
  for (const auto& s : e.samples) {
    CHECK(s.total == 2 * s.d);
    int sum = 0;
    for (int c : s.per_bin) sum += c;
    CHECK(sum == s.total);
  }
  for (const auto& r : e.rows) CHECK(r.mean_count > 0.0);
  const auto mode = modal_bin(e, 4);
  REQUIRE(mode.has_value());
  CHECK(mode->log_count_over_d == doctest::Approx(std::log(mode->mean_count) / 4));
}

TEST_CASE("Hessian log-determinant") {
  HessianConfig cfg;
  cfg.d = 400;
  cfg.seed = 11;
  // Marchenko–Pastur with c = d/m = 1/2: E log lambda = -1 - ((1 - c)/c) log(1 - c).
  const double c = 0.5;
  const auto at0 = hessian_logdet_mc(cfg, 0.0, 5);
  CHECK(std::abs(at0.mean - (-1.0 - (1.0 - c) / c * std::log(1.0 - c))) < 0.01);
  cfg.d = 50;
  const auto far = hessian_logdet_mc(cfg, 1e6, 3);
  CHECK(std::abs(far.mean - std::log(1e6)) < 1e-4);
  const auto again = hessian_logdet_mc(cfg, 1e6, 3);
  CHECK(again.mean == far.mean);
}

TEST_CASE("sphere overlaps") {
  const auto id = sample_sphere_overlaps(Eigen::MatrixXd::Identity(10, 10), 50, 3);
  for (const auto& o : id) {
    CHECK(o.rho == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(o.q == doctest::Approx(1.0).epsilon(1e-14));
  }
  Eigen::VectorXd diag(64);
  for (int i = 0; i < 64; ++i) diag(i) = i < 32 ? 0.5 : 2.0;
  const Eigen::MatrixXd sigma = diag.asDiagonal();
  const auto two = sample_sphere_overlaps(sigma, 2000, 4);
  testsupport::Accumulator rho, q;
  for (const auto& o : two) {
    rho.add(o.rho);
    q.add(o.q);
    CHECK(o.rho * o.q >= 1.0 - 1e-12);
  }
  CHECK(std::abs(rho.result().mean - 1.25) <= 3 * rho.result().se);
  CHECK(std::abs(q.result().mean - 1.25) <= 3 * q.result().se);
}
