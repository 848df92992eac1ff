#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "pdzd/dynamics.hpp"
#include "pdzd/plants.hpp"
#include "pdzd/probing.hpp"
#include "pdzd/random.hpp"
#include "pdzd/sets.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace pdzd;

namespace {

VectorXd scalar_vec(double v) {
  VectorXd out(1);
  out << v;
  return out;
}

SolverParams unit_params(int m, double alpha = 1e-3) {
  SolverParams p;
  p.k_x = 1.0;
  p.k_lambda = 1.0;
  p.alpha_x = alpha;
  p.alpha_lambda = alpha;
  p.dual_set = ProjectableSet::nonnegative_orthant(m);
  return p;
}

// small strongly convex QP with one affine constraint, feasible box
Plant small_qp() {
  MatrixXd Q(2, 2);
  Q << 2, 0, 0, 2;
  VectorXd c(2);
  c << 1, 1;
  MatrixXd A(1, 2);
  A << -1, -1;  // x1 + x2 >= 1
  VectorXd b(1);
  b << -1;
  return qp_plant(Q, c, A, b, ProjectableSet::box(VectorXd::Zero(2), VectorXd::Ones(2)));
}

}  // namespace

TEST_CASE("lagrangian evaluation") {
  REQUIRE(lagrangian(1.0, scalar_vec(0.0), scalar_vec(5.0)) == 1.0);
  VectorXd g(2), lam(2);
  g << 2, -1;
  lam << 1, 3;
  REQUIRE(lagrangian(1.0, g, lam) == 0.0);
  REQUIRE(lagrangian(0.0, scalar_vec(0.0), scalar_vec(2.0), 0.5) == -1.0);
  REQUIRE_THROWS_AS(lagrangian(0.0, g, scalar_vec(1.0)), std::invalid_argument);
}

TEST_CASE("ppdgd interior step is a scaled gradient step") {
  // f = x^2 on [-1, 1], x = 0.5: projection is the identity
  SolverState s = SolverState::zero(1, 0);
  s.x << 0.5;
  Gradients g;
  g.grad_f = scalar_vec(2.0 * 0.5);
  g.grad_g = MatrixXd(0, 1);
  g.g = VectorXd(0);
  const auto d = ppdgd_rhs(s, g, unit_params(0), ProjectableSet::box1d(-1, 1));
  REQUIRE(d.x(0) == Catch::Approx(-0.001).epsilon(1e-12));
  REQUIRE(d.lambda.size() == 0);
}

TEST_CASE("ppdgd vanishes at the oracle optimum") {
  const Plant plant = small_qp();
  SolverState s = SolverState::zero(plant.n, plant.m);
  s.x = *plant.optimum;
  s.lambda = *plant.multipliers;
  const auto d =
      ppdgd_rhs(s, plant.gradients(s.x, 0.0), unit_params(plant.m, 0.05), plant.primal_set);
  REQUIRE(std::sqrt(d.x.squaredNorm() + d.lambda.squaredNorm()) < 1e-12);
}

TEST_CASE("ppdgd on the boundary projects the update") {
  // f = x^2 at x = -1: gradient -2 pushes outward, projection clips
  SolverState s = SolverState::zero(1, 0);
  s.x << -1.0;
  Gradients g;
  g.grad_f = scalar_vec(-2.0);
  g.grad_g = MatrixXd(0, 1);
  g.g = VectorXd(0);
  SolverParams p = unit_params(0);
  p.k_x = 3.0;
  const auto d = ppdgd_rhs(s, g, p, ProjectableSet::box1d(-1, 1));
  REQUIRE(d.x(0) == Catch::Approx(3.0 * 0.002).epsilon(1e-12));
}

TEST_CASE("ppdzd with settled filters reduces to the dual gradient") {
  const ProbingPlan plan(SignalKind::Square, 0.025, 0.025, {Rational(27, 10)});
  SolverParams p = unit_params(2);
  p.k_lambda = 10.0;
  SolverState s = SolverState::zero(1, 2);
  s.x << 0.4;
  s.lambda << 0.3, 0.2;  // interior of the orthant
  Feedback fb;
  fb.f_val = 0.7;
  fb.g_vals = (VectorXd(2) << -0.01, 0.02).finished();
  s.mu = fb.g_vals;  // mu settled on g
  const auto shrunk = ProjectableSet::box1d(-1, 1).shrink(plan.eps_a());
  const auto d = ppdzd_rhs(s, fb, 0.37, p, plan, shrunk);
  REQUIRE(d.lambda(0) == Catch::Approx(10.0 * 1e-3 * -0.01).epsilon(1e-12));
  REQUIRE(d.lambda(1) == Catch::Approx(10.0 * 1e-3 * 0.02).epsilon(1e-12));
  REQUIRE(d.mu.norm() == 0.0);
}

TEST_CASE("ppdzd is quiescent at the origin with zero feedback") {
  const ProbingPlan plan(SignalKind::Square, 0.025, 0.025, {Rational(27, 10)});
  SolverState s = SolverState::zero(1, 1);
  Feedback fb;
  fb.f_val = 0.0;
  fb.g_vals = scalar_vec(0.0);
  const auto shrunk = ProjectableSet::box1d(-1, 1).shrink(plan.eps_a());
  const auto d = ppdzd_rhs(s, fb, 1.23, unit_params(1), plan, shrunk);
  REQUIRE(d.x.norm() == 0.0);
  REQUIRE(d.lambda.norm() == 0.0);
  REQUIRE(d.xi.norm() == 0.0);
  REQUIRE(d.mu.norm() == 0.0);
}

TEST_CASE("ppdzd matches an independent scalar transcription") {
  // hand transcription of the four update equations at one instant
  const double eps_a = 0.025, eps_w = 0.025, eps_g = 0.025;
  const double ax = 0.001, al = 0.001, kx = 50.0, kl = 10.0;
  const ProbingPlan plan(SignalKind::Square, eps_a, eps_w,
                         {Rational(27, 10), Rational(21, 5)});
  SolverParams p;
  p.k_x = kx;
  p.k_lambda = kl;
  p.alpha_x = ax;
  p.alpha_lambda = al;
  p.eps_g = eps_g;
  p.dual_set = ProjectableSet::nonnegative_orthant(1);

  SolverState s = SolverState::zero(2, 1);
  s.x << 0.3, -0.5;
  s.lambda << 0.7;
  s.xi << 1.1, -0.4;
  s.mu << 0.2;
  Feedback fb;
  fb.f_val = 0.9;
  fb.g_vals = scalar_vec(-0.3);
  const double t = 0.0133;

  const auto shrunk =
      ProjectableSet::box(VectorXd::Constant(2, -2.0), VectorXd::Constant(2, 2.5))
          .shrink(eps_a);
  const auto d = ppdzd_rhs(s, fb, t, p, plan, shrunk);

  const double eta = 1.0;  // square wave
  const double two_pi = 6.283185307179586476925286766559;
  const auto sq = [&](double u) {
    double w = std::fmod(u, two_pi);
    if (w < 0) w += two_pi;
    return w < 0.5 * two_pi ? 1.0 : -1.0;
  };
  const double d1 = sq(two_pi * 2.7 / eps_w * t);
  const double d2 = sq(two_pi * 4.2 / eps_w * t);
  const double demod = (0.9 + 0.7 * -0.3) / (eps_a * eta);
  const auto clamp = [](double v, double lo, double hi) {
    return std::min(hi, std::max(lo, v));
  };

  REQUIRE(d.x(0) ==
          Catch::Approx(kx * (clamp(0.3 - ax * 1.1, -1.975, 2.475) - 0.3)).epsilon(1e-12));
  REQUIRE(d.x(1) ==
          Catch::Approx(kx * (clamp(-0.5 - ax * -0.4, -1.975, 2.475) + 0.5)).epsilon(1e-12));
  REQUIRE(d.lambda(0) ==
          Catch::Approx(kl * (std::max(0.0, 0.7 + al * 0.2) - 0.7)).epsilon(1e-12));
  REQUIRE(d.xi(0) == Catch::Approx((demod * d1 - 1.1) / eps_g).epsilon(1e-12));
  REQUIRE(d.xi(1) == Catch::Approx((demod * d2 + 0.4) / eps_g).epsilon(1e-12));
  REQUIRE(d.mu(0) == Catch::Approx((-0.3 - 0.2) / eps_g).epsilon(1e-12));
}

TEST_CASE("dppdgd at interior points is the plain gradient flow") {
  const Plant plant = small_qp();
  SolverState s = SolverState::zero(2, 1);
  s.x << 0.5, 0.9;  // strict interior, constraint slack
  s.lambda << 0.2;
  const auto g = plant.gradients(s.x, 0.0);
  const auto d = dppdgd_rhs(s, g, unit_params(1), plant.primal_set);
  const VectorXd expected = -(g.grad_f + g.grad_g.transpose() * s.lambda);
  REQUIRE((d.x - expected).norm() < 1e-14);
}

TEST_CASE("dppdgd clips the dual at the orthant boundary") {
  SolverState s = SolverState::zero(1, 1);
  s.x << 0.0;
  s.lambda << 0.0;
  Gradients g;
  g.grad_f = scalar_vec(0.0);
  g.grad_g = MatrixXd::Zero(1, 1);
  g.g = scalar_vec(-0.5);  // inactive constraint pushes lambda negative
  const auto d = dppdgd_rhs(s, g, unit_params(1), ProjectableSet::box1d(-1, 1));
  REQUIRE(d.lambda(0) == 0.0);
}

TEST_CASE("dppdgd on a box face matches the finite-difference oracle") {
  CounterRng rng(71);
  const auto box =
      ProjectableSet::box(VectorXd::Constant(3, -1.0), VectorXd::Constant(3, 1.0));
  for (int trial = 0; trial < 50; ++trial) {
    VectorXd raw(3), grad(3);
    for (int i = 0; i < 3; ++i) {
      raw(i) = 3.0 * (2.0 * rng.next_uniform() - 1.0);
      grad(i) = 2.0 * (2.0 * rng.next_uniform() - 1.0);
    }
    const VectorXd x = box.project_point(raw);
    SolverState s = SolverState::zero(3, 0);
    s.x = x;
    Gradients g;
    g.grad_f = grad;
    g.grad_g = MatrixXd(0, 3);
    g.g = VectorXd(0);
    const auto d = dppdgd_rhs(s, g, unit_params(0), box);
    const double delta = 1e-8;
    const VectorXd fd = (box.project_point(x - delta * grad) - x) / delta;
    REQUIRE((d.x - fd).norm() < 1e-5);
  }
}

TEST_CASE("dppdzd mirrors ppdzd filter dynamics with cone-projected states") {
  const ProbingPlan plan(SignalKind::Square, 0.025, 0.025, {Rational(27, 10)});
  SolverParams p = unit_params(1);
  SolverState s = SolverState::zero(1, 1);
  s.x << 0.0;  // on the shrunken box lower face
  s.xi << 1.0;
  Feedback fb;
  fb.f_val = 0.4;
  fb.g_vals = scalar_vec(-0.1);
  const auto shrunk = ProjectableSet::box1d(-0.025, 1).shrink(0.025);
  const auto dc = dppdzd_rhs(s, fb, 0.0, p, plan, shrunk);
  // -xi = -1 points below the active lower face at 0: clipped
  REQUIRE(dc.x(0) == 0.0);
  const auto cont = ppdzd_rhs(s, fb, 0.0, p, plan, shrunk);
  REQUIRE(dc.xi(0) == cont.xi(0));
  REQUIRE(dc.mu(0) == cont.mu(0));
}

TEST_CASE("kkt residual: unconstrained quadratic at its minimum") {
  Gradients g;
  g.grad_f = scalar_vec(0.0);
  g.grad_g = MatrixXd(0, 1);
  g.g = VectorXd(0);
  const auto r =
      kkt_residual(g, ProjectableSet::box1d(-10, 10), scalar_vec(0.0), VectorXd(0));
  REQUIRE(r.max_component() == 0.0);
}

TEST_CASE("kkt residual: active constraint with balancing multiplier") {
  // min x s.t. x >= 1 on a wide box; optimum x* = 1, lambda* = 1
  const auto wide = ProjectableSet::box1d(-100, 100);
  Gradients g;
  g.grad_f = scalar_vec(1.0);
  g.grad_g = MatrixXd::Constant(1, 1, -1.0);
  g.g = scalar_vec(0.0);  // g(1) = 1 - x = 0
  const auto at_opt = kkt_residual(g, wide, scalar_vec(1.0), scalar_vec(1.0));
  REQUIRE(at_opt.max_component() < 1e-14);

  const auto unbalanced = kkt_residual(g, wide, scalar_vec(1.0), scalar_vec(0.0));
  REQUIRE(unbalanced.stationarity == Catch::Approx(1.0));
}

TEST_CASE("gradient estimate oracle is exact for quadratics under sinusoids") {
  const ProbingPlan plan(SignalKind::Sinusoid, 0.1, kTwoPi, {Rational(1, 1)});
  const auto eval = [](const VectorXd& x) {
    Feedback fb;
    fb.f_val = x(0) * x(0);
    fb.g_vals = VectorXd(0);
    return fb;
  };
  const VectorXd est = gradient_estimate_oracle(eval, scalar_vec(1.0), VectorXd(0), plan);
  REQUIRE(est(0) == Catch::Approx(2.0).margin(1e-9));
}

TEST_CASE("gradient estimate oracle kills constants") {
  const ProbingPlan plan(SignalKind::Square, 0.05, 0.025,
                         {Rational(27, 10), Rational(21, 5)});
  const auto eval = [](const VectorXd&) {
    Feedback fb;
    fb.f_val = 3.7;
    fb.g_vals = VectorXd(0);
    return fb;
  };
  const VectorXd est = gradient_estimate_oracle(eval, VectorXd::Zero(2), VectorXd(0), plan);
  REQUIRE(est.lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("gradient estimate error shrinks superlinearly for even signals") {
  const auto eval = [](const VectorXd& x) {
    Feedback fb;
    fb.f_val = std::pow(x(0), 4);
    fb.g_vals = VectorXd(0);
    return fb;
  };
  const auto err = [&](double eps_a) {
    const ProbingPlan plan(SignalKind::Sinusoid, eps_a, kTwoPi, {Rational(1, 1)});
    const VectorXd est = gradient_estimate_oracle(eval, scalar_vec(1.0), VectorXd(0), plan);
    return std::fabs(est(0) - 4.0);
  };
  const double e1 = err(0.1), e2 = err(0.05);
  REQUIRE(e1 / e2 >= 3.0);
}

TEST_CASE("estimator includes the weighted constraint feedback") {
  // f + lambda' g with g = x: estimate approaches grad f + lambda
  const ProbingPlan plan(SignalKind::Sinusoid, 0.05, kTwoPi, {Rational(1, 1)});
  const auto eval = [](const VectorXd& x) {
    Feedback fb;
    fb.f_val = x(0) * x(0);
    fb.g_vals = x;
    return fb;
  };
  const VectorXd est = gradient_estimate_oracle(eval, scalar_vec(1.0), scalar_vec(2.0), plan);
  REQUIRE(est(0) == Catch::Approx(4.0).margin(1e-9));
}

TEST_CASE("saddle flow dissipation inequality on random instances") {
  // (z - z* + a h(z))' f(z) <= -||f||^2 - a (z - z*)' h(z), unit gains
  CounterRng rng(101);
  int instances = 0;
  while (instances < 1000) {
    const int n = 2 + static_cast<int>(rng.next_uniform() * 3) % 3;
    const int m = 1 + static_cast<int>(rng.next_uniform() * 2) % 2;
    MatrixXd B(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = 2.0 * rng.next_uniform() - 1.0;
    const MatrixXd Q = B.transpose() * B + 0.5 * MatrixXd::Identity(n, n);
    VectorXd c(n);
    for (int i = 0; i < n; ++i) c(i) = 2.0 * rng.next_uniform() - 1.0;
    MatrixXd A(m, n);
    for (int j = 0; j < m; ++j)
      for (int i = 0; i < n; ++i) A(j, i) = 2.0 * rng.next_uniform() - 1.0;
    VectorXd b = A * VectorXd::Zero(n);
    for (int j = 0; j < m; ++j) b(j) += 0.2 + rng.next_uniform();
    Plant plant;
    try {
      plant = qp_plant(Q, c, A, b,
                       ProjectableSet::box(VectorXd::Constant(n, -2.0),
                                           VectorXd::Constant(n, 2.0)));
    } catch (const std::exception&) {
      continue;  // infeasible draw
    }
    ++instances;

    const double alpha = 0.1 + rng.next_uniform();
    SolverParams p = unit_params(m, alpha);
    SolverState z = SolverState::zero(n, m);
    for (int i = 0; i < n; ++i) z.x(i) = 2.0 * (2.0 * rng.next_uniform() - 1.0);
    z.x = plant.primal_set.project_point(z.x);
    for (int j = 0; j < m; ++j) z.lambda(j) = 2.0 * rng.next_uniform();

    const Gradients g = plant.gradients(z.x, 0.0);
    const auto d = ppdgd_rhs(z, g, p, plant.primal_set);

    VectorXd fz(n + m), hz(n + m), dz(n + m);
    fz << d.x, d.lambda;
    hz << g.grad_f + g.grad_g.transpose() * z.lambda, -g.g;
    dz << z.x - *plant.optimum, z.lambda - *plant.multipliers;
    const double lhs = (dz + alpha * hz).dot(fz);
    const double rhs = -fz.squaredNorm() - alpha * dz.dot(hz);
    REQUIRE(lhs <= rhs + 1e-9);
  }
}

TEST_CASE("filter states converge to the averaged estimate") {
  // freeze (x, lambda), integrate the fast filters alone, then compare the
  // one-period average of xi with the quadrature oracle
  const ProbingPlan plan(SignalKind::Sinusoid, 0.05, 0.002,
                         {Rational(1, 1), Rational(2, 1)});
  const double eps_g = 0.05;
  const auto eval = [](const VectorXd& x) {
    Feedback fb;
    fb.f_val = (x(0) - 1.0) * (x(0) - 1.0) + 0.5 * x(1) * x(1);
    fb.g_vals = VectorXd(0);
    return fb;
  };
  const VectorXd x0 = (VectorXd(2) << 0.2, 0.8).finished();
  const VectorXd oracle = gradient_estimate_oracle(eval, x0, VectorXd(0), plan);

  VectorXd xi = VectorXd::Zero(2);
  const double h = 1e-5;
  const double t_settle = 10.0 * eps_g;
  double t = 0.0;
  const auto step = [&](double tt) {
    const VectorXd xhat = x0 + plan.eps_a() * plan.probe_vector(tt);
    const double demod = eval(xhat).f_val / (plan.eps_a() * plan.eta());
    xi += h * (demod * plan.probe_vector(tt) - xi) / eps_g;
  };
  for (; t < t_settle; t += h) step(t);
  const double period = plan.common_period();
  VectorXd avg = VectorXd::Zero(2);
  long count = 0;
  for (; t < t_settle + period; t += h) {
    step(t);
    avg += xi;
    ++count;
  }
  avg /= static_cast<double>(count);
  REQUIRE((avg - oracle).norm() < 0.01 * oracle.norm() + 2.0 * plan.eps_a());
}

TEST_CASE("rhs functions validate dimensions and finiteness") {
  const ProbingPlan plan(SignalKind::Square, 0.025, 0.025, {Rational(27, 10)});
  SolverState s = SolverState::zero(1, 1);
  Feedback bad;
  bad.f_val = std::numeric_limits<double>::quiet_NaN();
  bad.g_vals = scalar_vec(0.0);
  const auto shrunk = ProjectableSet::box1d(-1, 1).shrink(0.025);
  REQUIRE_THROWS_AS(ppdzd_rhs(s, bad, 0.0, unit_params(1), plan, shrunk),
                    std::invalid_argument);
  Feedback wrong;
  wrong.f_val = 0.0;
  wrong.g_vals = VectorXd::Zero(3);
  REQUIRE_THROWS_AS(ppdzd_rhs(s, wrong, 0.0, unit_params(1), plan, shrunk),
                    std::invalid_argument);
}
