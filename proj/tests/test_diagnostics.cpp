#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "odegrad/diagnostics.hpp"

using namespace odegrad;

namespace {

SolverConfig tol(double t) {
  SolverConfig cfg;
  cfg.rtol = t;
  cfg.atol = t;
  cfg.max_steps = 1000000;
  return cfg;
}

Matrix random_matrix(std::mt19937_64& rng, int n, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix a(n, n);
  for (double& v : a.data) v = dist(rng);
  return a;
}

Vec random_unit(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vec v(static_cast<std::size_t>(n));
  for (double& x : v) x = dist(rng);
  scale(v, 1.0 / norm2(v));
  return v;
}

}  // namespace

TEST_CASE("log_norm unit values") {
  Matrix diag(2, 2);
  diag(0, 0) = -1.0;
  diag(1, 1) = -3.0;
  CHECK(log_norm(diag) == Catch::Approx(-1.0).margin(1e-12));

  Matrix skew(2, 2);
  skew(0, 1) = 1.0;
  skew(1, 0) = -1.0;
  CHECK(log_norm(skew) == Catch::Approx(0.0).margin(1e-12));

  Matrix upper(2, 2);
  upper(0, 1) = 2.0;
  CHECK(log_norm(upper) == Catch::Approx(1.0).margin(1e-12));

  Matrix rect(2, 3);
  CHECK_THROWS_AS(log_norm(rect), Error);
}

TEST_CASE("log_norm subadditivity and scaling") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix a = random_matrix(rng, 5, 2.0);
    const Matrix b = random_matrix(rng, 5, 2.0);
    Matrix sum(5, 5);
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] = a.data[i] + b.data[i];
    CHECK(log_norm(sum) <= log_norm(a) + log_norm(b) + 1e-10);

    std::uniform_real_distribution<double> alpha_dist(0.0, 3.0);
    const double alpha = alpha_dist(rng);
    Matrix scaled(5, 5);
    for (std::size_t i = 0; i < scaled.data.size(); ++i) scaled.data[i] = alpha * a.data[i];
    CHECK(std::fabs(log_norm(scaled) - alpha * log_norm(a)) <= 1e-12 * std::max(1.0, alpha));
  }
}

TEST_CASE("growth bound for the constant linear family") {
  // ||z(t)|| <= ||z0|| exp(mu[A] (t - t0)) for dz/dt = A z
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = random_matrix(rng, 4, 1.0);
    const double mu = log_norm(a);
    VectorField f = linear_field(a);
    Vec z0 = random_unit(rng, 4);
    auto rhs = [&f](std::span<const double> z, double t, std::span<double> dz) {
      f.eval_value(z, t, dz);
    };
    DenseSolution sol = solve(rhs, z0, {0.0, 2.0}, tol(1e-10));
    for (int s = 0; s <= 100; ++s) {
      const double t = 2.0 * s / 100.0;
      const double measured = norm2(sol.eval(t));
      const double bound = std::exp(mu * t);
      CHECK(measured <= bound * (1.0 + 1e-8));
    }
  }
}

TEST_CASE("adjoint norm bound") {
  SECTION("zero field: bound stays at the seed norm") {
    OdeProblem problem{scalar_linear_field(0.0), Vec{1.0}, 0.0, 1.0, tol(1e-8)};
    auto rhs = [&problem](std::span<const double> z, double t, std::span<double> dz) {
      problem.field.eval_value(z, t, dz);
    };
    DenseSolution sol = solve(rhs, problem.z0, {0.0, 1.0}, problem.cfg);
    BoundSamples b = adjoint_norm_bound(problem, sol, Vec{2.5}, 33);
    for (double v : b.value) CHECK(v == Catch::Approx(2.5).margin(1e-12));
  }
  SECTION("constant contraction matches the closed-form exponential") {
    // theta = -1: mu[J] = -1; integrating the comparison ODE from t1 down
    // gives exp(mu (t1 - t)) so the closed form is exp(theta (t1 - t))
    const double theta = -1.0;
    OdeProblem problem{scalar_linear_field(theta), Vec{1.0}, 0.0, 1.0, tol(1e-8)};
    auto rhs = [&problem](std::span<const double> z, double t, std::span<double> dz) {
      problem.field.eval_value(z, t, dz);
    };
    DenseSolution sol = solve(rhs, problem.z0, {0.0, 1.0}, problem.cfg);
    BoundSamples b = adjoint_norm_bound(problem, sol, Vec{1.0}, 65);
    CHECK(b.value.back() == Catch::Approx(1.0).margin(1e-12));  // at t1
    for (std::size_t k = 0; k < b.t.size(); ++k) {
      const double closed = std::exp(theta * (1.0 - b.t[k]));
      CHECK(b.value[k] == Catch::Approx(closed).margin(1e-9));
    }
    // the scalar adjoint saturates the bound: a(t) = exp(theta (t1 - t))
    DenseSolution aug = rdm_augmented_solve(problem.field, sol.endpoint(), Vec{1.0}, 1.0, 0.0,
                                            problem.cfg, RecordMode::kDense);
    for (std::size_t k = 0; k < b.t.size(); ++k) {
      const Vec u = aug.eval(b.t[k]);
      CHECK(std::fabs(u[1]) <= b.value[k] * (1.0 + 1e-7));
    }
  }
  SECTION("bound dominates the measured adjoint on seeded mlp problems") {
    for (std::uint64_t s = 201; s <= 205; ++s) {
      auto rng = make_rng(s);
      OdeProblem problem{mlp_field(4, 6, s), Vec(4), 0.0, 1.5, tol(1e-8)};
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (double& v : problem.z0) v = dist(rng);
      const Vec seed = random_unit(rng, 4);
      auto rhs = [&problem](std::span<const double> z, double t, std::span<double> dz) {
        problem.field.eval_value(z, t, dz);
      };
      DenseSolution sol = solve(rhs, problem.z0, {0.0, 1.5}, problem.cfg);
      BoundSamples b = adjoint_norm_bound(problem, sol, seed, 101);
      // measured adjoint from an actual backward solve (the full rdm system)
      DenseSolution aug = rdm_augmented_solve(problem.field, sol.endpoint(), seed, 1.5, 0.0,
                                              problem.cfg, RecordMode::kDense);
      for (std::size_t k = 0; k < b.t.size(); ++k) {
        const Vec u = aug.eval(b.t[k]);
        double na = 0.0;
        for (int i = 0; i < 4; ++i) na += u[4 + i] * u[4 + i];
        CHECK(std::sqrt(na) <= b.value[k] * 1.1);
      }
    }
  }
}

TEST_CASE("delta-a bound") {
  SECTION("constant trajectory: interpolation exact, bound identically zero") {
    Matrix zero(2, 2);
    OdeProblem problem{linear_field(zero), Vec{1.0, -2.0}, 0.0, 1.0, tol(1e-8)};
    auto rhs = [&problem](std::span<const double> z, double t, std::span<double> dz) {
      problem.field.eval_value(z, t, dz);
    };
    DenseSolution sol = solve(rhs, problem.z0, {0.0, 1.0}, problem.cfg);
    ForwardArtifacts art = forward(problem, MethodConfig::irdm(6));
    BoundSamples b = delta_a_bound(problem, sol, *art.bli, Vec{1.0, 0.5}, 33);
    CHECK(b.value.back() == 0.0);  // at t1
    for (double v : b.value) CHECK(std::fabs(v) <= 1e-12);
  }
  SECTION("zero seed: zero adjoint, zero bound") {
    OdeProblem problem{mlp_field(2, 4, 7), Vec{0.3, -0.4}, 0.0, 1.0, tol(1e-8)};
    auto rhs = [&problem](std::span<const double> z, double t, std::span<double> dz) {
      problem.field.eval_value(z, t, dz);
    };
    DenseSolution sol = solve(rhs, problem.z0, {0.0, 1.0}, problem.cfg);
    ForwardArtifacts art = forward(problem, MethodConfig::irdm(6));
    BoundSamples b = delta_a_bound(problem, sol, *art.bli, Vec{0.0, 0.0}, 33);
    for (double v : b.value) CHECK(std::fabs(v) <= 1e-14);
  }
  SECTION("bound dominates the measured perturbation on seeded mlp problems") {
    for (std::uint64_t s = 301; s <= 305; ++s) {
      auto rng = make_rng(s);
      OdeProblem problem{mlp_field(4, 6, s), Vec(4), 0.0, 2.0, tol(1e-9)};
      std::uniform_real_distribution<double> dist(-1.0, 1.0);
      for (double& v : problem.z0) v = dist(rng);
      const LossSeed seed{random_unit(rng, 4)};
      // small N so the interpolation error dominates solver noise
      BoundReport rep = bound_report(problem, 4, seed, 101, tol(1e-11));
      for (std::size_t k = 0; k < rep.t.size(); ++k) {
        CHECK(rep.measured_delta_a[k] <= rep.delta_a_bound_v[k] * 1.1 + 1e-12);
        CHECK(rep.measured_a_norm[k] <= rep.a_norm_bound[k] * 1.1);
      }
      CHECK(rep.delta_a_bound_v.back() == 0.0);
      CHECK(rep.interp_error_max > 0.0);
    }
  }
}

TEST_CASE("gradient error measurements") {
  SECTION("self-comparison of the direct method is exact") {
    OdeProblem problem{mlp_field(2, 4, 3), Vec{0.2, 0.6}, 0.0, 1.0, tol(1e-7)};
    GradientErrorReport rep =
        gradient_error(problem, MethodConfig::direct(), LossSeed{Vec{1.0, -1.0}}, problem.cfg);
    CHECK(rep.l1 <= 1e-12);
    CHECK(rep.l2 <= 1e-12);
  }
  SECTION("linear field against the analytic gradient") {
    OdeProblem problem{scalar_linear_field(1.0), Vec{1.0}, 0.0, 1.0, tol(1e-8)};
    for (const auto& m :
         {MethodConfig::direct(), MethodConfig::rdm(), MethodConfig::irdm(16),
          MethodConfig::checkpoint(8)}) {
      GradientErrorReport rep = gradient_error(problem, m, LossSeed{Vec{1.0}}, tol(1e-10));
      CHECK(rep.method_result.dl_dtheta.values()[0] ==
            Catch::Approx(std::exp(1.0)).margin(1e-5));
      CHECK(rep.l1 <= 1e-5);
    }
  }
  SECTION("irdm error decreases as the tolerance tightens") {
    OdeProblem problem{mlp_field(3, 8, 55), Vec{0.5, -0.2, 0.1}, 0.0, 2.0, tol(1e-3)};
    const LossSeed seed{Vec{1.0, 0.3, -0.8}};
    Vec errs;
    for (double t : {1e-3, 1e-5, 1e-7}) {
      problem.cfg = tol(t);
      errs.push_back(gradient_error(problem, MethodConfig::irdm(16), seed, tol(1e-9)).l1);
    }
    CHECK(errs[1] < errs[0]);
    CHECK(errs[2] < errs[1]);
  }
  SECTION("looser reference than method is rejected") {
    OdeProblem problem{scalar_linear_field(0.5), Vec{1.0}, 0.0, 1.0, tol(1e-8)};
    CHECK_THROWS_AS(
        gradient_error(problem, MethodConfig::direct(), LossSeed{Vec{1.0}}, tol(1e-6)), Error);
  }
}

TEST_CASE("finite-difference oracle unit cases") {
  SECTION("zero-parameter linear field") {
    OdeProblem problem{scalar_linear_field(0.0), Vec{1.0}, 0.0, 1.0, tol(1e-8)};
    ParamVector g = fd_gradient(problem, LossSeed{Vec{1.0}}, 1e-5);
    CHECK(g.values()[0] == Catch::Approx(1.0).margin(1e-6));
  }
  SECTION("bias-driven constant field component") {
    // f = W z + b with z0 = 0: dL/db = 1 exactly for L = z(1)
    Architecture arch;
    arch.state_dim = 1;
    arch.layers.push_back({LayerKind::Affine, 1, 1, true});
    VectorField f(arch, 0);
    ParamVector p(arch.param_layout());
    p.segment("L0.b")[0] = 0.7;
    f.set_params(p);
    OdeProblem problem{std::move(f), Vec{0.0}, 0.0, 1.0, tol(1e-8)};
    ParamVector g = fd_gradient(problem, LossSeed{Vec{1.0}}, 1e-5);
    CHECK(g.values()[1] == Catch::Approx(1.0).margin(1e-8));  // the bias slot
  }
  SECTION("oracle agrees with the direct method on an mlp problem") {
    OdeProblem problem{mlp_field(3, 5, 111), Vec{0.2, 0.4, -0.6}, 0.0, 1.0, tol(1e-10)};
    const LossSeed seed{Vec{0.5, 1.0, -0.3}};
    const Vec fd = fd_gradient(problem, seed, 1e-5).values();
    const Vec direct = grad(problem, MethodConfig::direct(), seed).dl_dtheta.values();
    for (std::size_t i = 0; i < fd.size(); ++i)
      CHECK(std::fabs(fd[i] - direct[i]) <= 1e-4 * std::max(1.0, std::fabs(direct[i])));
  }
  SECTION("invalid step") {
    OdeProblem problem{scalar_linear_field(0.1), Vec{1.0}, 0.0, 1.0, tol(1e-8)};
    CHECK_THROWS_AS(fd_gradient(problem, LossSeed{Vec{1.0}}, 0.0), Error);
  }
}

TEST_CASE("mixed hessian norm estimate") {
  SECTION("scalar linear field gives one") {
    VectorField f = scalar_linear_field(2.0);
    CHECK(hessian_mixed_norm_estimate(f, Vec{0.7}, 0.0) == Catch::Approx(1.0).margin(1e-3));
  }
  SECTION("cubic field at the origin gives zero") {
    Matrix a(2, 2);
    a(0, 0) = -1.0;
    a(1, 1) = -1.0;
    VectorField f = cubic_field(a);
    CHECK(hessian_mixed_norm_estimate(f, Vec{0.0, 0.0}, 0.0) <= 1e-6);
  }
  SECTION("stable under halving the fd step") {
    VectorField f = mlp_field(3, 6, 13);
    Vec z{0.4, -0.2, 0.7};
    const double h = 1e-4 * (1.0 + norm2(z));
    const double full = hessian_mixed_norm_estimate(f, z, 0.0, h);
    const double half = hessian_mixed_norm_estimate(f, z, 0.0, h / 2.0);
    CHECK(std::fabs(full - half) <= 0.05 * std::fabs(full));
  }
}

TEST_CASE("bound report csv and factor summary") {
  OdeProblem problem{mlp_field(2, 4, 19), Vec{0.5, -0.5}, 0.0, 1.0, tol(1e-8)};
  BoundReport rep = bound_report(problem, 6, LossSeed{Vec{1.0, 1.0}}, 33, tol(1e-10));
  const std::string text = rep.to_csv();
  CHECK(std::count(text.begin(), text.end(), '\n') == 34);
  CHECK(text.rfind("t,measured_a_norm,a_norm_bound,measured_delta_a,delta_a_bound", 0) == 0);
  CHECK(rep.measured_e_l1 >= 0.0);
  CHECK(rep.mu_integral != 0.0);
  // the remaining error-bound factors are measured, not assumed
  CHECK(rep.dfdtheta_norm_max > 0.0);
  CHECK(rep.mixed_hessian_estimate > 0.0);
  for (double v : rep.a_norm_bound) CHECK(v >= 0.0);
  for (double v : rep.delta_a_bound_v) CHECK(v >= 0.0);
}
