#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "odegrad/dopri5.hpp"

using namespace odegrad;

namespace {

const auto rhs_zero = [](std::span<const double>, double, std::span<double> dz) {
  std::fill(dz.begin(), dz.end(), 0.0);
};

const auto rhs_exp = [](std::span<const double> z, double, std::span<double> dz) {
  dz[0] = z[0];
};

const auto rhs_rotation = [](std::span<const double> z, double, std::span<double> dz) {
  dz[0] = z[1];
  dz[1] = -z[0];
};

SolverConfig tol(double t) {
  SolverConfig cfg;
  cfg.rtol = t;
  cfg.atol = t;
  return cfg;
}

}  // namespace

TEST_CASE("zero field crosses the span in one accepted step") {
  Vec z0{5.0, -1.0};
  DenseSolution sol = solve(rhs_zero, z0, {0.0, 1.0}, tol(1e-8));
  CHECK(sol.endpoint() == z0);
  CHECK(sol.accepted() == 1);
  CHECK(sol.rejected() == 0);
}

TEST_CASE("exponential growth endpoint") {
  Vec z0{1.0};
  DenseSolution sol = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-8));
  CHECK(sol.endpoint()[0] == Catch::Approx(std::exp(1.0)).margin(1e-6));
}

TEST_CASE("rotation endpoint") {
  Vec z0{1.0, 0.0};
  DenseSolution sol = solve(rhs_rotation, z0, {0.0, std::numbers::pi / 2}, tol(1e-8));
  CHECK(sol.endpoint()[0] == Catch::Approx(0.0).margin(1e-6));
  CHECK(sol.endpoint()[1] == Catch::Approx(-1.0).margin(1e-6));
}

TEST_CASE("dense eval reproduces stored step states exactly") {
  Vec z0{1.0};
  DenseSolution sol = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-8));
  REQUIRE(sol.steps().size() >= 2);
  for (const auto& rec : sol.steps()) {
    CHECK(sol.eval(rec.t) == rec.y);  // bitwise
  }
  CHECK(sol.eval(sol.t_end()) == sol.endpoint());
  CHECK(sol.eval(0.0) == Vec{1.0});
}

TEST_CASE("dense eval at midpoint of exponential") {
  Vec z0{1.0};
  DenseSolution sol = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-8));
  CHECK(sol.eval(0.5)[0] == Catch::Approx(std::sqrt(std::exp(1.0))).margin(1e-7));
}

TEST_CASE("dense eval outside span is refused") {
  Vec z0{1.0};
  DenseSolution sol = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-6));
  CHECK_THROWS_AS(sol.eval(-0.01), Error);
  CHECK_THROWS_AS(sol.eval(1.01), Error);
}

TEST_CASE("fsal nfe accounting") {
  Vec z0{1.0};
  SolverConfig cfg = tol(1e-8);
  cfg.h_init = 0.05;
  DenseSolution sol = solve(rhs_exp, z0, {0.0, 1.0}, cfg);
  CHECK(sol.nfe() == 6 * (sol.accepted() + sol.rejected()) + 1);

  // reruns are identical; dense evaluation costs nothing
  DenseSolution sol2 = solve(rhs_exp, z0, {0.0, 1.0}, cfg);
  CHECK(sol2.nfe() == sol.nfe());
  CHECK(sol2.accepted() == sol.accepted());
  (void)sol2.eval(0.37);
  CHECK(sol2.nfe() == sol.nfe());

  // automatic initial step costs one extra trial evaluation
  DenseSolution sol3 = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-8));
  CHECK(sol3.nfe() == 6 * (sol3.accepted() + sol3.rejected()) + 2);
}

TEST_CASE("endpoint convergence order at least 5 in fixed-step mode") {
  Vec z0{1.0};
  const double exact = std::exp(1.0);
  Vec errs;
  for (long n : {8L, 16L, 32L, 64L}) {
    DenseSolution sol = solve_fixed(rhs_exp, z0, {0.0, 1.0}, n);
    errs.push_back(std::fabs(sol.endpoint()[0] - exact));
    CHECK(sol.nfe() == 6 * n + 1);
  }
  for (std::size_t i = 0; i + 1 < errs.size(); ++i) {
    const double order = std::log2(errs[i] / errs[i + 1]);
    CHECK(order >= 4.8);
  }
}

TEST_CASE("dense output convergence order at least 4 off the step points") {
  Vec z0{1.0};
  DenseSolution ref = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-12));
  Vec errs;
  for (long n : {8L, 16L, 32L}) {
    DenseSolution sol = solve_fixed(rhs_exp, z0, {0.0, 1.0}, n);
    double worst = 0.0;
    for (int s = 0; s <= 100; ++s) {
      const double t = s / 100.0;
      worst = std::max(worst, std::fabs(sol.eval(t)[0] - ref.eval(t)[0]));
    }
    errs.push_back(worst);
  }
  for (std::size_t i = 0; i + 1 < errs.size(); ++i) {
    const double order = std::log2(errs[i] / errs[i + 1]);
    CHECK(order >= 3.8);
  }
}

TEST_CASE("solve_with_outputs") {
  Vec z0{1.0};
  SECTION("output at t0 returns z0 exactly") {
    Vec t_out{0.0};
    auto [sol, states] = solve_with_outputs(rhs_exp, z0, {0.0, 1.0}, tol(1e-8), t_out);
    CHECK(states[0] == z0);
  }
  SECTION("outputs at accepted step times return stored states exactly") {
    DenseSolution probe = solve(rhs_exp, z0, {0.0, 1.0}, tol(1e-8));
    Vec t_out;
    for (const auto& rec : probe.steps()) t_out.push_back(rec.t);
    auto [sol, states] = solve_with_outputs(rhs_exp, z0, {0.0, 1.0}, tol(1e-8), t_out);
    REQUIRE(states.size() == probe.steps().size());
    for (std::size_t i = 0; i < states.size(); ++i) CHECK(states[i] == probe.steps()[i].y);
    // output times never change the step sequence or the cost
    CHECK(sol.nfe() == probe.nfe());
    CHECK(sol.accepted() == probe.accepted());
  }
  SECTION("chebyshev-style interior outputs match the analytic solution") {
    Vec t_out;
    for (int i = 8; i >= 0; --i)
      t_out.push_back(0.5 + 0.5 * std::cos((2.0 * i + 1.0) * std::numbers::pi / 18.0));
    auto [sol, states] = solve_with_outputs(rhs_exp, z0, {0.0, 1.0}, tol(1e-8), t_out);
    for (std::size_t i = 0; i < t_out.size(); ++i)
      CHECK(states[i][0] == Catch::Approx(std::exp(t_out[i])).margin(1e-7));
  }
  SECTION("unsorted or out-of-span output times are refused") {
    Vec bad_order{0.5, 0.2};
    CHECK_THROWS_AS(solve_with_outputs(rhs_exp, z0, {0.0, 1.0}, tol(1e-8), bad_order), Error);
    Vec outside{1.5};
    CHECK_THROWS_AS(solve_with_outputs(rhs_exp, z0, {0.0, 1.0}, tol(1e-8), outside), Error);
  }
}

TEST_CASE("backward span integrates cleanly") {
  // contractive forward becomes expansive when reversed; the solve must
  // either succeed or fail with a structured error, never crash
  const auto rhs_decay = [](std::span<const double> z, double, std::span<double> dz) {
    dz[0] = -z[0];
  };
  Vec z1{std::exp(-1.0)};
  DenseSolution sol = solve(rhs_decay, z1, {1.0, 0.0}, tol(1e-8));
  CHECK(sol.endpoint()[0] == Catch::Approx(1.0).margin(1e-6));
  CHECK(sol.t_start() == 1.0);
  CHECK(sol.t_end() == 0.0);
  // dense eval inside a reversed span
  CHECK(sol.eval(0.5)[0] == Catch::Approx(std::exp(-0.5)).margin(1e-6));
}

TEST_CASE("max_steps failure carries the partial solution") {
  SolverConfig cfg = tol(1e-10);
  cfg.max_steps = 5;
  Vec z0{1.0};
  try {
    solve(rhs_exp, z0, {0.0, 1.0}, cfg);
    FAIL("expected max-steps failure");
  } catch (const SolveError& e) {
    CHECK(e.kind() == ErrorKind::MaxStepsExceeded);
    CHECK(e.partial().accepted() <= 5);
    CHECK(e.partial().endpoint().size() == 1);
    CHECK(e.partial().t_end() < 1.0);
  }
}

TEST_CASE("finite-time blowup surfaces as a structured error") {
  // dz/dt = z^2 from z0=1 blows up at t=1
  const auto rhs_sq = [](std::span<const double> z, double, std::span<double> dz) {
    dz[0] = z[0] * z[0];
  };
  Vec z0{1.0};
  SolverConfig cfg = tol(1e-8);
  cfg.max_steps = 100000;
  CHECK_THROWS_AS(solve(rhs_sq, z0, {0.0, 2.0}, cfg), SolveError);
}

TEST_CASE("invalid inputs") {
  Vec z0{1.0};
  CHECK_THROWS_AS(solve(rhs_exp, z0, {0.0, 0.0}, tol(1e-8)), Error);
  Vec bad{std::nan("")};
  CHECK_THROWS_AS(solve(rhs_exp, bad, {0.0, 1.0}, tol(1e-8)), Error);
  SolverConfig cfg;
  cfg.rtol = -1.0;
  CHECK_THROWS_AS(solve(rhs_exp, z0, {0.0, 1.0}, cfg), Error);
}

TEST_CASE("csv dump has one row per accepted step") {
  Vec z0{1.0, 2.0};
  DenseSolution sol = solve(rhs_rotation, z0, {0.0, 1.0}, tol(1e-6));
  const std::string text = sol.to_csv();
  const auto rows = std::count(text.begin(), text.end(), '\n');
  CHECK(rows == sol.accepted() + 1);  // header + steps
  CHECK(text.substr(0, 8) == "t,h,y0,y");
}
