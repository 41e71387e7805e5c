#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "odegrad/chebyshev.hpp"

using namespace odegrad;

namespace {

BaryInterpolant sample_function(int n, double t0, double t1,
                                const std::function<double(double)>& f) {
  ChebyshevGrid grid(n, t0, t1);
  std::vector<Vec> vals;
  for (double tau : grid.nodes()) vals.push_back(Vec{f(tau)});
  return BaryInterpolant(std::move(grid), std::move(vals));
}

}  // namespace

TEST_CASE("grid closed forms") {
  SECTION("N=1 on [-1,1]") {
    ChebyshevGrid g(1, -1.0, 1.0);
    CHECK(g.nodes()[0] == Catch::Approx(0.70711).margin(1e-5));
    CHECK(g.nodes()[1] == Catch::Approx(-0.70711).margin(1e-5));
    CHECK(g.weights()[0] == Catch::Approx(0.70711).margin(1e-5));
    CHECK(g.weights()[1] == Catch::Approx(-0.70711).margin(1e-5));
  }
  SECTION("N=1 on [0,1]") {
    ChebyshevGrid g(1, 0.0, 1.0);
    CHECK(g.nodes()[0] == Catch::Approx(0.85355).margin(1e-5));
    CHECK(g.nodes()[1] == Catch::Approx(0.14645).margin(1e-5));
  }
  SECTION("N=3 weights on [-1,1]") {
    ChebyshevGrid g(3, -1.0, 1.0);
    const double expected[4] = {0.38268, -0.92388, 0.92388, -0.38268};
    for (int i = 0; i < 4; ++i) CHECK(g.weights()[i] == Catch::Approx(expected[i]).margin(1e-5));
  }
  SECTION("weight formula holds exactly for every index") {
    ChebyshevGrid g(9, 0.0, 2.0);
    for (int i = 0; i <= 9; ++i) {
      const double angle = (2.0 * i + 1.0) * std::numbers::pi / 20.0;
      CHECK(g.weights()[i] == ((i % 2 == 0) ? 1.0 : -1.0) * std::sin(angle));
      CHECK(g.nodes()[i] > 0.0);
      CHECK(g.nodes()[i] < 2.0);  // strictly inside the span
    }
  }
  SECTION("invalid arguments") {
    CHECK_THROWS_AS(ChebyshevGrid(0, 0.0, 1.0), Error);
    CHECK_THROWS_AS(ChebyshevGrid(4, 1.0, 1.0), Error);
  }
  SECTION("ascending view reverses both nodes and weights") {
    ChebyshevGrid g(5, 0.0, 1.0);
    const Vec asc = g.ascending_nodes();
    for (std::size_t i = 0; i + 1 < asc.size(); ++i) CHECK(asc[i] < asc[i + 1]);
    CHECK(g.ascending_weights().front() == g.weights().back());
  }
}

TEST_CASE("barycentric evaluation") {
  SECTION("constant node values reproduce the constant") {
    ChebyshevGrid grid(6, 0.0, 2.0);
    std::vector<Vec> vals(7, Vec{3.25, -1.5});
    BaryInterpolant interp(std::move(grid), std::move(vals));
    for (double t : {0.0, 0.123, 1.0, 1.77, 2.0}) {
      const Vec v = interp.eval(t);
      CHECK(v[0] == Catch::Approx(3.25).margin(1e-13));
      CHECK(v[1] == Catch::Approx(-1.5).margin(1e-13));
    }
  }
  SECTION("linear function reproduced at random points") {
    std::mt19937_64 rng(7);
    for (int n : {1, 3, 8}) {
      BaryInterpolant interp = sample_function(n, -2.0, 3.0, [](double t) { return t; });
      std::uniform_real_distribution<double> dist(-2.0, 3.0);
      for (int s = 0; s < 50; ++s) {
        const double t = dist(rng);
        CHECK(std::fabs(interp.eval(t)[0] - t) <= 1e-13 * 3.0);
      }
    }
  }
  SECTION("query at a node returns the stored value bitwise") {
    ChebyshevGrid grid(8, 0.0, 1.0);
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    std::vector<Vec> vals;
    for (int i = 0; i <= 8; ++i) vals.push_back(Vec{dist(rng), dist(rng)});
    const Vec stored = vals[2];
    BaryInterpolant interp(grid, std::move(vals));
    CHECK(interp.eval(grid.nodes()[2]) == stored);
  }
  SECTION("extrapolation refused") {
    BaryInterpolant interp = sample_function(4, 0.0, 1.0, [](double t) { return t * t; });
    CHECK_THROWS_AS(interp.eval(-0.001), Error);
    CHECK_THROWS_AS(interp.eval(1.001), Error);
  }
}

TEST_CASE("partition of unity") {
  for (int n : {1, 4, 16, 32}) {
    ChebyshevGrid grid(n, -1.0, 2.5);
    std::vector<Vec> ones(static_cast<std::size_t>(n + 1), Vec{1.0});
    BaryInterpolant interp(std::move(grid), std::move(ones));
    for (int s = 0; s <= 200; ++s) {
      const double t = -1.0 + 3.5 * s / 200.0;
      CHECK(std::fabs(interp.eval(t)[0] - 1.0) <= 1e-13);
    }
  }
}

TEST_CASE("polynomial reproduction up to degree N") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> coeff(-1.0, 1.0);
  for (int n : {1, 4, 8, 16}) {
    Vec c(static_cast<std::size_t>(n + 1));
    for (double& x : c) x = coeff(rng);
    auto poly = [&c](double t) {
      double acc = 0.0;
      for (std::size_t k = c.size(); k-- > 0;) acc = acc * t + c[k];
      return acc;
    };
    BaryInterpolant interp = sample_function(n, -1.0, 1.0, poly);
    double max_rel = 0.0;
    for (int s = 0; s <= 100; ++s) {
      const double t = -1.0 + 2.0 * s / 100.0;
      const double want = poly(t);
      const double got = interp.eval(t)[0];
      max_rel = std::max(max_rel, std::fabs(got - want) / std::max(1.0, std::fabs(want)));
    }
    CHECK(max_rel <= 1e-12);
  }
}

TEST_CASE("affine invariance of the interpolant") {
  auto f = [](double x) { return std::sin(3.0 * x) + 0.2 * x * x; };
  const double a = 2.0, b = 5.0;
  auto pullback = [&](double tau) { return f((2.0 * tau - (b + a)) / (b - a)); };
  BaryInterpolant on_ab = sample_function(12, a, b, pullback);
  BaryInterpolant on_ref = sample_function(12, -1.0, 1.0, f);
  for (int s = 0; s <= 50; ++s) {
    const double x = -1.0 + 2.0 * s / 50.0;
    const double tau = 0.5 * ((b - a) * x + (b + a));
    CHECK(std::fabs(on_ab.eval(tau)[0] - on_ref.eval(x)[0]) <= 1e-13);
  }
}

TEST_CASE("interp_error measurements") {
  SECTION("reference equal to the interpolant itself") {
    BaryInterpolant interp = sample_function(6, 0.0, 1.0, [](double t) { return t * t * t; });
    const double err = interp_error(
        interp, [&interp](double t) { return interp.eval(t); }, 101);
    CHECK(err <= 1e-13);
  }
  SECTION("geometric decay for the analytic exponential") {
    Vec errs;
    for (int n = 4; n <= 16; ++n) {
      BaryInterpolant interp =
          sample_function(n, 0.0, 4.0, [](double t) { return std::exp(t); });
      errs.push_back(
          interp_error(interp, [](double t) { return Vec{std::exp(t)}; }, 257));
    }
    for (std::size_t i = 0; i + 1 < errs.size(); ++i) CHECK(errs[i + 1] / errs[i] < 1.0);
  }
  SECTION("non-analytic |t| decays much slower") {
    Vec errs_abs, errs_exp;
    for (int n = 4; n <= 14; ++n) {
      BaryInterpolant abs_i =
          sample_function(n, -1.0, 1.0, [](double t) { return std::fabs(t); });
      BaryInterpolant exp_i =
          sample_function(n, -1.0, 1.0, [](double t) { return std::exp(2.0 * t); });
      errs_abs.push_back(
          interp_error(abs_i, [](double t) { return Vec{std::fabs(t)}; }, 257));
      errs_exp.push_back(
          interp_error(exp_i, [](double t) { return Vec{std::exp(2.0 * t)}; }, 257));
    }
    double abs_avg = 0.0, exp_avg = 0.0;
    for (std::size_t i = 0; i + 1 < errs_abs.size(); ++i) {
      abs_avg += errs_abs[i + 1] / errs_abs[i];
      exp_avg += errs_exp[i + 1] / errs_exp[i];
    }
    abs_avg /= static_cast<double>(errs_abs.size() - 1);
    exp_avg /= static_cast<double>(errs_exp.size() - 1);
    CHECK(exp_avg < 0.55);
    CHECK(abs_avg > 0.7);  // visibly slower than geometric
  }
  SECTION("sample count validated") {
    BaryInterpolant interp = sample_function(3, 0.0, 1.0, [](double t) { return t; });
    CHECK_THROWS_AS(interp_error(interp, [](double t) { return Vec{t}; }, 1), Error);
  }
}

TEST_CASE("piecewise interpolants") {
  SECTION("linear midpoint") {
    Vec times{0.0, 1.0};
    std::vector<Vec> vals{{0.0}, {1.0}};
    CHECK(piecewise_eval(PiecewiseKind::kLinear, times, vals, nullptr, 0.5)[0] ==
          Catch::Approx(0.5));
  }
  SECTION("cubic hermite reproduces a cubic exactly") {
    auto p = [](double t) { return 1.0 + 2.0 * t - t * t + 0.5 * t * t * t; };
    auto dp = [](double t) { return 2.0 - 2.0 * t + 1.5 * t * t; };
    Vec times{0.0, 0.4, 1.1, 1.9, 3.0};
    std::vector<Vec> vals, derivs;
    for (double t : times) {
      vals.push_back(Vec{p(t)});
      derivs.push_back(Vec{dp(t)});
    }
    PiecewiseInterpolant interp(PiecewiseKind::kCubicHermite, times, vals, derivs);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> dist(0.0, 3.0);
    for (int s = 0; s < 20; ++s) {
      const double t = dist(rng);
      CHECK(interp.eval(t)[0] == Catch::Approx(p(t)).margin(1e-12));
    }
  }
  SECTION("node values returned exactly") {
    Vec times{0.0, 0.5, 1.0};
    std::vector<Vec> vals{{1.5}, {-2.25}, {0.75}};
    PiecewiseInterpolant interp(PiecewiseKind::kLinear, times, vals);
    CHECK(interp.eval(0.5) == vals[1]);
  }
  SECTION("error paths") {
    Vec times{0.0, 0.5, 0.5};
    std::vector<Vec> vals{{0.0}, {1.0}, {2.0}};
    CHECK_THROWS_AS(PiecewiseInterpolant(PiecewiseKind::kLinear, times, vals), Error);
    Vec ok_times{0.0, 1.0};
    std::vector<Vec> two{{0.0}, {1.0}};
    CHECK_THROWS_AS(PiecewiseInterpolant(PiecewiseKind::kCubicHermite, ok_times, two), Error);
    PiecewiseInterpolant lin(PiecewiseKind::kLinear, ok_times, two);
    CHECK_THROWS_AS(lin.eval(1.5), Error);
  }
}

TEST_CASE("interpolant csv serialization") {
  BaryInterpolant interp = sample_function(3, 0.0, 1.0, [](double t) { return 2.0 * t; });
  const std::string text = interp.to_csv();
  CHECK(std::count(text.begin(), text.end(), '\n') == 5);  // header + 4 nodes
  CHECK(text.rfind("t,z0", 0) == 0);
}
