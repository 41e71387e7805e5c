#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "odegrad/chebyshev.hpp"
#include "odegrad/csv.hpp"
#include "odegrad/dopri5.hpp"
#include "odegrad/errors.hpp"
#include "odegrad/field.hpp"
#include "odegrad/strategies.hpp"
#include "odegrad/vec.hpp"

namespace odegrad {

// Logarithmic norm in the 2-norm: largest eigenvalue of the symmetric part.
inline double log_norm(const Matrix& a) {
  if (a.rows != a.cols) throw Error(ErrorKind::DimensionMismatch, "log_norm needs a square matrix");
  if (!all_finite(a.data)) throw Error(ErrorKind::NonFinite, "log_norm of non-finite matrix");
  Eigen::MatrixXd sym(a.rows, a.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < a.cols; ++j) sym(i, j) = 0.5 * (a(i, j) + a(j, i));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

struct BoundSamples {
  Vec t;      // ascending sample times, endpoints included
  Vec value;  // bound evaluated at each sample
};

namespace detail {

// Cosine-spaced sample grid on [t0, t1] (endpoints exact); clusters where
// polynomial interpolation error concentrates. Quadrature below is composite
// trapezoid over these abscissae.
inline Vec quad_grid(double t0, double t1, int q) {
  if (q < 2) throw Error(ErrorKind::InvalidArgument, "quad_points must be >= 2");
  Vec t(static_cast<std::size_t>(q));
  for (int k = 0; k < q; ++k) {
    const double c = std::cos(std::numbers::pi * static_cast<double>(k) / (q - 1));
    t[k] = t0 + 0.5 * (1.0 - c) * (t1 - t0);
  }
  t.front() = t0;
  t.back() = t1;
  return t;
}

}  // namespace detail

// Upper bound on the adjoint norm along the backward pass:
//   ||a(t)|| <= ||seed|| * exp( int_t^{t1} mu[J(tau)] dtau ),  J = df/dz
// evaluated along the given forward solution. This is the log-norm bound for
// the time-reversed adjoint system; the sign of the exponent follows from
// integrating the scalar comparison ODE from t1 down to t. Samples are
// returned on the quadrature grid, with bound(t1) == ||seed||.
inline BoundSamples adjoint_norm_bound(const OdeProblem& problem, const DenseSolution& sol,
                                       std::span<const double> seed, int quad_points = 129) {
  problem.validate();
  if (sol.t_start() != problem.t0 || sol.t_end() != problem.t1)
    throw Error(ErrorKind::InvalidArgument, "solution does not span the problem");
  BoundSamples out;
  out.t = detail::quad_grid(problem.t0, problem.t1, quad_points);
  const int q = quad_points;
  Vec mu(static_cast<std::size_t>(q));
  for (int k = 0; k < q; ++k)
    mu[k] = log_norm(problem.field.jacobian_state(sol.eval(out.t[k]), out.t[k]));
  // cumulative trapezoid of mu from the right end
  Vec integral(static_cast<std::size_t>(q), 0.0);
  for (int k = q - 2; k >= 0; --k)
    integral[k] = integral[k + 1] + 0.5 * (mu[k] + mu[k + 1]) * (out.t[k + 1] - out.t[k]);
  const double seed_norm = norm2(seed);
  out.value.resize(static_cast<std::size_t>(q));
  for (int k = 0; k < q; ++k) out.value[k] = seed_norm * std::exp(integral[k]);
  return out;
}

// Upper bound on the adjoint perturbation caused by interpolated states:
//   ||da(t)|| <= xi(t),
//   xi(t) = int_t^{t1} exp( int_t^{tau} mu[J(u)] du ) * ||atil(tau)^T (Jtil - J)(tau)|| dtau,
// with J at reference states (the tight solution), Jtil at interpolated
// states, and atil the adjoint of the interpolated backward solve. Computed
// right-to-left with the integrating-factor recurrence; xi(t1) == 0 and
// xi >= 0 everywhere.
inline BoundSamples delta_a_bound(const OdeProblem& problem, const DenseSolution& sol,
                                  const BaryInterpolant& interp, std::span<const double> seed,
                                  int quad_points = 129) {
  problem.validate();
  if (sol.t_start() != problem.t0 || sol.t_end() != problem.t1)
    throw Error(ErrorKind::InvalidArgument, "solution does not span the problem");
  if (interp.grid().t0() != problem.t0 || interp.grid().t1() != problem.t1)
    throw Error(ErrorKind::InvalidArgument, "interpolant span mismatch");

  const int d = problem.field.state_dim();
  BoundSamples out;
  out.t = detail::quad_grid(problem.t0, problem.t1, quad_points);
  const int q = quad_points;

  // adjoint of the interpolated backward solve, kept dense for sampling
  auto z_interp = [&interp](double t, Vec& buf) { interp.eval_into(t, buf); };
  DenseSolution atil_sol = reduced_adjoint_solve(problem.field, z_interp, seed, problem.t1,
                                                 problem.t0, problem.cfg, RecordMode::kDense);

  Vec mu(static_cast<std::size_t>(q));
  Vec r(static_cast<std::size_t>(q));
  Vec atil_full(static_cast<std::size_t>(d + problem.field.param_dim()));
  for (int k = 0; k < q; ++k) {
    const double t = out.t[k];
    const Matrix j_ref = problem.field.jacobian_state(sol.eval(t), t);
    const Matrix j_til = problem.field.jacobian_state(interp.eval(t), t);
    mu[k] = log_norm(j_ref);
    atil_sol.eval_into(t, atil_full);
    const std::span<const double> atil(atil_full.data(), static_cast<std::size_t>(d));
    r[k] = norm2(vec_mat(atil, j_til - j_ref));
  }

  out.value.assign(static_cast<std::size_t>(q), 0.0);
  for (int k = q - 2; k >= 0; --k) {
    const double dt = out.t[k + 1] - out.t[k];
    const double dm = 0.5 * (mu[k] + mu[k + 1]) * dt;
    const double ef = std::exp(dm);
    out.value[k] = ef * out.value[k + 1] + 0.5 * dt * (r[k] + ef * r[k + 1]);
  }
  return out;
}

struct GradientErrorReport {
  double l1 = 0.0;
  double l2 = 0.0;
  Vec componentwise;
  GradientResult method_result;
  GradientResult reference_result;
};

// Gradient error of a method against the direct (discrete-adjoint) run at a
// tighter tolerance, the same ground truth the tolerance/grid sweeps use.
inline GradientErrorReport gradient_error(const OdeProblem& problem, const MethodConfig& mcfg,
                                          const LossSeed& seed, const SolverConfig& reference_cfg) {
  if (reference_cfg.rtol > problem.cfg.rtol || reference_cfg.atol > problem.cfg.atol)
    throw Error(ErrorKind::InvalidArgument,
                "reference tolerances must be at least as tight as the method's");
  OdeProblem ref_problem = problem;
  ref_problem.cfg = reference_cfg;
  GradientErrorReport rep;
  rep.reference_result = grad(ref_problem, MethodConfig::direct(), seed);
  rep.method_result = grad(problem, mcfg, seed);
  const Vec& a = rep.method_result.dl_dtheta.values();
  const Vec& b = rep.reference_result.dl_dtheta.values();
  rep.componentwise.resize(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) rep.componentwise[i] = std::fabs(a[i] - b[i]);
  rep.l1 = norm1(rep.componentwise);
  rep.l2 = norm2(rep.componentwise);
  return rep;
}

namespace detail {

inline SolverConfig oracle_cfg() {
  SolverConfig cfg;
  cfg.rtol = 1e-10;
  cfg.atol = 1e-10;
  cfg.max_steps = 1000000;
  return cfg;
}

inline double terminal_loss(const VectorField& field, const Vec& z0, double t0, double t1,
                            std::span<const double> seed) {
  auto rhs = [&field](std::span<const double> z, double t, std::span<double> dz) {
    field.eval_value(z, t, dz);
  };
  DenseSolution sol = solve(rhs, z0, {t0, t1}, oracle_cfg(), RecordMode::kEndpointOnly);
  const double loss = dot(seed, sol.endpoint());
  if (!std::isfinite(loss)) throw Error(ErrorKind::NonFinite, "non-finite loss in fd oracle");
  return loss;
}

}  // namespace detail

// Central finite differences of the scalar loss seed^T z(t1) through
// tolerance-1e-10 solves, one pair per parameter. Independent of every
// adjoint path above; used as the ground-truth oracle.
inline ParamVector fd_gradient(const OdeProblem& problem, const LossSeed& seed, double h) {
  problem.validate();
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "fd step must be positive");
  ParamVector grad = problem.field.zero_cotangent();
  Vec theta = problem.field.params().values();
  VectorField work(problem.field.arch(), problem.field.params());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double orig = theta[i];
    theta[i] = orig + h;
    work.set_param_values(theta);
    const double up = detail::terminal_loss(work, problem.z0, problem.t0, problem.t1, seed.dl_dz1);
    theta[i] = orig - h;
    work.set_param_values(theta);
    const double dn = detail::terminal_loss(work, problem.z0, problem.t0, problem.t1, seed.dl_dz1);
    theta[i] = orig;
    grad.values()[i] = (up - dn) / (2.0 * h);
  }
  return grad;
}

// Same oracle for the initial-state gradient.
inline Vec fd_gradient_z0(const OdeProblem& problem, const LossSeed& seed, double h) {
  problem.validate();
  if (!(h > 0.0)) throw Error(ErrorKind::InvalidArgument, "fd step must be positive");
  Vec grad(problem.z0.size());
  Vec z0 = problem.z0;
  for (std::size_t i = 0; i < z0.size(); ++i) {
    const double orig = z0[i];
    z0[i] = orig + h;
    const double up = detail::terminal_loss(problem.field, z0, problem.t0, problem.t1, seed.dl_dz1);
    z0[i] = orig - h;
    const double dn = detail::terminal_loss(problem.field, z0, problem.t0, problem.t1, seed.dl_dz1);
    z0[i] = orig;
    grad[i] = (up - dn) / (2.0 * h);
  }
  return grad;
}

// Spectral-norm estimate of the mixed second derivative d^2 f / dtheta dz,
// treated as the linear map v -> d/dz [df/dtheta] v. Columns come from
// central differences of the parameter Jacobian over state perturbations
// (step 1e-4 * (1 + ||z||)); the norm comes from 20 power iterations on the
// Gram matrix.
inline double hessian_mixed_norm_estimate(const VectorField& field, std::span<const double> z,
                                          double t, double fd_step = -1.0) {
  const int d = field.state_dim();
  const int p = field.param_dim();
  if (static_cast<int>(z.size()) != d)
    throw Error(ErrorKind::DimensionMismatch, "state size mismatch");
  const double h = fd_step > 0.0 ? fd_step : 1e-4 * (1.0 + norm2(z));

  // df/dtheta as a (d*p) flat vector, rows built from unit-cotangent VJPs
  auto param_jacobian = [&](const Vec& state) {
    Vec flat(static_cast<std::size_t>(d) * p, 0.0);
    EvalResult r = field.eval(state, t);
    Vec e(static_cast<std::size_t>(d), 0.0);
    Vec xbar(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      e[i] = 1.0;
      std::span<double> row(flat.data() + static_cast<std::size_t>(i) * p,
                            static_cast<std::size_t>(p));
      field.vjp_into(r.tape, e, xbar, row);
      e[i] = 0.0;
    }
    return flat;
  };

  // columns of the mixed-derivative map
  std::vector<Vec> cols(static_cast<std::size_t>(d));
  Vec zp(z.begin(), z.end());
  for (int j = 0; j < d; ++j) {
    const double orig = zp[j];
    zp[j] = orig + h;
    Vec up = param_jacobian(zp);
    zp[j] = orig - h;
    Vec dn = param_jacobian(zp);
    zp[j] = orig;
    cols[j].resize(up.size());
    for (std::size_t i = 0; i < up.size(); ++i) cols[j][i] = (up[i] - dn[i]) / (2.0 * h);
  }

  Matrix gram(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) gram(i, j) = dot(cols[i], cols[j]);

  Vec v(static_cast<std::size_t>(d), 1.0 / std::sqrt(static_cast<double>(d)));
  double lambda = 0.0;
  for (int it = 0; it < 20; ++it) {
    Vec w = mat_vec(gram, v);
    const double n = norm2(w);
    if (n < 1e-300) return 0.0;
    lambda = dot(v, w);
    scale(w, 1.0 / n);
    v = std::move(w);
  }
  return std::sqrt(std::max(0.0, lambda));
}

// All bound components for one solved problem, sampled on the quadrature
// grid, plus the measured gradient error of the interpolated method against
// the tight direct reference. The last two scalars are the remaining
// measurable factors of the composite error bound: the largest parameter
// Jacobian norm along the trajectory and the mixed second-derivative
// estimate.
struct BoundReport {
  Vec t;
  Vec measured_a_norm;   // ||atil(t)|| from the interpolated backward solve
  Vec a_norm_bound;
  Vec measured_delta_a;  // ||atil(t) - a_ref(t)||
  Vec delta_a_bound_v;
  double mu_integral = 0.0;      // int_{t0}^{t1} mu[J] dtau
  double interp_error_max = 0.0; // max-norm deviation of interpolated states
  double measured_e_l1 = 0.0;    // gradient error, l1
  double measured_e_l2 = 0.0;    // gradient error, l2 (the error-norm measurement)
  double dfdtheta_norm_max = 0.0;     // max_t ||df/dtheta|| (spectral) along the trajectory
  double mixed_hessian_estimate = 0.0;  // max sampled d^2f/dtheta dz spectral estimate

  std::string to_csv() const {
    CsvWriter w({"t", "measured_a_norm", "a_norm_bound", "measured_delta_a", "delta_a_bound"});
    for (std::size_t k = 0; k < t.size(); ++k)
      w.row({csv::fmt(t[k]), csv::fmt(measured_a_norm[k]), csv::fmt(a_norm_bound[k]),
             csv::fmt(measured_delta_a[k]), csv::fmt(delta_a_bound_v[k])});
    return w.str();
  }
};

inline BoundReport bound_report(const OdeProblem& problem, int chebyshev_n, const LossSeed& seed,
                                int quad_points, const SolverConfig& reference_cfg) {
  problem.validate();
  const int d = problem.field.state_dim();
  auto rhs = [&field = problem.field](std::span<const double> z, double t, std::span<double> dz) {
    field.eval_value(z, t, dz);
  };

  // tight forward reference, kept dense
  OdeProblem ref_problem = problem;
  ref_problem.cfg = reference_cfg;
  DenseSolution ref = solve(rhs, problem.z0, {problem.t0, problem.t1}, reference_cfg);

  // interpolated forward pass at the problem's own tolerance
  MethodConfig irdm = MethodConfig::irdm(chebyshev_n);
  ForwardArtifacts art = forward(problem, irdm);
  const BaryInterpolant& interp = *art.bli;

  // adjoints: interpolated (atil) and reference (z from the dense reference)
  auto z_interp = [&interp](double t, Vec& buf) { interp.eval_into(t, buf); };
  DenseSolution atil_sol = reduced_adjoint_solve(problem.field, z_interp, seed.dl_dz1, problem.t1,
                                                 problem.t0, problem.cfg, RecordMode::kDense);
  auto z_ref = [&ref](double t, Vec& buf) { ref.eval_into(t, buf); };
  DenseSolution aref_sol = reduced_adjoint_solve(problem.field, z_ref, seed.dl_dz1, problem.t1,
                                                 problem.t0, reference_cfg, RecordMode::kDense);

  BoundReport rep;
  BoundSamples ab = adjoint_norm_bound(ref_problem, ref, seed.dl_dz1, quad_points);
  BoundSamples db = delta_a_bound(problem, ref, interp, seed.dl_dz1, quad_points);
  rep.t = ab.t;
  rep.a_norm_bound = std::move(ab.value);
  rep.delta_a_bound_v = std::move(db.value);

  const int q = quad_points;
  rep.measured_a_norm.resize(static_cast<std::size_t>(q));
  rep.measured_delta_a.resize(static_cast<std::size_t>(q));
  Vec atil_full(static_cast<std::size_t>(d + problem.field.param_dim()));
  Vec aref_full(static_cast<std::size_t>(d + problem.field.param_dim()));
  Vec zbuf(static_cast<std::size_t>(d));
  double interp_err = 0.0;
  for (int k = 0; k < q; ++k) {
    const double t = rep.t[k];
    atil_sol.eval_into(t, atil_full);
    aref_sol.eval_into(t, aref_full);
    double na = 0.0, nd = 0.0;
    for (int i = 0; i < d; ++i) {
      na += atil_full[i] * atil_full[i];
      const double diff = atil_full[i] - aref_full[i];
      nd += diff * diff;
    }
    rep.measured_a_norm[k] = std::sqrt(na);
    rep.measured_delta_a[k] = std::sqrt(nd);
    interp.eval_into(t, zbuf);
    const Vec zr = ref.eval(t);
    for (int i = 0; i < d; ++i) interp_err = std::max(interp_err, std::fabs(zbuf[i] - zr[i]));
  }
  rep.interp_error_max = interp_err;

  // full-span log-norm integral along the reference trajectory
  Vec mu(static_cast<std::size_t>(q));
  for (int k = 0; k < q; ++k)
    mu[k] = log_norm(problem.field.jacobian_state(ref.eval(rep.t[k]), rep.t[k]));
  double integral = 0.0;
  for (int k = 0; k + 1 < q; ++k)
    integral += 0.5 * (mu[k] + mu[k + 1]) * (rep.t[k + 1] - rep.t[k]);
  rep.mu_integral = integral;

  // remaining factors: spectral norm of df/dtheta (via the d x d Gram
  // matrix) at every sample, mixed-derivative estimate on a coarse subset
  const int p = problem.field.param_dim();
  Vec e(static_cast<std::size_t>(d), 0.0);
  Vec xbar(static_cast<std::size_t>(d));
  std::vector<Vec> jrows(static_cast<std::size_t>(d));
  for (int k = 0; k < q; ++k) {
    const Vec zt = ref.eval(rep.t[k]);
    EvalResult r = problem.field.eval(zt, rep.t[k]);
    for (int i = 0; i < d; ++i) {
      jrows[i].assign(static_cast<std::size_t>(p), 0.0);
      e[i] = 1.0;
      problem.field.vjp_into(r.tape, e, xbar, jrows[i]);
      e[i] = 0.0;
    }
    Matrix gram(d, d);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) gram(i, j) = dot(jrows[i], jrows[j]);
    rep.dfdtheta_norm_max =
        std::max(rep.dfdtheta_norm_max, std::sqrt(std::max(0.0, log_norm(gram))));
    if (k % std::max(1, (q - 1) / 8) == 0)
      rep.mixed_hessian_estimate = std::max(
          rep.mixed_hessian_estimate, hessian_mixed_norm_estimate(problem.field, zt, rep.t[k]));
  }

  GradientErrorReport err = gradient_error(problem, irdm, seed, reference_cfg);
  rep.measured_e_l1 = err.l1;
  rep.measured_e_l2 = err.l2;
  return rep;
}

}  // namespace odegrad
