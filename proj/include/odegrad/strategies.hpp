#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "odegrad/chebyshev.hpp"
#include "odegrad/csv.hpp"
#include "odegrad/dopri5.hpp"
#include "odegrad/errors.hpp"
#include "odegrad/field.hpp"
#include "odegrad/param_vector.hpp"
#include "odegrad/vec.hpp"

namespace odegrad {

// Four interchangeable ways to get dL/dtheta and dL/dz0 for a loss seeded at
// the endpoint of a forward solve:
//   direct     - discrete adjoint of the accepted DOPRI5 step sequence
//   rdm        - reverse dynamic method: augmented (z, a, dL/dtheta) system
//                of dimension 2d+p solved backward from t1
//   irdm       - interpolated reverse dynamic method: only (a, dL/dtheta),
//                dimension d+p, with z(t) supplied by an interpolant built
//                during the forward pass
//   checkpoint - stored states at uniform times; each interval is re-solved
//                forward and swept with the discrete adjoint, right to left
enum class Method { kDirect, kRdm, kIrdm, kCheckpoint };

enum class InterpKind { kBli, kLinear, kCubic };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kDirect: return "direct";
    case Method::kRdm: return "rdm";
    case Method::kIrdm: return "irdm";
    case Method::kCheckpoint: return "checkpoint";
  }
  return "?";
}

inline const char* to_string(InterpKind k) {
  switch (k) {
    case InterpKind::kBli: return "bli";
    case InterpKind::kLinear: return "linear";
    case InterpKind::kCubic: return "cubic";
  }
  return "?";
}

struct MethodConfig {
  Method method = Method::kDirect;
  std::optional<int> chebyshev_n;           // irdm only
  std::optional<int> checkpoints;           // checkpoint only
  std::optional<InterpKind> interp;         // irdm only
  std::optional<SolverConfig> backward_cfg; // rdm/irdm; defaults to the forward config

  static MethodConfig direct() { return {}; }
  static MethodConfig rdm() { return {Method::kRdm, {}, {}, {}, {}}; }
  static MethodConfig irdm(int n, InterpKind kind = InterpKind::kBli) {
    return {Method::kIrdm, n, {}, kind, {}};
  }
  static MethodConfig checkpoint(int k) { return {Method::kCheckpoint, {}, k, {}, {}}; }

  // Method-specific fields must be present exactly when the method uses them.
  void validate() const {
    const bool is_irdm = method == Method::kIrdm;
    const bool is_ckpt = method == Method::kCheckpoint;
    if (is_irdm != chebyshev_n.has_value())
      throw Error(ErrorKind::InvalidArgument, "chebyshev_n required iff method is irdm");
    if (is_irdm != interp.has_value())
      throw Error(ErrorKind::InvalidArgument, "interp kind required iff method is irdm");
    if (is_ckpt != checkpoints.has_value())
      throw Error(ErrorKind::InvalidArgument, "checkpoints required iff method is checkpoint");
    if (is_irdm && *chebyshev_n < 1)
      throw Error(ErrorKind::InvalidArgument, "chebyshev_n must be >= 1");
    if (is_ckpt && *checkpoints < 1)
      throw Error(ErrorKind::InvalidArgument, "checkpoints must be >= 1");
    if (backward_cfg && !(method == Method::kRdm || method == Method::kIrdm))
      throw Error(ErrorKind::InvalidArgument, "backward_cfg applies to rdm/irdm only");
  }

  SolverConfig backward_config(const SolverConfig& forward_cfg) const {
    return backward_cfg ? *backward_cfg : forward_cfg;
  }
};

struct OdeProblem {
  VectorField field;
  Vec z0;
  double t0 = 0.0;
  double t1 = 1.0;
  SolverConfig cfg;

  void validate() const {
    if (static_cast<int>(z0.size()) != field.state_dim())
      throw Error(ErrorKind::DimensionMismatch, "z0 size != field state_dim");
    if (!(t0 < t1)) throw Error(ErrorKind::InvalidArgument, "problem span needs t0 < t1");
    if (!all_finite(z0)) throw Error(ErrorKind::NonFinite, "non-finite z0");
    cfg.validate();
  }
};

// Terminal cotangent dL/dz(t1).
struct LossSeed {
  Vec dl_dz1;
};

struct GradStats {
  long forward_nfe = 0;
  long backward_nfe = 0;
  long peak_stored_states = 0;  // state vectors retained across/within the backward pass
  int backward_system_dim = 0;  // backward-in-time IVP dimension; 0 when none is solved
  double wall_ms = 0.0;
};

struct GradientResult {
  ParamVector dl_dtheta;
  Vec dl_dz0;
  GradStats stats;
};

// Method-specific products of the forward pass.
struct ForwardArtifacts {
  Method method = Method::kDirect;
  Vec z1;
  long forward_nfe = 0;
  long stored_states = 0;

  std::optional<DenseSolution> trajectory;       // direct
  std::optional<BaryInterpolant> bli;            // irdm (bli)
  std::optional<PiecewiseInterpolant> piecewise; // irdm (linear/cubic)
  Vec checkpoint_times;                          // checkpoint
  std::vector<Vec> checkpoint_states;            // checkpoint
};

namespace detail {

// Reverse sweep through the recorded RK stages of one dense solution.
// Stage states are rebuilt from the stored derivatives with the same
// arithmetic as the forward pass, so the replayed tapes match the forward
// evaluations bit for bit. abar enters as dL/d(endpoint) and leaves as
// dL/d(start); parameter contributions accumulate into theta_accum.
inline void discrete_adjoint_sweep(const VectorField& field, const DenseSolution& sol, Vec& abar,
                                   std::span<double> theta_accum) {
  namespace dp = dopri5;
  const int d = field.state_dim();
  // a_ij rows for stages 2..6 (0-based rows 1..5); stage 7 carries zero
  // cotangent (b7 = 0) and is skipped.
  static constexpr double kA[6][5] = {
      {0, 0, 0, 0, 0},
      {dp::kA21, 0, 0, 0, 0},
      {dp::kA31, dp::kA32, 0, 0, 0},
      {dp::kA41, dp::kA42, dp::kA43, 0, 0},
      {dp::kA51, dp::kA52, dp::kA53, dp::kA54, 0},
      {dp::kA61, dp::kA62, dp::kA63, dp::kA64, dp::kA65},
  };
  static constexpr double kB[6] = {dp::kB1, 0.0, dp::kB3, dp::kB4, dp::kB5, dp::kB6};

  Vec ytmp(static_cast<std::size_t>(d));
  Vec zbar(static_cast<std::size_t>(d));
  std::array<Vec, 6> kbar;
  for (auto it = sol.steps().rbegin(); it != sol.steps().rend(); ++it) {
    const StepRecord& rec = *it;
    const double h = rec.h;
    for (int i = 0; i < 6; ++i) {
      kbar[i].assign(static_cast<std::size_t>(d), 0.0);
      if (kB[i] != 0.0) axpy(h * kB[i], abar, kbar[i]);
    }
    for (int i = 5; i >= 0; --i) {
      ytmp = rec.y;
      for (int j = 0; j < i; ++j)
        if (kA[i][j] != 0.0) axpy(h * kA[i][j], rec.k[j], ytmp);
      EvalResult r = field.eval(ytmp, rec.t + dp::kC[i] * h);
      field.vjp_into(r.tape, kbar[i], zbar, theta_accum);
      axpy(1.0, zbar, abar);
      for (int j = 0; j < i; ++j)
        if (kA[i][j] != 0.0) axpy(h * kA[i][j], zbar, kbar[j]);
    }
  }
}

}  // namespace detail

// Backward solve of the full reverse-dynamic system u = (z, a, dL/dtheta),
// dimension 2d+p, from t1 down to t0 with u(t1) = (z1, seed, 0).
inline DenseSolution rdm_augmented_solve(const VectorField& field, std::span<const double> z1,
                                         std::span<const double> seed, double t1, double t0,
                                         const SolverConfig& cfg,
                                         RecordMode mode = RecordMode::kEndpointOnly) {
  const int d = field.state_dim();
  const int p = field.param_dim();
  Vec u0(static_cast<std::size_t>(2 * d + p), 0.0);
  std::copy(z1.begin(), z1.end(), u0.begin());
  std::copy(seed.begin(), seed.end(), u0.begin() + d);
  auto rhs = [&field, d, p](std::span<const double> u, double t, std::span<double> du) {
    auto z = u.subspan(0, static_cast<std::size_t>(d));
    auto a = u.subspan(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    EvalResult r = field.eval(z, t);
    std::copy(r.dz.begin(), r.dz.end(), du.begin());
    auto da = du.subspan(static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    auto dg = du.subspan(static_cast<std::size_t>(2 * d), static_cast<std::size_t>(p));
    std::fill(dg.begin(), dg.end(), 0.0);
    field.vjp_into(r.tape, a, da, dg);
    for (double& x : da) x = -x;
    for (double& x : dg) x = -x;
  };
  return solve(rhs, u0, {t1, t0}, cfg, mode);
}

// Backward solve of the reduced system u = (a, dL/dtheta), dimension d+p,
// with the state trajectory supplied externally (an interpolant, or a dense
// reference solution). Each rhs evaluation costs exactly one field eval plus
// one fused VJP.
template <class StateFn>
inline DenseSolution reduced_adjoint_solve(const VectorField& field, StateFn&& z_of_t,
                                           std::span<const double> seed, double t1, double t0,
                                           const SolverConfig& cfg,
                                           RecordMode mode = RecordMode::kEndpointOnly) {
  const int d = field.state_dim();
  const int p = field.param_dim();
  Vec u0(static_cast<std::size_t>(d + p), 0.0);
  std::copy(seed.begin(), seed.end(), u0.begin());
  Vec zbuf(static_cast<std::size_t>(d));
  auto rhs = [&field, &z_of_t, &zbuf, d, p](std::span<const double> u, double t,
                                            std::span<double> du) {
    z_of_t(t, zbuf);
    auto a = u.subspan(0, static_cast<std::size_t>(d));
    EvalResult r = field.eval(zbuf, t);
    auto da = du.subspan(0, static_cast<std::size_t>(d));
    auto dg = du.subspan(static_cast<std::size_t>(d), static_cast<std::size_t>(p));
    std::fill(dg.begin(), dg.end(), 0.0);
    field.vjp_into(r.tape, a, da, dg);
    for (double& x : da) x = -x;
    for (double& x : dg) x = -x;
  };
  return solve(rhs, u0, {t1, t0}, cfg, mode);
}

inline ForwardArtifacts forward(const OdeProblem& problem, const MethodConfig& mcfg) {
  problem.validate();
  mcfg.validate();
  const VectorField& field = problem.field;
  auto rhs = [&field](std::span<const double> z, double t, std::span<double> dz) {
    field.eval_value(z, t, dz);
  };
  ForwardArtifacts art;
  art.method = mcfg.method;

  switch (mcfg.method) {
    case Method::kDirect: {
      DenseSolution sol = solve(rhs, problem.z0, {problem.t0, problem.t1}, problem.cfg);
      art.z1 = sol.endpoint();
      art.forward_nfe = sol.nfe();
      // 7 stage vectors and the start state per step, plus the endpoint.
      art.stored_states = 8 * sol.accepted() + 1;
      art.trajectory = std::move(sol);
      break;
    }
    case Method::kRdm: {
      DenseSolution sol = solve(rhs, problem.z0, {problem.t0, problem.t1}, problem.cfg,
                                RecordMode::kEndpointOnly);
      art.z1 = sol.endpoint();
      art.forward_nfe = sol.nfe();
      art.stored_states = 1;  // only z1 crosses to the backward pass
      break;
    }
    case Method::kIrdm: {
      ChebyshevGrid grid(*mcfg.chebyshev_n, problem.t0, problem.t1);
      if (*mcfg.interp == InterpKind::kBli) {
        Vec times = grid.ascending_nodes();
        auto [sol, states] = solve_with_outputs(rhs, problem.z0, {problem.t0, problem.t1},
                                                problem.cfg, times, RecordMode::kEndpointOnly);
        art.z1 = sol.endpoint();
        art.forward_nfe = sol.nfe();
        // reorder to the grid's descending index pairing
        std::reverse(states.begin(), states.end());
        art.stored_states = static_cast<long>(states.size());
        art.bli.emplace(std::move(grid), std::move(states));
      } else {
        // Piecewise interpolants need the endpoints too: first-kind nodes sit
        // strictly inside the span, and the backward solve starts at t1.
        Vec times;
        times.push_back(problem.t0);
        for (double t : grid.ascending_nodes()) times.push_back(t);
        times.push_back(problem.t1);
        auto [sol, states] = solve_with_outputs(rhs, problem.z0, {problem.t0, problem.t1},
                                                problem.cfg, times, RecordMode::kEndpointOnly);
        art.z1 = sol.endpoint();
        art.forward_nfe = sol.nfe();
        art.stored_states = static_cast<long>(states.size());
        std::vector<Vec> derivs;
        if (*mcfg.interp == InterpKind::kCubic) {
          derivs.resize(times.size());
          for (std::size_t i = 0; i < times.size(); ++i) {
            derivs[i].resize(states[i].size());
            field.eval_value(states[i], times[i], derivs[i]);
          }
          art.forward_nfe += static_cast<long>(times.size());
          art.stored_states += static_cast<long>(times.size());
        }
        const PiecewiseKind kind = (*mcfg.interp == InterpKind::kLinear)
                                       ? PiecewiseKind::kLinear
                                       : PiecewiseKind::kCubicHermite;
        art.piecewise.emplace(kind, std::move(times), std::move(states), std::move(derivs));
      }
      break;
    }
    case Method::kCheckpoint: {
      const int k = *mcfg.checkpoints;
      Vec times(static_cast<std::size_t>(k));
      for (int j = 0; j < k; ++j)
        times[j] = problem.t0 + (problem.t1 - problem.t0) * static_cast<double>(j) / k;
      auto [sol, states] = solve_with_outputs(rhs, problem.z0, {problem.t0, problem.t1},
                                              problem.cfg, times, RecordMode::kEndpointOnly);
      art.z1 = sol.endpoint();
      art.forward_nfe = sol.nfe();
      art.stored_states = k;
      art.checkpoint_times = std::move(times);
      art.checkpoint_states = std::move(states);
      break;
    }
  }
  return art;
}

inline GradientResult backward(const OdeProblem& problem, const MethodConfig& mcfg,
                               const ForwardArtifacts& art, const LossSeed& seed) {
  problem.validate();
  mcfg.validate();
  if (art.method != mcfg.method)
    throw Error(ErrorKind::InvalidArgument, "artifacts were produced by a different method");
  const VectorField& field = problem.field;
  const int d = field.state_dim();
  const int p = field.param_dim();
  if (static_cast<int>(seed.dl_dz1.size()) != d)
    throw Error(ErrorKind::DimensionMismatch, "loss seed size != state_dim");

  GradientResult res;
  res.dl_dtheta = field.zero_cotangent();
  res.dl_dz0.assign(static_cast<std::size_t>(d), 0.0);
  res.stats.forward_nfe = art.forward_nfe;

  switch (mcfg.method) {
    case Method::kDirect: {
      if (!art.trajectory)
        throw Error(ErrorKind::InvalidArgument, "direct backward needs the recorded trajectory");
      Vec abar = seed.dl_dz1;
      detail::discrete_adjoint_sweep(field, *art.trajectory, abar, res.dl_dtheta.values());
      res.dl_dz0 = std::move(abar);
      res.stats.backward_nfe = 0;
      res.stats.peak_stored_states = art.stored_states;
      res.stats.backward_system_dim = 0;
      break;
    }
    case Method::kRdm: {
      const SolverConfig bcfg = mcfg.backward_config(problem.cfg);
      DenseSolution aug = rdm_augmented_solve(field, art.z1, seed.dl_dz1, problem.t1, problem.t0,
                                              bcfg);
      const Vec& u = aug.endpoint();
      std::copy(u.begin() + d, u.begin() + 2 * d, res.dl_dz0.begin());
      std::copy(u.begin() + 2 * d, u.end(), res.dl_dtheta.values().begin());
      res.stats.backward_nfe = aug.nfe();
      res.stats.peak_stored_states = art.stored_states;
      res.stats.backward_system_dim = 2 * d + p;
      break;
    }
    case Method::kIrdm: {
      const SolverConfig bcfg = mcfg.backward_config(problem.cfg);
      DenseSolution red;
      if (art.bli) {
        if (art.bli->grid().t0() != problem.t0 || art.bli->grid().t1() != problem.t1)
          throw Error(ErrorKind::InvalidArgument, "interpolant span mismatch");
        auto z_of_t = [&interp = *art.bli](double t, Vec& out) { interp.eval_into(t, out); };
        red = reduced_adjoint_solve(field, z_of_t, seed.dl_dz1, problem.t1, problem.t0, bcfg);
      } else if (art.piecewise) {
        if (art.piecewise->t0() != problem.t0 || art.piecewise->t1() != problem.t1)
          throw Error(ErrorKind::InvalidArgument, "interpolant span mismatch");
        auto z_of_t = [&interp = *art.piecewise](double t, Vec& out) { interp.eval_into(t, out); };
        red = reduced_adjoint_solve(field, z_of_t, seed.dl_dz1, problem.t1, problem.t0, bcfg);
      } else {
        throw Error(ErrorKind::InvalidArgument, "irdm backward needs an interpolant artifact");
      }
      const Vec& u = red.endpoint();
      std::copy(u.begin(), u.begin() + d, res.dl_dz0.begin());
      std::copy(u.begin() + d, u.end(), res.dl_dtheta.values().begin());
      res.stats.backward_nfe = red.nfe();
      res.stats.peak_stored_states = art.stored_states;
      res.stats.backward_system_dim = d + p;
      break;
    }
    case Method::kCheckpoint: {
      if (art.checkpoint_states.empty())
        throw Error(ErrorKind::InvalidArgument, "checkpoint backward needs stored checkpoints");
      const int k = static_cast<int>(art.checkpoint_states.size());
      auto rhs = [&field](std::span<const double> z, double t, std::span<double> dz) {
        field.eval_value(z, t, dz);
      };
      Vec abar = seed.dl_dz1;
      long nfe = 0;
      long peak = art.stored_states;
      // Intervals right to left: re-solve forward from the stored state, then
      // sweep the recorded stages.
      for (int j = k - 1; j >= 0; --j) {
        const double lo = art.checkpoint_times[j];
        const double hi = (j + 1 < k) ? art.checkpoint_times[j + 1] : problem.t1;
        DenseSolution sub = solve(rhs, art.checkpoint_states[j], {lo, hi}, problem.cfg);
        nfe += sub.nfe();
        peak = std::max(peak, art.stored_states + 8 * sub.accepted() + 1);
        detail::discrete_adjoint_sweep(field, sub, abar, res.dl_dtheta.values());
      }
      res.dl_dz0 = std::move(abar);
      res.stats.backward_nfe = nfe;
      res.stats.peak_stored_states = peak;
      res.stats.backward_system_dim = 0;
      break;
    }
  }
  return res;
}

inline GradientResult grad(const OdeProblem& problem, const MethodConfig& mcfg,
                           const LossSeed& seed) {
  const auto start = std::chrono::steady_clock::now();
  ForwardArtifacts art = forward(problem, mcfg);
  GradientResult res = backward(problem, mcfg, art, seed);
  const auto stop = std::chrono::steady_clock::now();
  res.stats.wall_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  return res;
}

// --- training on sampled trajectories ---

struct SgdConfig {
  double lr = 0.01;
};

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

using OptimizerConfig = std::variant<SgdConfig, AdamConfig>;

class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t dim) : cfg_(cfg) {
    if (std::holds_alternative<AdamConfig>(cfg_)) {
      m_.assign(dim, 0.0);
      v_.assign(dim, 0.0);
    }
  }

  void step(Vec& params, const Vec& grad) {
    if (auto* sgd = std::get_if<SgdConfig>(&cfg_)) {
      axpy(-sgd->lr, grad, params);
      return;
    }
    const auto& adam = std::get<AdamConfig>(cfg_);
    ++t_;
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = adam.beta1 * m_[i] + (1.0 - adam.beta1) * grad[i];
      v_[i] = adam.beta2 * v_[i] + (1.0 - adam.beta2) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] -= adam.lr * mhat / (std::sqrt(vhat) + adam.eps);
    }
  }

 private:
  OptimizerConfig cfg_;
  Vec m_, v_;
  long t_ = 0;
};

struct TrainSample {
  double t;
  Vec target;
};

struct TrainRecord {
  int epoch = 0;
  double loss = 0.0;
  long forward_nfe = 0;   // cumulative
  long backward_nfe = 0;  // cumulative
  double cum_wall_ms = 0.0;
};

struct TrainTrace {
  std::vector<TrainRecord> records;
  bool diverged = false;
  std::string error;

  std::string to_csv() const {
    CsvWriter w({"epoch", "loss", "forward_nfe", "backward_nfe", "cumulative_wall_ms"});
    for (const auto& r : records)
      w.row({csv::fmt(r.epoch), csv::fmt(r.loss), csv::fmt(r.forward_nfe),
             csv::fmt(r.backward_nfe), csv::fmt(r.cum_wall_ms)});
    return w.str();
  }
};

// Fits the field to (time, target) pairs with the mse loss
//   L = (1/(M d)) sum_m ||z(s_m) - y_m||^2.
// The span is segmented at the sample times; each epoch runs the method's
// forward over every segment, then chains the adjoint right to left, adding
// the local loss cotangent at each sample. Parameters update in place.
inline TrainTrace train(OdeProblem& problem, const MethodConfig& mcfg,
                        const std::vector<TrainSample>& dataset, const OptimizerConfig& opt,
                        int epochs) {
  problem.validate();
  mcfg.validate();
  if (dataset.empty()) throw Error(ErrorKind::InvalidArgument, "empty dataset");
  const int d = problem.field.state_dim();
  double prev = problem.t0;
  for (const auto& s : dataset) {
    if (!(s.t > prev))
      throw Error(ErrorKind::InvalidArgument,
                  "dataset times must be strictly increasing and > t0");
    if (s.t > problem.t1) throw Error(ErrorKind::OutOfSpan, "dataset time beyond span");
    if (static_cast<int>(s.target.size()) != d)
      throw Error(ErrorKind::DimensionMismatch, "target size != state_dim");
    prev = s.t;
  }

  TrainTrace trace;
  const std::size_t m = dataset.size();
  const double loss_scale = 1.0 / (static_cast<double>(m) * d);
  Optimizer optimizer(opt, problem.field.params().size());
  NfeCounter nfe;  // cumulative across epochs, monotone by construction
  const auto t_begin = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < epochs; ++epoch) {
    std::vector<ForwardArtifacts> arts;
    arts.reserve(m);
    double loss = 0.0;
    try {
      Vec z = problem.z0;
      double lo = problem.t0;
      for (const auto& s : dataset) {
        OdeProblem seg{problem.field, z, lo, s.t, problem.cfg};
        arts.push_back(forward(seg, mcfg));
        z = arts.back().z1;
        nfe.forward_nfe += arts.back().forward_nfe;
        for (int i = 0; i < d; ++i) {
          const double e = z[i] - s.target[i];
          loss += loss_scale * e * e;
        }
        lo = s.t;
      }
      if (!std::isfinite(loss)) {
        trace.diverged = true;
        trace.error = "non-finite loss at epoch " + std::to_string(epoch);
        break;
      }

      ParamVector theta_grad = problem.field.zero_cotangent();
      Vec abar(static_cast<std::size_t>(d), 0.0);
      double lo_m;
      for (std::size_t i = m; i-- > 0;) {
        lo_m = (i == 0) ? problem.t0 : dataset[i - 1].t;
        const Vec& z_i = arts[i].z1;
        for (int c = 0; c < d; ++c)
          abar[c] += 2.0 * loss_scale * (z_i[c] - dataset[i].target[c]);
        OdeProblem seg{problem.field, (i == 0) ? problem.z0 : arts[i - 1].z1, lo_m, dataset[i].t,
                       problem.cfg};
        GradientResult gres = backward(seg, mcfg, arts[i], LossSeed{abar});
        theta_grad.add_scaled(gres.dl_dtheta, 1.0);
        abar = std::move(gres.dl_dz0);
        nfe.backward_nfe += gres.stats.backward_nfe;
      }

      Vec params = problem.field.params().values();
      optimizer.step(params, theta_grad.values());
      problem.field.set_param_values(params);
    } catch (const SolveError& e) {
      trace.diverged = true;
      trace.error = std::string("solver failure at epoch ") + std::to_string(epoch) + ": " +
                    e.what();
      break;
    }

    const auto now = std::chrono::steady_clock::now();
    trace.records.push_back({epoch, loss, nfe.forward_nfe, nfe.backward_nfe,
                             std::chrono::duration<double, std::milli>(now - t_begin).count()});
  }
  return trace;
}

}  // namespace odegrad
