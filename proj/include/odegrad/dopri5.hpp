#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "odegrad/csv.hpp"
#include "odegrad/errors.hpp"
#include "odegrad/vec.hpp"

namespace odegrad {

// Dormand-Prince 5(4) with FSAL, PI step-size control and the standard
// 4th-order dense-output interpolant built from the seven stages. Dense
// evaluation never touches the right-hand side, so querying a solution at
// arbitrary times costs zero extra rhs evaluations.
namespace dopri5 {

constexpr std::array<double, 7> kC = {0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0};

constexpr double kA21 = 1.0 / 5.0;
constexpr double kA31 = 3.0 / 40.0, kA32 = 9.0 / 40.0;
constexpr double kA41 = 44.0 / 45.0, kA42 = -56.0 / 15.0, kA43 = 32.0 / 9.0;
constexpr double kA51 = 19372.0 / 6561.0, kA52 = -25360.0 / 2187.0, kA53 = 64448.0 / 6561.0,
                 kA54 = -212.0 / 729.0;
constexpr double kA61 = 9017.0 / 3168.0, kA62 = -355.0 / 33.0, kA63 = 46732.0 / 5247.0,
                 kA64 = 49.0 / 176.0, kA65 = -5103.0 / 18656.0;
// Row 7 doubles as the 5th-order weights (FSAL).
constexpr double kB1 = 35.0 / 384.0, kB3 = 500.0 / 1113.0, kB4 = 125.0 / 192.0,
                 kB5 = -2187.0 / 6784.0, kB6 = 11.0 / 84.0;

// Difference between the 5th- and 4th-order weights.
constexpr double kE1 = 71.0 / 57600.0, kE3 = -71.0 / 16695.0, kE4 = 71.0 / 1920.0,
                 kE5 = -17253.0 / 339200.0, kE6 = 22.0 / 525.0, kE7 = -1.0 / 40.0;

// Dense-output coefficients (quartic interpolant).
constexpr double kD1 = -12715105075.0 / 11282082432.0;
constexpr double kD3 = 87487479700.0 / 32700410799.0;
constexpr double kD4 = -10690763975.0 / 1880347072.0;
constexpr double kD5 = 701980252875.0 / 199316789632.0;
constexpr double kD6 = -1453857185.0 / 822651844.0;
constexpr double kD7 = 69997945.0 / 29380423.0;

// PI controller: h_new = h * safety * err^(-0.7/5) * err_prev^(0.4/5).
constexpr double kAlpha = 0.7 / 5.0;
constexpr double kBeta = 0.4 / 5.0;
constexpr double kFacMin = 0.2;
constexpr double kFacMax = 10.0;

}  // namespace dopri5

struct SolverConfig {
  double rtol = 1e-6;
  double atol = 1e-6;
  std::optional<double> h_init{};
  double h_max = std::numeric_limits<double>::infinity();
  long max_steps = 100000;
  double safety = 0.9;

  void validate() const {
    if (!(rtol > 0.0) || !(atol > 0.0))
      throw Error(ErrorKind::InvalidArgument, "tolerances must be positive");
    if (max_steps < 1) throw Error(ErrorKind::InvalidArgument, "max_steps must be >= 1");
    if (!(safety > 0.0 && safety < 1.0))
      throw Error(ErrorKind::InvalidArgument, "safety must lie in (0, 1)");
  }

  SolverConfig with_tol(double tol) const {
    SolverConfig c = *this;
    c.rtol = tol;
    c.atol = tol;
    return c;
  }
};

// One accepted step: state at the step start and end plus the seven stage
// derivatives, everything the interpolant (and a discrete adjoint) needs.
struct StepRecord {
  double t = 0.0;
  double h = 0.0;
  Vec y;
  Vec y_end;
  std::array<Vec, 7> k;
};

struct NfeCounter {
  long forward_nfe = 0;
  long backward_nfe = 0;
};

// Quartic interpolant over one step, theta in [0, 1]. Step boundaries
// reproduce the stored states bitwise.
inline void dense_step_eval(const StepRecord& rec, double theta, std::span<double> out) {
  if (theta == 0.0) {
    std::copy(rec.y.begin(), rec.y.end(), out.begin());
    return;
  }
  if (theta == 1.0) {
    std::copy(rec.y_end.begin(), rec.y_end.end(), out.begin());
    return;
  }
  namespace dp = dopri5;
  const double h = rec.h;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = rec.y[i];
    const double ydiff = rec.y_end[i] - y;
    const double bspl = h * rec.k[0][i] - ydiff;
    const double r4 = ydiff - h * rec.k[6][i] - bspl;
    const double r5 = h * (dp::kD1 * rec.k[0][i] + dp::kD3 * rec.k[2][i] + dp::kD4 * rec.k[3][i] +
                           dp::kD5 * rec.k[4][i] + dp::kD6 * rec.k[5][i] + dp::kD7 * rec.k[6][i]);
    out[i] = y + theta * (ydiff + (1.0 - theta) * (bspl + theta * (r4 + (1.0 - theta) * r5)));
  }
}

class DenseSolution {
 public:
  DenseSolution() = default;

  double t_start() const { return t0_; }
  double t_end() const { return t1_; }
  int dim() const { return static_cast<int>(endpoint_.size()); }
  const Vec& endpoint() const { return endpoint_; }
  long nfe() const { return nfe_; }
  long accepted() const { return accepted_; }
  long rejected() const { return rejected_; }
  bool has_dense() const { return !steps_.empty(); }
  const std::vector<StepRecord>& steps() const { return steps_; }

  // 4th-order dense evaluation; exact (stored value) at step endpoints.
  void eval_into(double t, std::span<double> out) const {
    if (t == t1_ && !endpoint_.empty()) {
      std::copy(endpoint_.begin(), endpoint_.end(), out.begin());
      return;
    }
    const StepRecord& rec = locate(t);
    dense_step_eval(rec, (t - rec.t) / rec.h, out);
  }

  Vec eval(double t) const {
    Vec out(endpoint_.size());
    eval_into(t, out);
    return out;
  }

  // Debug dump: one row per accepted step.
  std::string to_csv() const {
    std::vector<std::string> header = {"t", "h"};
    for (int i = 0; i < dim(); ++i) header.push_back("y" + std::to_string(i));
    CsvWriter w(header);
    for (const auto& rec : steps_) {
      std::vector<std::string> row = {csv::fmt(rec.t), csv::fmt(rec.h)};
      for (double v : rec.y) row.push_back(csv::fmt(v));
      w.row(row);
    }
    return w.str();
  }

 private:
  const StepRecord& locate(double t) const {
    if (steps_.empty())
      throw Error(ErrorKind::InvalidArgument, "solution recorded endpoint only");
    const double dir = (t1_ >= t0_) ? 1.0 : -1.0;
    if ((t - t0_) * dir < 0.0 || (t - t1_) * dir > 0.0)
      throw Error(ErrorKind::OutOfSpan, "dense eval at t=" + std::to_string(t) +
                                            " outside span [" + std::to_string(t0_) + ", " +
                                            std::to_string(t1_) + "]");
    // First step whose end lies at or beyond t (steps tile the span).
    auto it = std::lower_bound(steps_.begin(), steps_.end(), t,
                               [dir](const StepRecord& rec, double tt) {
                                 return (rec.t + rec.h) * dir < tt * dir;
                               });
    if (it == steps_.end()) it = std::prev(steps_.end());
    return *it;
  }

  double t0_ = 0.0, t1_ = 0.0;
  Vec endpoint_;
  long nfe_ = 0;
  long accepted_ = 0;
  long rejected_ = 0;
  std::vector<StepRecord> steps_;

  template <class Rhs>
  friend class Integrator;
};

// Carries whatever was integrated before the failure.
class SolveError : public Error {
 public:
  SolveError(ErrorKind kind, const std::string& msg, DenseSolution partial)
      : Error(kind, msg), partial_(std::move(partial)) {}

  const DenseSolution& partial() const { return partial_; }

 private:
  DenseSolution partial_;
};

enum class RecordMode { kDense, kEndpointOnly };

template <class Rhs>
class Integrator {
 public:
  Integrator(Rhs& rhs, std::span<const double> z0, double t0, double t1, const SolverConfig& cfg,
             RecordMode mode)
      : rhs_(rhs), cfg_(cfg), mode_(mode), n_(z0.size()), t0_(t0), t1_(t1) {
    cfg_.validate();
    if (t0 == t1) throw Error(ErrorKind::InvalidArgument, "empty integration span");
    if (!all_finite(z0)) throw Error(ErrorKind::NonFinite, "non-finite initial state");
    y_.assign(z0.begin(), z0.end());
    sol_.t0_ = t0;
    sol_.t1_ = t1;
    dir_ = (t1 > t0) ? 1.0 : -1.0;
    hmax_ = std::min(cfg_.h_max, std::fabs(t1 - t0));
  }

  // Output times must lie in the span and be sorted in integration order;
  // they are filled from the dense interpolant as steps complete, never
  // forcing step endpoints.
  DenseSolution run(std::span<const double> t_out = {}, std::vector<Vec>* outputs = nullptr) {
    validate_outputs(t_out);
    if (outputs) outputs->assign(t_out.size(), Vec());

    k_[0] = eval_rhs(y_, t0_);
    double h = cfg_.h_init ? std::fabs(*cfg_.h_init) * dir_ : auto_initial_step();

    double t = t0_;
    double errold = 1e-4;
    bool rejected_last = false;
    std::size_t next_out = 0;

    while (true) {
      if (sol_.accepted_ + sol_.rejected_ >= cfg_.max_steps)
        throw_partial(ErrorKind::MaxStepsExceeded,
                      "max_steps=" + std::to_string(cfg_.max_steps) + " exceeded at t=" +
                          std::to_string(t),
                      t);
      h = clamp_mag(h, hmax_);
      if (std::fabs(h) < step_floor(t))
        throw_partial(ErrorKind::NonFinite,
                      "step size underflow (persistent non-finite state?) at step " +
                          std::to_string(sol_.accepted_ + sol_.rejected_) + ", t=" +
                          std::to_string(t),
                      t);
      bool last = false;
      if ((t + h - t1_) * dir_ >= 0.0) {
        h = t1_ - t;
        last = true;
      }

      const double err = attempt_step(t, h);

      if (std::isfinite(err) && err <= 1.0) {
        StepRecord rec;
        rec.t = t;
        rec.h = h;
        rec.y = y_;
        rec.y_end = ynew_;
        rec.k = k_;
        emit_outputs(rec, last, t_out, outputs, next_out);
        if (mode_ == RecordMode::kDense) sol_.steps_.push_back(std::move(rec));
        ++sol_.accepted_;
        t = last ? t1_ : t + h;
        y_ = ynew_;
        k_[0] = k_[6];  // FSAL
        if (last) break;
        double fac = cfg_.safety * std::pow(std::max(err, 1e-16), -dopri5::kAlpha) *
                     std::pow(errold, dopri5::kBeta);
        fac = std::clamp(fac, dopri5::kFacMin, dopri5::kFacMax);
        if (rejected_last) fac = std::min(fac, 1.0);
        rejected_last = false;
        errold = std::max(err, 1e-4);
        h *= fac;
      } else {
        ++sol_.rejected_;
        rejected_last = true;
        double fac;
        if (!std::isfinite(err)) {
          fac = 0.5;
        } else {
          fac = std::clamp(cfg_.safety * std::pow(err, -dopri5::kAlpha), dopri5::kFacMin, 1.0);
        }
        h *= fac;
      }
    }

    sol_.endpoint_ = y_;
    return std::move(sol_);
  }

  // Fixed step count, no error control; used to measure convergence order.
  DenseSolution run_fixed(long n_steps) {
    if (n_steps < 1) throw Error(ErrorKind::InvalidArgument, "n_steps must be >= 1");
    k_[0] = eval_rhs(y_, t0_);
    const double h = (t1_ - t0_) / static_cast<double>(n_steps);
    double t = t0_;
    for (long s = 0; s < n_steps; ++s) {
      const bool last = (s + 1 == n_steps);
      attempt_step(t, h);
      if (!all_finite(ynew_))
        throw_partial(ErrorKind::NonFinite, "non-finite state at fixed step " + std::to_string(s),
                      t);
      StepRecord rec{t, h, y_, ynew_, k_};
      if (mode_ == RecordMode::kDense) sol_.steps_.push_back(std::move(rec));
      ++sol_.accepted_;
      t = last ? t1_ : t0_ + h * static_cast<double>(s + 1);
      y_ = ynew_;
      k_[0] = k_[6];
    }
    sol_.endpoint_ = y_;
    return std::move(sol_);
  }

 private:
  // The partial solution spans what was actually integrated.
  [[noreturn]] void throw_partial(ErrorKind kind, const std::string& msg, double t_reached) {
    sol_.t1_ = t_reached;
    sol_.endpoint_ = y_;
    throw SolveError(kind, msg, std::move(sol_));
  }

  // A right-hand side that rejects non-finite trial states turns into a NaN
  // derivative here, which the error test then treats as a step rejection.
  Vec eval_rhs(const Vec& y, double t) {
    Vec dy(n_);
    ++sol_.nfe_;
    try {
      rhs_(std::span<const double>(y), t, std::span<double>(dy));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::NonFinite) throw;
      dy.assign(n_, std::numeric_limits<double>::quiet_NaN());
    }
    return dy;
  }

  static double clamp_mag(double h, double mag) {
    return std::clamp(h, -mag, mag);
  }

  double step_floor(double t) const {
    return 16.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::fabs(t));
  }

  // Two trial evaluations in the usual way; both are counted in nfe. A flat
  // derivative field gets the whole span as the first trial step.
  double auto_initial_step() {
    namespace dp = dopri5;
    Vec sc(n_);
    for (std::size_t i = 0; i < n_; ++i) sc[i] = cfg_.atol + cfg_.rtol * std::fabs(y_[i]);
    auto scaled_rms = [&](const Vec& v) {
      double s = 0.0;
      for (std::size_t i = 0; i < n_; ++i) {
        const double q = v[i] / sc[i];
        s += q * q;
      }
      return std::sqrt(s / static_cast<double>(n_));
    };
    const double d0 = scaled_rms(y_);
    const double d1 = scaled_rms(k_[0]);
    double h0;
    if (d0 < 1e-5 || d1 < 1e-5) h0 = 1e-6;
    else h0 = 0.01 * d0 / d1;
    h0 = std::min(h0, hmax_);
    Vec y1(n_);
    for (std::size_t i = 0; i < n_; ++i) y1[i] = y_[i] + h0 * dir_ * k_[0][i];
    Vec f1 = eval_rhs(y1, t0_ + h0 * dir_);
    Vec df(n_);
    for (std::size_t i = 0; i < n_; ++i) df[i] = f1[i] - k_[0][i];
    const double d2 = scaled_rms(df) / h0;
    double h1;
    if (std::max(d1, d2) <= 1e-15) {
      // Flat field at trial resolution: take the span and let error control
      // object if it was wrong.
      h1 = hmax_;
      h0 = hmax_ / 100.0;
    } else {
      h1 = std::pow(0.01 / std::max(d1, d2), 0.2);
    }
    return std::min({100.0 * h0, h1, hmax_}) * dir_;
  }

  // Computes stages 2..7 and the scaled error norm; leaves the candidate
  // state in ynew_. Stage 1 is already in k_[0].
  double attempt_step(double t, double h) {
    namespace dp = dopri5;
    Vec ytmp(n_);
    auto combine = [&](std::initializer_list<std::pair<double, int>> terms) {
      ytmp = y_;
      for (auto [c, s] : terms) axpy(h * c, k_[s], ytmp);
    };
    combine({{dp::kA21, 0}});
    k_[1] = eval_rhs(ytmp, t + dp::kC[1] * h);
    combine({{dp::kA31, 0}, {dp::kA32, 1}});
    k_[2] = eval_rhs(ytmp, t + dp::kC[2] * h);
    combine({{dp::kA41, 0}, {dp::kA42, 1}, {dp::kA43, 2}});
    k_[3] = eval_rhs(ytmp, t + dp::kC[3] * h);
    combine({{dp::kA51, 0}, {dp::kA52, 1}, {dp::kA53, 2}, {dp::kA54, 3}});
    k_[4] = eval_rhs(ytmp, t + dp::kC[4] * h);
    combine({{dp::kA61, 0}, {dp::kA62, 1}, {dp::kA63, 2}, {dp::kA64, 3}, {dp::kA65, 4}});
    k_[5] = eval_rhs(ytmp, t + dp::kC[5] * h);
    // y_new uses the 5th-order weights; its derivative is stage 7 (FSAL).
    combine({{dp::kB1, 0}, {dp::kB3, 2}, {dp::kB4, 3}, {dp::kB5, 4}, {dp::kB6, 5}});
    ynew_ = ytmp;
    k_[6] = eval_rhs(ynew_, t + h);

    double err = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const double e = h * (dp::kE1 * k_[0][i] + dp::kE3 * k_[2][i] + dp::kE4 * k_[3][i] +
                            dp::kE5 * k_[4][i] + dp::kE6 * k_[5][i] + dp::kE7 * k_[6][i]);
      const double sc = cfg_.atol + cfg_.rtol * std::max(std::fabs(y_[i]), std::fabs(ynew_[i]));
      const double q = e / sc;
      err += q * q;
    }
    return std::sqrt(err / static_cast<double>(n_));
  }

  void validate_outputs(std::span<const double> t_out) const {
    double prev = t0_;
    for (double t : t_out) {
      if ((t - t0_) * dir_ < 0.0 || (t - t1_) * dir_ > 0.0)
        throw Error(ErrorKind::OutOfSpan,
                    "output time " + std::to_string(t) + " outside integration span");
      if ((t - prev) * dir_ < 0.0)
        throw Error(ErrorKind::InvalidArgument, "output times not sorted in integration order");
      prev = t;
    }
  }

  void emit_outputs(const StepRecord& rec, bool last, std::span<const double> t_out,
                    std::vector<Vec>* outputs, std::size_t& next_out) {
    if (!outputs) return;
    const double t_hi = last ? t1_ : rec.t + rec.h;
    while (next_out < t_out.size() && (t_out[next_out] - t_hi) * dir_ <= 0.0) {
      Vec v(n_);
      dense_step_eval(rec, (t_out[next_out] - rec.t) / rec.h, v);
      (*outputs)[next_out] = std::move(v);
      ++next_out;
    }
  }

  Rhs& rhs_;
  SolverConfig cfg_;
  RecordMode mode_;
  std::size_t n_;
  double t0_, t1_, dir_, hmax_;
  Vec y_, ynew_;
  std::array<Vec, 7> k_;
  DenseSolution sol_;
};

template <class Rhs>
DenseSolution solve(Rhs&& rhs, std::span<const double> z0, std::pair<double, double> span,
                    const SolverConfig& cfg, RecordMode mode = RecordMode::kDense) {
  Integrator<std::remove_reference_t<Rhs>> integ(rhs, z0, span.first, span.second, cfg, mode);
  return integ.run();
}

// States at t_out come from the step interpolants as integration proceeds:
// output times never force step endpoints and never cost rhs evaluations.
template <class Rhs>
std::pair<DenseSolution, std::vector<Vec>> solve_with_outputs(
    Rhs&& rhs, std::span<const double> z0, std::pair<double, double> span, const SolverConfig& cfg,
    std::span<const double> t_out, RecordMode mode = RecordMode::kDense) {
  Integrator<std::remove_reference_t<Rhs>> integ(rhs, z0, span.first, span.second, cfg, mode);
  std::vector<Vec> outputs;
  DenseSolution sol = integ.run(t_out, &outputs);
  return {std::move(sol), std::move(outputs)};
}

template <class Rhs>
DenseSolution solve_fixed(Rhs&& rhs, std::span<const double> z0, std::pair<double, double> span,
                          long n_steps, RecordMode mode = RecordMode::kDense) {
  SolverConfig cfg;  // tolerances unused in fixed-step mode
  Integrator<std::remove_reference_t<Rhs>> integ(rhs, z0, span.first, span.second, cfg, mode);
  return integ.run_fixed(n_steps);
}

}  // namespace odegrad
