#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "odegrad/csv.hpp"
#include "odegrad/errors.hpp"
#include "odegrad/vec.hpp"

namespace odegrad {

// First-kind Chebyshev points x_n = cos((2n+1)pi/(2N+2)), n = 0..N, mapped
// affinely onto [t0, t1], with the matching barycentric weights
// w_n = (-1)^n sin((2n+1)pi/(2N+2)). The points lie strictly inside the
// span. Nodes are stored descending in t so the node/weight index pairing
// matches the unmapped cosine ordering; ascending_nodes() gives consumers
// the sorted view (weights reindex by the same reversal).
class ChebyshevGrid {
 public:
  ChebyshevGrid(int n, double t0, double t1) : n_(n), t0_(t0), t1_(t1) {
    if (n < 1) throw Error(ErrorKind::InvalidArgument, "Chebyshev grid needs N >= 1");
    if (!(t0 < t1)) throw Error(ErrorKind::InvalidArgument, "grid span needs t0 < t1");
    nodes_.resize(n + 1);
    weights_.resize(n + 1);
    for (int i = 0; i <= n; ++i) {
      const double angle = (2.0 * i + 1.0) * std::numbers::pi / (2.0 * n + 2.0);
      const double x = std::cos(angle);  // descending in i
      nodes_[i] = t0 + 0.5 * (x + 1.0) * (t1 - t0);
      weights_[i] = ((i % 2 == 0) ? 1.0 : -1.0) * std::sin(angle);
    }
  }

  int n() const { return n_; }
  int node_count() const { return n_ + 1; }
  double t0() const { return t0_; }
  double t1() const { return t1_; }
  const Vec& nodes() const { return nodes_; }
  const Vec& weights() const { return weights_; }

  Vec ascending_nodes() const { return Vec(nodes_.rbegin(), nodes_.rend()); }
  Vec ascending_weights() const { return Vec(weights_.rbegin(), weights_.rend()); }

 private:
  int n_;
  double t0_, t1_;
  Vec nodes_;
  Vec weights_;
};

// Vector-valued barycentric Lagrange interpolant over a Chebyshev grid.
// Evaluation is O(N) per component set; queries that coincide with a node
// (within 1e-14 of the span) return the stored value, which guards the
// 1/(t - tau_n) singularity. Extrapolation is refused.
class BaryInterpolant {
 public:
  BaryInterpolant(ChebyshevGrid grid, std::vector<Vec> node_values)
      : grid_(std::move(grid)), values_(std::move(node_values)) {
    if (static_cast<int>(values_.size()) != grid_.node_count())
      throw Error(ErrorKind::DimensionMismatch, "node value count != N+1");
    dim_ = values_.empty() ? 0 : static_cast<int>(values_[0].size());
    for (const auto& v : values_) {
      if (static_cast<int>(v.size()) != dim_)
        throw Error(ErrorKind::DimensionMismatch, "ragged node values");
      if (!all_finite(v)) throw Error(ErrorKind::NonFinite, "non-finite node value");
    }
  }

  const ChebyshevGrid& grid() const { return grid_; }
  const std::vector<Vec>& node_values() const { return values_; }
  int dim() const { return dim_; }

  void eval_into(double t, std::span<double> out) const {
    if (t < grid_.t0() || t > grid_.t1())
      throw Error(ErrorKind::OutOfSpan, "barycentric eval at t=" + std::to_string(t) +
                                            " outside [" + std::to_string(grid_.t0()) + ", " +
                                            std::to_string(grid_.t1()) + "]");
    const Vec& tau = grid_.nodes();
    const Vec& w = grid_.weights();
    const double node_tol = 1e-14 * (grid_.t1() - grid_.t0());
    for (int i = 0; i <= grid_.n(); ++i) {
      if (std::fabs(t - tau[i]) <= node_tol) {
        std::copy(values_[i].begin(), values_[i].end(), out.begin());
        return;
      }
    }
    double den = 0.0;
    std::fill(out.begin(), out.end(), 0.0);
    for (int i = 0; i <= grid_.n(); ++i) {
      const double q = w[i] / (t - tau[i]);
      den += q;
      axpy(q, values_[i], out);
    }
    scale(out, 1.0 / den);
  }

  Vec eval(double t) const {
    Vec out(dim_);
    eval_into(t, out);
    return out;
  }

  // One row per node: time then state components.
  std::string to_csv() const {
    std::vector<std::string> header = {"t"};
    for (int i = 0; i < dim_; ++i) header.push_back("z" + std::to_string(i));
    CsvWriter w(header);
    for (int i = 0; i <= grid_.n(); ++i) {
      std::vector<std::string> row = {csv::fmt(grid_.nodes()[i])};
      for (double v : values_[i]) row.push_back(csv::fmt(v));
      w.row(row);
    }
    return w.str();
  }

 private:
  ChebyshevGrid grid_;
  std::vector<Vec> values_;
  int dim_ = 0;
};

// Max over a uniform sample grid of the componentwise-max deviation from a
// reference trajectory.
inline double interp_error(const BaryInterpolant& interp,
                           const std::function<Vec(double)>& reference, int sample_count) {
  if (sample_count < 2) throw Error(ErrorKind::InvalidArgument, "sample_count must be >= 2");
  const double t0 = interp.grid().t0();
  const double t1 = interp.grid().t1();
  double worst = 0.0;
  Vec buf(interp.dim());
  for (int s = 0; s < sample_count; ++s) {
    const double t = t0 + (t1 - t0) * static_cast<double>(s) / (sample_count - 1);
    interp.eval_into(t, buf);
    const Vec ref = reference(t);
    for (int i = 0; i < interp.dim(); ++i) worst = std::max(worst, std::fabs(buf[i] - ref[i]));
  }
  return worst;
}

enum class PiecewiseKind { kLinear, kCubicHermite };

// Piecewise interpolant over strictly increasing node times. Cubic Hermite
// needs node derivatives (right-hand side values at the nodes).
class PiecewiseInterpolant {
 public:
  PiecewiseInterpolant(PiecewiseKind kind, Vec times, std::vector<Vec> values,
                       std::vector<Vec> derivatives = {})
      : kind_(kind), times_(std::move(times)), values_(std::move(values)),
        derivs_(std::move(derivatives)) {
    if (times_.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least two nodes");
    if (values_.size() != times_.size())
      throw Error(ErrorKind::DimensionMismatch, "value count != node count");
    for (std::size_t i = 1; i < times_.size(); ++i)
      if (!(times_[i] > times_[i - 1]))
        throw Error(ErrorKind::InvalidArgument, "node times must be strictly increasing");
    dim_ = static_cast<int>(values_[0].size());
    if (kind_ == PiecewiseKind::kCubicHermite) {
      if (derivs_.size() != times_.size())
        throw Error(ErrorKind::InvalidArgument, "cubic Hermite needs a derivative per node");
    }
  }

  double t0() const { return times_.front(); }
  double t1() const { return times_.back(); }
  int dim() const { return dim_; }

  void eval_into(double t, std::span<double> out) const {
    if (t < times_.front() || t > times_.back())
      throw Error(ErrorKind::OutOfSpan, "piecewise eval outside node range");
    // exact node hit
    for (std::size_t i = 0; i < times_.size(); ++i) {
      if (t == times_[i]) {
        std::copy(values_[i].begin(), values_[i].end(), out.begin());
        return;
      }
    }
    std::size_t hi = 1;
    while (hi + 1 < times_.size() && times_[hi] < t) ++hi;
    const std::size_t lo = hi - 1;
    const double h = times_[hi] - times_[lo];
    const double theta = (t - times_[lo]) / h;
    if (kind_ == PiecewiseKind::kLinear) {
      for (int i = 0; i < dim_; ++i)
        out[i] = (1.0 - theta) * values_[lo][i] + theta * values_[hi][i];
    } else {
      const double th2 = theta * theta;
      const double th3 = th2 * theta;
      const double h00 = 2.0 * th3 - 3.0 * th2 + 1.0;
      const double h10 = th3 - 2.0 * th2 + theta;
      const double h01 = -2.0 * th3 + 3.0 * th2;
      const double h11 = th3 - th2;
      for (int i = 0; i < dim_; ++i)
        out[i] = h00 * values_[lo][i] + h10 * h * derivs_[lo][i] + h01 * values_[hi][i] +
                 h11 * h * derivs_[hi][i];
    }
  }

  Vec eval(double t) const {
    Vec out(dim_);
    eval_into(t, out);
    return out;
  }

 private:
  PiecewiseKind kind_;
  Vec times_;
  std::vector<Vec> values_;
  std::vector<Vec> derivs_;
  int dim_;
};

inline Vec piecewise_eval(PiecewiseKind kind, const Vec& times, const std::vector<Vec>& values,
                          const std::vector<Vec>* derivatives, double t) {
  PiecewiseInterpolant interp(kind, times, values,
                              derivatives ? *derivatives : std::vector<Vec>{});
  return interp.eval(t);
}

}  // namespace odegrad
