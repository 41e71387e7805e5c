#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <sstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "odegrad/errors.hpp"
#include "odegrad/param_vector.hpp"
#include "odegrad/rng.hpp"
#include "odegrad/vec.hpp"

namespace odegrad {

// Layer kinds for the right-hand side f(z, t, theta). All activations are
// smooth, so trajectories of the resulting fields are analytic.
enum class LayerKind { Affine, Tanh, Softplus, Cube, ConcatSquash };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Affine: return "affine";
    case LayerKind::Tanh: return "tanh";
    case LayerKind::Softplus: return "softplus";
    case LayerKind::Cube: return "cube";
    case LayerKind::ConcatSquash: return "concatsquash";
  }
  return "?";
}

struct LayerSpec {
  LayerKind kind = LayerKind::Tanh;
  int in = 0;        // parametric layers only
  int out = 0;       // parametric layers only
  bool bias = true;  // affine only

  bool parametric() const {
    return kind == LayerKind::Affine || kind == LayerKind::ConcatSquash;
  }
};

// Layer list plus state dimension. Widths must chain: parametric layers map
// in -> out, elementwise layers preserve width, and the composite maps
// state_dim -> state_dim.
struct Architecture {
  int state_dim = 0;
  std::vector<LayerSpec> layers;

  void validate() const {
    if (state_dim < 1) throw Error(ErrorKind::InvalidArgument, "state_dim must be >= 1");
    if (layers.empty()) throw Error(ErrorKind::InvalidArgument, "architecture has no layers");
    int width = state_dim;
    for (const auto& l : layers) {
      if (l.parametric()) {
        if (l.in != width)
          throw Error(ErrorKind::InvalidArgument,
                      "layer input width " + std::to_string(l.in) + " does not chain from " +
                          std::to_string(width));
        if (l.out < 1) throw Error(ErrorKind::InvalidArgument, "layer output width must be >= 1");
        width = l.out;
      }
    }
    if (width != state_dim)
      throw Error(ErrorKind::InvalidArgument, "architecture output width " +
                                                  std::to_string(width) + " != state_dim " +
                                                  std::to_string(state_dim));
  }

  std::vector<ParamSegment> param_layout() const {
    std::vector<ParamSegment> segs;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      const std::string p = "L" + std::to_string(i) + ".";
      if (l.kind == LayerKind::Affine) {
        segs.push_back({p + "W", l.out, l.in, 0});
        if (l.bias) segs.push_back({p + "b", l.out, 1, 0});
      } else if (l.kind == LayerKind::ConcatSquash) {
        segs.push_back({p + "W", l.out, l.in, 0});
        segs.push_back({p + "b1", l.out, 1, 0});
        segs.push_back({p + "c", l.out, 1, 0});
        segs.push_back({p + "b2", l.out, 1, 0});
        segs.push_back({p + "b3", l.out, 1, 0});
      }
    }
    return segs;
  }

  // Plain text key-value form, one "layer = kind [in out] [nobias]" line per
  // layer:
  //   state_dim = 2
  //   layer = affine 2 16
  //   layer = tanh
  //   layer = affine 16 2 nobias
  std::string to_text() const {
    std::ostringstream out;
    out << "state_dim = " << state_dim << "\n";
    for (const auto& l : layers) {
      out << "layer = " << to_string(l.kind);
      if (l.parametric()) out << " " << l.in << " " << l.out;
      if (l.kind == LayerKind::Affine && !l.bias) out << " nobias";
      out << "\n";
    }
    return out.str();
  }

  static Architecture from_text(std::string_view text) {
    Architecture arch;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      std::istringstream key_in(line.substr(0, eq));
      std::string key;
      key_in >> key;
      std::istringstream val_in(line.substr(eq + 1));
      if (key == "state_dim") {
        if (!(val_in >> arch.state_dim))
          throw Error(ErrorKind::InvalidArgument, "bad state_dim line: " + line);
      } else if (key == "layer") {
        std::string kind;
        val_in >> kind;
        LayerSpec l;
        if (kind == "affine") l.kind = LayerKind::Affine;
        else if (kind == "tanh") l.kind = LayerKind::Tanh;
        else if (kind == "softplus") l.kind = LayerKind::Softplus;
        else if (kind == "cube") l.kind = LayerKind::Cube;
        else if (kind == "concatsquash") l.kind = LayerKind::ConcatSquash;
        else throw Error(ErrorKind::InvalidArgument, "unknown layer kind " + kind);
        if (l.parametric()) {
          if (!(val_in >> l.in >> l.out))
            throw Error(ErrorKind::InvalidArgument, "layer needs in/out widths: " + line);
          std::string flag;
          if (val_in >> flag) {
            if (flag == "nobias" && l.kind == LayerKind::Affine) l.bias = false;
            else throw Error(ErrorKind::InvalidArgument, "unknown layer flag " + flag);
          }
        }
        arch.layers.push_back(l);
      } else if (!key.empty()) {
        throw Error(ErrorKind::InvalidArgument, "unknown architecture key " + key);
      }
    }
    arch.validate();
    return arch;
  }
};

// Saved intermediates for one field evaluation. A tape belongs to the eval
// that produced it; replaying it in reverse is deterministic and repeatable.
// set_params invalidates outstanding tapes via the version stamp.
struct Tape {
  double t = 0.0;
  std::uint64_t field_version = 0;
  const void* field_id = nullptr;
  std::vector<Vec> inputs;  // input vector of each layer
  std::vector<Vec> aux1;    // tanh: output; concatsquash: u = Wz + b1
  std::vector<Vec> aux2;    // concatsquash: g = sigmoid(t c + b2)
};

struct EvalResult {
  Vec dz;
  Tape tape;
};

namespace detail {

inline double softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  return x > 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Parameter offsets of one layer within the flat value vector.
struct LayerOffsets {
  std::size_t w = 0, b = 0, b1 = 0, c = 0, b2 = 0, b3 = 0;
};

}  // namespace detail

// Parametric vector field f(z, t, theta). Evaluation records a tape; VJPs
// replay it. Immutable after construction except set_params, which must not
// race with in-flight evals.
class VectorField {
 public:
  VectorField(Architecture arch, std::uint64_t init_seed) : arch_(std::move(arch)) {
    arch_.validate();
    params_ = ParamVector(arch_.param_layout());
    cache_offsets();
    init_params(init_seed);
  }

  VectorField(Architecture arch, ParamVector params) : arch_(std::move(arch)) {
    arch_.validate();
    ParamVector expected(arch_.param_layout());
    if (expected.size() != params.size())
      throw Error(ErrorKind::DimensionMismatch, "params do not match architecture layout");
    params_ = std::move(params);
    cache_offsets();
  }

  int state_dim() const { return arch_.state_dim; }
  int param_dim() const { return static_cast<int>(params_.size()); }
  const Architecture& arch() const { return arch_; }
  const ParamVector& params() const { return params_; }
  std::uint64_t version() const { return version_; }

  void set_params(const ParamVector& p) {
    if (p.size() != params_.size())
      throw Error(ErrorKind::DimensionMismatch, "set_params size mismatch");
    params_.values() = p.values();
    ++version_;
  }

  void set_param_values(const Vec& v) {
    if (v.size() != params_.size())
      throw Error(ErrorKind::DimensionMismatch, "set_param_values size mismatch");
    params_.values() = v;
    ++version_;
  }

  ParamVector zero_cotangent() const { return ParamVector::zeros_like(params_); }

  // f(z, t, theta) plus the tape for later VJPs.
  EvalResult eval(std::span<const double> z, double t) const {
    check_input(z, t);
    EvalResult res;
    res.tape.t = t;
    res.tape.field_version = version_;
    res.tape.field_id = this;
    res.tape.inputs.reserve(arch_.layers.size());
    res.tape.aux1.resize(arch_.layers.size());
    res.tape.aux2.resize(arch_.layers.size());
    Vec x(z.begin(), z.end());
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
      res.tape.inputs.push_back(x);
      x = apply_layer(i, x, t, &res.tape);
    }
    res.dz = std::move(x);
    return res;
  }

  // Value-only path for solver right-hand sides; no tape allocation.
  void eval_value(std::span<const double> z, double t, std::span<double> dz) const {
    check_input(z, t);
    Vec x(z.begin(), z.end());
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) x = apply_layer(i, x, t, nullptr);
    if (dz.size() != x.size())
      throw Error(ErrorKind::DimensionMismatch, "output span size mismatch");
    std::copy(x.begin(), x.end(), dz.begin());
  }

  // Fused reverse pass: writes a^T df/dz into xbar_out and, when pbar is
  // non-empty (size param_dim), accumulates a^T df/dtheta into it.
  void vjp_into(const Tape& tape, std::span<const double> a, std::span<double> xbar_out,
                std::span<double> pbar) const {
    check_tape(tape, a);
    if (!pbar.empty() && pbar.size() != params_.size())
      throw Error(ErrorKind::DimensionMismatch, "param cotangent size mismatch");
    Vec xbar(a.begin(), a.end());
    for (std::size_t i = arch_.layers.size(); i-- > 0;)
      xbar = backprop_layer(i, tape, xbar, pbar);
    if (xbar_out.size() != xbar.size())
      throw Error(ErrorKind::DimensionMismatch, "state cotangent size mismatch");
    std::copy(xbar.begin(), xbar.end(), xbar_out.begin());
  }

  // a^T df/dz at the tape's (z, t, theta).
  Vec vjp_state(const Tape& tape, std::span<const double> a) const {
    Vec out(a.size());
    vjp_into(tape, a, out, {});
    return out;
  }

  // a^T df/dtheta at the tape's (z, t, theta), shaped like the params.
  ParamVector vjp_params(const Tape& tape, std::span<const double> a) const {
    ParamVector grad = zero_cotangent();
    Vec scratch(a.size());
    vjp_into(tape, a, scratch, grad.values());
    return grad;
  }

  // df/dz as a dense matrix, row i from a VJP with the unit cotangent e_i.
  Matrix jacobian_state(std::span<const double> z, double t) const {
    EvalResult r = eval(z, t);
    const int d = state_dim();
    Matrix jac(d, d);
    Vec e(static_cast<std::size_t>(d), 0.0);
    Vec row(static_cast<std::size_t>(d));
    for (int i = 0; i < d; ++i) {
      e[i] = 1.0;
      vjp_into(r.tape, e, row, {});
      for (int j = 0; j < d; ++j) jac(i, j) = row[j];
      e[i] = 0.0;
    }
    return jac;
  }

 private:
  void cache_offsets() {
    offsets_.clear();
    offsets_.resize(arch_.layers.size());
    for (std::size_t i = 0; i < arch_.layers.size(); ++i) {
      const auto& l = arch_.layers[i];
      if (!l.parametric()) continue;
      const std::string p = "L" + std::to_string(i) + ".";
      auto& off = offsets_[i];
      off.w = params_.segment_info(p + "W").offset;
      if (l.kind == LayerKind::Affine) {
        if (l.bias) off.b = params_.segment_info(p + "b").offset;
      } else {
        off.b1 = params_.segment_info(p + "b1").offset;
        off.c = params_.segment_info(p + "c").offset;
        off.b2 = params_.segment_info(p + "b2").offset;
        off.b3 = params_.segment_info(p + "b3").offset;
      }
    }
  }

  void check_input(std::span<const double> z, double t) const {
    if (static_cast<int>(z.size()) != arch_.state_dim)
      throw Error(ErrorKind::DimensionMismatch,
                  "state size " + std::to_string(z.size()) + " != state_dim " +
                      std::to_string(arch_.state_dim));
    if (!all_finite(z) || !std::isfinite(t))
      throw Error(ErrorKind::NonFinite, "non-finite field input");
  }

  void check_tape(const Tape& tape, std::span<const double> a) const {
    if (tape.field_id != this || tape.field_version != version_)
      throw Error(ErrorKind::InvalidTape, "tape does not match this field's current parameters");
    if (tape.inputs.size() != arch_.layers.size())
      throw Error(ErrorKind::InvalidTape, "tape layer count mismatch");
    if (static_cast<int>(a.size()) != arch_.state_dim)
      throw Error(ErrorKind::DimensionMismatch, "cotangent size mismatch");
  }

  Vec apply_layer(std::size_t li, const Vec& x, double t, Tape* tape) const {
    const auto& l = arch_.layers[li];
    const double* pv = params_.values().data();
    const auto& off = offsets_[li];
    switch (l.kind) {
      case LayerKind::Affine: {
        const double* w = pv + off.w;
        Vec y(static_cast<std::size_t>(l.out), 0.0);
        for (int i = 0; i < l.out; ++i) {
          double s = 0.0;
          const double* wrow = w + static_cast<std::size_t>(i) * l.in;
          for (int j = 0; j < l.in; ++j) s += wrow[j] * x[j];
          y[i] = s;
        }
        if (l.bias) {
          const double* b = pv + off.b;
          for (int i = 0; i < l.out; ++i) y[i] += b[i];
        }
        return y;
      }
      case LayerKind::Tanh: {
        Vec y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
        if (tape) tape->aux1[li] = y;
        return y;
      }
      case LayerKind::Softplus: {
        Vec y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = detail::softplus(x[i]);
        return y;
      }
      case LayerKind::Cube: {
        Vec y(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * x[i] * x[i];
        return y;
      }
      case LayerKind::ConcatSquash: {
        // (W z + b1) .* sigmoid(t c + b2) + t b3
        const double* w = pv + off.w;
        const double* b1 = pv + off.b1;
        const double* c = pv + off.c;
        const double* b2 = pv + off.b2;
        const double* b3 = pv + off.b3;
        Vec u(static_cast<std::size_t>(l.out));
        Vec g(static_cast<std::size_t>(l.out));
        Vec y(static_cast<std::size_t>(l.out));
        for (int i = 0; i < l.out; ++i) {
          double s = b1[i];
          const double* wrow = w + static_cast<std::size_t>(i) * l.in;
          for (int j = 0; j < l.in; ++j) s += wrow[j] * x[j];
          u[i] = s;
          g[i] = detail::sigmoid(t * c[i] + b2[i]);
          y[i] = u[i] * g[i] + t * b3[i];
        }
        if (tape) {
          tape->aux1[li] = u;
          tape->aux2[li] = g;
        }
        return y;
      }
    }
    throw Error(ErrorKind::InvalidArgument, "unreachable layer kind");
  }

  // Propagates the cotangent through layer li; accumulates parameter
  // cotangents into pbar when non-empty.
  Vec backprop_layer(std::size_t li, const Tape& tape, const Vec& ybar,
                     std::span<double> pbar) const {
    const auto& l = arch_.layers[li];
    const Vec& x = tape.inputs[li];
    const double* pv = params_.values().data();
    const auto& off = offsets_[li];
    switch (l.kind) {
      case LayerKind::Affine: {
        const double* w = pv + off.w;
        Vec xbar(static_cast<std::size_t>(l.in), 0.0);
        for (int i = 0; i < l.out; ++i) {
          const double* wrow = w + static_cast<std::size_t>(i) * l.in;
          for (int j = 0; j < l.in; ++j) xbar[j] += ybar[i] * wrow[j];
        }
        if (!pbar.empty()) {
          double* wbar = pbar.data() + off.w;
          for (int i = 0; i < l.out; ++i) {
            double* wbrow = wbar + static_cast<std::size_t>(i) * l.in;
            for (int j = 0; j < l.in; ++j) wbrow[j] += ybar[i] * x[j];
          }
          if (l.bias) {
            double* bbar = pbar.data() + off.b;
            for (int i = 0; i < l.out; ++i) bbar[i] += ybar[i];
          }
        }
        return xbar;
      }
      case LayerKind::Tanh: {
        const Vec& y = tape.aux1[li];
        Vec xbar(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xbar[i] = ybar[i] * (1.0 - y[i] * y[i]);
        return xbar;
      }
      case LayerKind::Softplus: {
        Vec xbar(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xbar[i] = ybar[i] * detail::sigmoid(x[i]);
        return xbar;
      }
      case LayerKind::Cube: {
        Vec xbar(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) xbar[i] = ybar[i] * 3.0 * x[i] * x[i];
        return xbar;
      }
      case LayerKind::ConcatSquash: {
        const double* w = pv + off.w;
        const Vec& u = tape.aux1[li];
        const Vec& g = tape.aux2[li];
        const double t = tape.t;
        Vec ubar(static_cast<std::size_t>(l.out));
        Vec sbar(static_cast<std::size_t>(l.out));
        for (int i = 0; i < l.out; ++i) {
          ubar[i] = ybar[i] * g[i];
          sbar[i] = ybar[i] * u[i] * g[i] * (1.0 - g[i]);
        }
        Vec xbar(static_cast<std::size_t>(l.in), 0.0);
        for (int i = 0; i < l.out; ++i) {
          const double* wrow = w + static_cast<std::size_t>(i) * l.in;
          for (int j = 0; j < l.in; ++j) xbar[j] += ubar[i] * wrow[j];
        }
        if (!pbar.empty()) {
          double* wbar = pbar.data() + off.w;
          double* b1bar = pbar.data() + off.b1;
          double* cbar = pbar.data() + off.c;
          double* b2bar = pbar.data() + off.b2;
          double* b3bar = pbar.data() + off.b3;
          for (int i = 0; i < l.out; ++i) {
            double* wbrow = wbar + static_cast<std::size_t>(i) * l.in;
            for (int j = 0; j < l.in; ++j) wbrow[j] += ubar[i] * x[j];
            b1bar[i] += ubar[i];
            cbar[i] += t * sbar[i];
            b2bar[i] += sbar[i];
            b3bar[i] += t * ybar[i];
          }
        }
        return xbar;
      }
    }
    throw Error(ErrorKind::InvalidArgument, "unreachable layer kind");
  }

  // Uniform in [-s, s] with s = 1/sqrt(fan_in), drawn in layout order.
  void init_params(std::uint64_t seed) {
    auto rng = make_rng(seed);
    for (std::size_t li = 0; li < arch_.layers.size(); ++li) {
      const auto& l = arch_.layers[li];
      if (!l.parametric()) continue;
      const double s = 1.0 / std::sqrt(static_cast<double>(std::max(1, l.in)));
      std::uniform_real_distribution<double> dist(-s, s);
      const std::string p = "L" + std::to_string(li) + ".";
      auto fill = [&](const std::string& name) {
        for (double& v : params_.segment(name)) v = dist(rng);
      };
      if (l.kind == LayerKind::Affine) {
        fill(p + "W");
        if (l.bias) fill(p + "b");
      } else {
        fill(p + "W");
        fill(p + "b1");
        fill(p + "c");
        fill(p + "b2");
        fill(p + "b3");
      }
    }
  }

  Architecture arch_;
  ParamVector params_;
  std::vector<detail::LayerOffsets> offsets_;
  std::uint64_t version_ = 0;
};

// --- common field builders ---

// f(z) = A z, parameters are the entries of A.
inline VectorField linear_field(const Matrix& a) {
  Architecture arch;
  arch.state_dim = a.rows;
  arch.layers.push_back({LayerKind::Affine, a.cols, a.rows, /*bias=*/false});
  VectorField f(arch, /*init_seed=*/0);
  ParamVector p(arch.param_layout());
  auto w = p.segment("L0.W");
  std::copy(a.data.begin(), a.data.end(), w.begin());
  f.set_params(p);
  return f;
}

inline VectorField scalar_linear_field(double theta) {
  Matrix a(1, 1);
  a(0, 0) = theta;
  return linear_field(a);
}

// f(z) = A z^3 (componentwise cube, then the linear map).
inline VectorField cubic_field(const Matrix& a) {
  Architecture arch;
  arch.state_dim = a.rows;
  arch.layers.push_back({LayerKind::Cube});
  arch.layers.push_back({LayerKind::Affine, a.cols, a.rows, /*bias=*/false});
  VectorField f(arch, 0);
  ParamVector p(arch.param_layout());
  auto w = p.segment("L1.W");
  std::copy(a.data.begin(), a.data.end(), w.begin());
  f.set_params(p);
  return f;
}

// Two-layer tanh MLP: affine(d -> hidden), tanh, affine(hidden -> d).
inline VectorField mlp_field(int state_dim, int hidden, std::uint64_t seed) {
  Architecture arch;
  arch.state_dim = state_dim;
  arch.layers.push_back({LayerKind::Affine, state_dim, hidden, true});
  arch.layers.push_back({LayerKind::Tanh});
  arch.layers.push_back({LayerKind::Affine, hidden, state_dim, true});
  return VectorField(arch, seed);
}

}  // namespace odegrad
