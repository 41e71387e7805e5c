#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "odegrad/csv.hpp"
#include "odegrad/diagnostics.hpp"
#include "odegrad/errors.hpp"
#include "odegrad/field.hpp"
#include "odegrad/rng.hpp"
#include "odegrad/strategies.hpp"
#include "odegrad/vec.hpp"

namespace odegrad::bench {

// Flat key-value config: "key = value" lines, '#' comments, lists comma
// separated. Every key must be consumed by the experiment that runs, so
// typos surface as config errors.
class KvConfig {
 public:
  static KvConfig from_text(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw Error(ErrorKind::ConfigError,
                    "line " + std::to_string(lineno) + " is not 'key = value': " + trimmed);
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string val = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw Error(ErrorKind::ConfigError, "empty key on line " + std::to_string(lineno));
      if (cfg.kv_.count(key))
        throw Error(ErrorKind::ConfigError, "duplicate key " + key);
      cfg.kv_[key] = val;
    }
    return cfg;
  }

  static KvConfig from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot read config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
  }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    consumed_.insert(key);
    return it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    consumed_.insert(key);
    return parse_double(it->second, key);
  }

  long get_int(const std::string& key, long dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    consumed_.insert(key);
    return parse_int(it->second, key);
  }

  Vec get_double_list(const std::string& key, const Vec& dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    consumed_.insert(key);
    Vec out;
    for (const auto& item : split(it->second)) out.push_back(parse_double(item, key));
    if (out.empty()) throw Error(ErrorKind::ConfigError, "empty list for key " + key);
    return out;
  }

  std::vector<long> get_int_list(const std::string& key, const std::vector<long>& dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    consumed_.insert(key);
    std::vector<long> out;
    for (const auto& item : split(it->second)) out.push_back(parse_int(item, key));
    if (out.empty()) throw Error(ErrorKind::ConfigError, "empty list for key " + key);
    return out;
  }

  std::vector<std::string> get_str_list(const std::string& key,
                                        const std::vector<std::string>& dflt) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) return dflt;
    consumed_.insert(key);
    auto out = split(it->second);
    if (out.empty()) throw Error(ErrorKind::ConfigError, "empty list for key " + key);
    return out;
  }

  void finish() const {
    std::string unknown;
    for (const auto& [k, v] : kv_)
      if (!consumed_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    if (!unknown.empty())
      throw Error(ErrorKind::ConfigError, "unknown config keys: " + unknown);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
      const std::string item = trim(cur);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }

  static double parse_double(const std::string& s, const std::string& key) {
    try {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "bad number '" + s + "' for key " + key);
    }
  }

  static long parse_int(const std::string& s, const std::string& key) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw Error(ErrorKind::ConfigError, "bad integer '" + s + "' for key " + key);
    }
  }

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> consumed_;
};

struct RunOptions {
  std::string experiment;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<long> repeat;
  std::optional<long> jobs;
};

namespace detail {

// Work-stealing loop over cell indices. Per-cell failures are the cell
// function's business; anything escaping it aborts the sweep.
template <class Fn>
void parallel_cells(long jobs, long count, Fn&& fn) {
  if (count <= 0) return;
  jobs = std::clamp<long>(jobs, 1, count);
  if (jobs == 1) {
    for (long i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<long> next{0};
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  std::vector<std::thread> pool;
  for (long w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (long i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline Vec random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec v(static_cast<std::size_t>(dim));
  double n = 0.0;
  do {
    for (double& x : v) x = normal(rng);
    n = norm2(v);
  } while (n < 1e-12);
  scale(v, 1.0 / n);
  return v;
}

inline Matrix matrix_from_list(const Vec& entries, const std::string& key) {
  const int d = static_cast<int>(std::lround(std::sqrt(static_cast<double>(entries.size()))));
  if (static_cast<std::size_t>(d) * d != entries.size())
    throw Error(ErrorKind::ConfigError, key + " must hold a square matrix, row-major");
  Matrix a(d, d);
  a.data = entries;
  return a;
}

inline Method parse_method(const std::string& s) {
  if (s == "direct") return Method::kDirect;
  if (s == "rdm") return Method::kRdm;
  if (s == "irdm") return Method::kIrdm;
  if (s == "checkpoint") return Method::kCheckpoint;
  throw Error(ErrorKind::ConfigError, "unknown method " + s);
}

inline InterpKind parse_interp(const std::string& s) {
  if (s == "bli") return InterpKind::kBli;
  if (s == "linear") return InterpKind::kLinear;
  if (s == "cubic") return InterpKind::kCubic;
  throw Error(ErrorKind::ConfigError, "unknown interp kind " + s);
}

// Solver trouble is a recorded outcome for a sweep cell; everything else
// aborts the run.
template <class Fn>
inline void guard_cell(Fn&& fn, bool& ok, std::string& error) {
  try {
    fn();
    ok = true;
  } catch (const SolveError& e) {
    ok = false;
    error = e.what();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::MaxStepsExceeded || e.kind() == ErrorKind::NonFinite) {
      ok = false;
      error = e.what();
    } else {
      throw;
    }
  }
}

inline void write_csv(const std::string& out_dir, const std::string& name, const CsvWriter& w) {
  std::filesystem::create_directories(out_dir);
  w.write_file((std::filesystem::path(out_dir) / name).string());
}

// The 2D cubic test system dz/dt = A z^3: weakly contractive rotation by
// default; the collapse experiment overrides A with -I.
inline Matrix default_cubic_matrix() {
  Matrix a(2, 2);
  a(0, 0) = -0.1;
  a(0, 1) = 2.0;
  a(1, 0) = -2.0;
  a(1, 1) = -0.1;
  return a;
}

}  // namespace detail

// --- tolerance x grid-size sweep -------------------------------------------

inline void exp_tol_grid_sweep(const KvConfig& cfg, std::uint64_t seed, long repeat, long jobs,
                               const std::string& out_dir) {
  const double t0 = cfg.get_double("t0", 0.0);
  const double t1 = cfg.get_double("t1", 5.0);
  const Vec z0 = cfg.get_double_list("z0", {1.0, 0.5});
  const Vec tolerances = cfg.get_double_list("tolerances", {1e-3, 1e-5, 1e-7});
  const std::vector<long> n_list = cfg.get_int_list("chebyshev_n", {4, 8, 16, 32});
  const double ref_tol = cfg.get_double("ref_tol", 1e-7);
  const std::string field_kind = cfg.get_str("field", "cubic");
  const Vec a_entries =
      cfg.get_double_list("a_matrix", detail::default_cubic_matrix().data);
  const long hidden = cfg.get_int("hidden", 16);
  const long pretrain_steps = cfg.get_int("pretrain_steps", 0);
  const double pretrain_lr = cfg.get_double("pretrain_lr", 0.02);
  cfg.finish();

  const Matrix a = detail::matrix_from_list(a_entries, "a_matrix");
  VectorField field = [&]() -> VectorField {
    if (field_kind == "cubic") return cubic_field(a);
    if (field_kind == "mlp") {
      VectorField f = mlp_field(static_cast<int>(z0.size()), static_cast<int>(hidden),
                                mix64(seed) ^ 0x5eedF1e1dULL);
      if (pretrain_steps > 0) {
        // fit the net to the cubic system before sweeping
        auto sys = [&a](std::span<const double> z, double t, std::span<double> dz) {
          (void)t;
          Vec z3(z.size());
          for (std::size_t i = 0; i < z.size(); ++i) z3[i] = z[i] * z[i] * z[i];
          const Vec out = mat_vec(a, z3);
          std::copy(out.begin(), out.end(), dz.begin());
        };
        Vec times(20);
        for (int m = 1; m <= 20; ++m) times[m - 1] = t0 + (t1 - t0) * m / 20.0;
        SolverConfig data_cfg;
        data_cfg.rtol = data_cfg.atol = 1e-10;
        auto [sol, states] = solve_with_outputs(sys, z0, {t0, t1}, data_cfg, times,
                                                RecordMode::kEndpointOnly);
        std::vector<TrainSample> data;
        for (std::size_t m = 0; m < times.size(); ++m) data.push_back({times[m], states[m]});
        SolverConfig train_cfg;
        train_cfg.rtol = train_cfg.atol = 1e-6;
        OdeProblem fit{f, z0, t0, t1, train_cfg};
        train(fit, MethodConfig::direct(), data, AdamConfig{pretrain_lr},
              static_cast<int>(pretrain_steps));
        f = fit.field;
      }
      return f;
    }
    throw Error(ErrorKind::ConfigError, "field must be cubic or mlp");
  }();

  auto rng = make_rng(seed, 0xC07);
  const LossSeed loss{detail::random_unit(rng, field.state_dim())};

  SolverConfig base;
  base.max_steps = 1000000;

  // ground truth: direct method at the reference tolerance
  OdeProblem ref_problem{field, z0, t0, t1, base.with_tol(ref_tol)};
  ref_problem.cfg.max_steps = 1000000;
  const GradientResult ref = grad(ref_problem, MethodConfig::direct(), loss);

  struct Row {
    long rep = 0;
    double tol = 0;
    long n = 0;
    bool ok = false;
    std::string error;
    double l1 = 0, l2 = 0;
    long fnfe = 0, bnfe = 0;
    double wall = 0;
  };
  const long cells = repeat * static_cast<long>(tolerances.size()) *
                     static_cast<long>(n_list.size());
  std::vector<Row> rows(static_cast<std::size_t>(cells));

  detail::parallel_cells(jobs, cells, [&](long idx) {
    Row& row = rows[static_cast<std::size_t>(idx)];
    long rest = idx;
    row.rep = rest / (tolerances.size() * n_list.size());
    rest %= tolerances.size() * n_list.size();
    row.tol = tolerances[static_cast<std::size_t>(rest / n_list.size())];
    row.n = n_list[static_cast<std::size_t>(rest % n_list.size())];
    detail::guard_cell(
        [&] {
          OdeProblem problem{field, z0, t0, t1, base.with_tol(row.tol)};
          problem.cfg.max_steps = 1000000;
          const GradientResult g =
              grad(problem, MethodConfig::irdm(static_cast<int>(row.n)), loss);
          double l1 = 0, l2 = 0;
          for (std::size_t i = 0; i < g.dl_dtheta.size(); ++i) {
            const double d = g.dl_dtheta.values()[i] - ref.dl_dtheta.values()[i];
            l1 += std::fabs(d);
            l2 += d * d;
          }
          row.l1 = l1;
          row.l2 = std::sqrt(l2);
          row.fnfe = g.stats.forward_nfe;
          row.bnfe = g.stats.backward_nfe;
          row.wall = g.stats.wall_ms;
        },
        row.ok, row.error);
  });

  CsvWriter w({"experiment", "seed", "rep", "method", "field", "tol", "chebyshev_n", "interp",
               "l1_error", "l2_error", "forward_nfe", "backward_nfe", "wall_ms", "status",
               "error"});
  for (const auto& row : rows)
    w.row({"tol_grid_sweep", std::to_string(seed), csv::fmt(row.rep), "irdm", field_kind,
           csv::fmt(row.tol), csv::fmt(row.n), "bli", csv::fmt(row.l1), csv::fmt(row.l2),
           csv::fmt(row.fnfe), csv::fmt(row.bnfe), csv::fmt(row.wall),
           row.ok ? "ok" : "failed", row.error});
  detail::write_csv(out_dir, "tol_grid_sweep.csv", w);
}

// --- collapsing-system NFE comparison ---------------------------------------

inline void exp_collapse_nfe(const KvConfig& cfg, std::uint64_t seed, long repeat, long jobs,
                             const std::string& out_dir) {
  (void)repeat;
  const double t0 = cfg.get_double("t0", 0.0);
  const double t1 = cfg.get_double("t1", 5.0);
  const Vec z0 = cfg.get_double_list("z0", {2.0, 1.0});
  const Vec tolerances = cfg.get_double_list("tolerances", {1e-5, 1e-7});
  const long n = cfg.get_int_list("chebyshev_n", {16}).front();
  const long seeds = cfg.get_int("seeds", 3);
  const double fd_step = cfg.get_double("fd_step", 1e-5);
  const long max_steps = cfg.get_int("max_steps", 2000000);
  const Vec a_entries = cfg.get_double_list("a_matrix", {-1.0, 0.0, 0.0, -1.0});
  cfg.finish();

  const Matrix a = detail::matrix_from_list(a_entries, "a_matrix");
  VectorField field = cubic_field(a);

  SolverConfig base;
  base.max_steps = max_steps;

  struct Row {
    std::uint64_t seed_i = 0;
    double tol = 0;
    Method method = Method::kRdm;
    bool ok = false;
    std::string error;
    double l1 = 0, l2 = 0, rel_l2 = 0;
    long fnfe = 0, bnfe = 0;
    double wall = 0;
    double ratio = 0;  // rdm backward nfe / irdm backward nfe, per (seed, tol)
  };

  // oracles and cotangents per seed
  std::vector<LossSeed> loss(static_cast<std::size_t>(seeds));
  std::vector<Vec> fd(static_cast<std::size_t>(seeds));
  for (long s = 0; s < seeds; ++s) {
    auto rng = make_rng(seed + static_cast<std::uint64_t>(s), 0xAB);
    loss[s] = LossSeed{detail::random_unit(rng, field.state_dim())};
    OdeProblem problem{field, z0, t0, t1, base.with_tol(1e-8)};
    fd[s] = fd_gradient(problem, loss[s], fd_step).values();
  }

  const Method methods[2] = {Method::kRdm, Method::kIrdm};
  const long cells = seeds * static_cast<long>(tolerances.size()) * 2;
  std::vector<Row> rows(static_cast<std::size_t>(cells));

  detail::parallel_cells(jobs, cells, [&](long idx) {
    Row& row = rows[static_cast<std::size_t>(idx)];
    long rest = idx;
    const long s = rest / (tolerances.size() * 2);
    rest %= tolerances.size() * 2;
    row.seed_i = seed + static_cast<std::uint64_t>(s);
    row.tol = tolerances[static_cast<std::size_t>(rest / 2)];
    row.method = methods[rest % 2];
    detail::guard_cell(
        [&] {
          OdeProblem problem{field, z0, t0, t1, base.with_tol(row.tol)};
          MethodConfig mcfg = (row.method == Method::kRdm)
                                  ? MethodConfig::rdm()
                                  : MethodConfig::irdm(static_cast<int>(n));
          const GradientResult g = grad(problem, mcfg, loss[static_cast<std::size_t>(s)]);
          double l1 = 0, l2 = 0;
          const Vec& oracle = fd[static_cast<std::size_t>(s)];
          for (std::size_t i = 0; i < oracle.size(); ++i) {
            const double d = g.dl_dtheta.values()[i] - oracle[i];
            l1 += std::fabs(d);
            l2 += d * d;
          }
          row.l1 = l1;
          row.l2 = std::sqrt(l2);
          row.rel_l2 = row.l2 / std::max(norm2(oracle), 1e-30);
          row.fnfe = g.stats.forward_nfe;
          row.bnfe = g.stats.backward_nfe;
          row.wall = g.stats.wall_ms;
        },
        row.ok, row.error);
  });

  // backward-NFE ratio per (seed, tol) pair
  for (long i = 0; i + 1 < cells; i += 2) {
    Row& rdm_row = rows[static_cast<std::size_t>(i)];
    Row& irdm_row = rows[static_cast<std::size_t>(i + 1)];
    if (rdm_row.ok && irdm_row.ok && irdm_row.bnfe > 0) {
      const double ratio =
          static_cast<double>(rdm_row.bnfe) / static_cast<double>(irdm_row.bnfe);
      rdm_row.ratio = ratio;
      irdm_row.ratio = ratio;
    }
  }

  CsvWriter w({"experiment", "seed", "tol", "method", "chebyshev_n", "l1_err_vs_fd",
               "l2_err_vs_fd", "rel_l2_err_vs_fd", "forward_nfe", "backward_nfe",
               "nfe_ratio_rdm_over_irdm", "wall_ms", "status", "error"});
  for (const auto& row : rows)
    w.row({"collapse_nfe", std::to_string(row.seed_i), csv::fmt(row.tol), to_string(row.method),
           csv::fmt(n), csv::fmt(row.l1), csv::fmt(row.l2), csv::fmt(row.rel_l2),
           csv::fmt(row.fnfe), csv::fmt(row.bnfe), csv::fmt(row.ratio), csv::fmt(row.wall),
           row.ok ? "ok" : "failed", row.error});
  detail::write_csv(out_dir, "collapse_nfe.csv", w);
}

// --- trajectory fitting ------------------------------------------------------

inline void exp_traj_fit(const KvConfig& cfg, std::uint64_t seed, long repeat, long jobs,
                         const std::string& out_dir) {
  (void)repeat;
  const double t0 = cfg.get_double("t0", 0.0);
  const double t1 = cfg.get_double("t1", 5.0);
  const Vec z0 = cfg.get_double_list("z0", {1.0, 0.5});
  const long samples = cfg.get_int("samples", 20);
  const double data_tol = cfg.get_double("data_tol", 1e-10);
  const double train_tol = cfg.get_double("train_tol", 1e-5);
  const long epochs = cfg.get_int("epochs", 300);
  const double lr = cfg.get_double("lr", 0.01);
  const long hidden = cfg.get_int("hidden", 16);
  const long n = cfg.get_int_list("chebyshev_n", {8}).front();
  const long k = cfg.get_int_list("checkpoints", {8}).front();
  const std::vector<std::string> method_names =
      cfg.get_str_list("methods", {"direct", "rdm", "irdm", "checkpoint"});
  const Vec a_entries = cfg.get_double_list("a_matrix", detail::default_cubic_matrix().data);
  cfg.finish();

  const Matrix a = detail::matrix_from_list(a_entries, "a_matrix");
  auto sys = [&a](std::span<const double> z, double t, std::span<double> dz) {
    (void)t;
    Vec z3(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) z3[i] = z[i] * z[i] * z[i];
    const Vec out = mat_vec(a, z3);
    std::copy(out.begin(), out.end(), dz.begin());
  };
  Vec times(static_cast<std::size_t>(samples));
  for (long m = 1; m <= samples; ++m)
    times[static_cast<std::size_t>(m - 1)] = t0 + (t1 - t0) * static_cast<double>(m) / samples;
  SolverConfig data_cfg;
  data_cfg.rtol = data_cfg.atol = data_tol;
  auto [data_sol, states] =
      solve_with_outputs(sys, z0, {t0, t1}, data_cfg, times, RecordMode::kEndpointOnly);
  std::vector<TrainSample> dataset;
  for (std::size_t m = 0; m < times.size(); ++m) dataset.push_back({times[m], states[m]});

  struct Run {
    std::string method;
    TrainTrace trace;
  };
  std::vector<Run> runs(method_names.size());

  detail::parallel_cells(jobs, static_cast<long>(method_names.size()), [&](long idx) {
    const std::string& name = method_names[static_cast<std::size_t>(idx)];
    const Method method = detail::parse_method(name);
    MethodConfig mcfg;
    switch (method) {
      case Method::kDirect: mcfg = MethodConfig::direct(); break;
      case Method::kRdm: mcfg = MethodConfig::rdm(); break;
      case Method::kIrdm: mcfg = MethodConfig::irdm(static_cast<int>(n)); break;
      case Method::kCheckpoint: mcfg = MethodConfig::checkpoint(static_cast<int>(k)); break;
    }
    VectorField field = mlp_field(static_cast<int>(z0.size()), static_cast<int>(hidden),
                                  mix64(seed) ^ 0x7Ea1F17ULL);
    SolverConfig train_cfg;
    train_cfg.rtol = train_cfg.atol = train_tol;
    train_cfg.max_steps = 1000000;
    OdeProblem problem{std::move(field), z0, t0, t1, train_cfg};
    runs[static_cast<std::size_t>(idx)] = {name, train(problem, mcfg, dataset,
                                                       AdamConfig{lr}, static_cast<int>(epochs))};
  });

  CsvWriter w({"experiment", "seed", "method", "tol", "chebyshev_n", "checkpoints", "epoch",
               "loss", "forward_nfe", "backward_nfe", "wall_ms", "status", "error"});
  for (const auto& run : runs) {
    for (const auto& rec : run.trace.records)
      w.row({"traj_fit", std::to_string(seed), run.method, csv::fmt(train_tol), csv::fmt(n),
             csv::fmt(k), csv::fmt(rec.epoch), csv::fmt(rec.loss), csv::fmt(rec.forward_nfe),
             csv::fmt(rec.backward_nfe), csv::fmt(rec.cum_wall_ms), "ok", ""});
    if (run.trace.diverged)
      w.row({"traj_fit", std::to_string(seed), run.method, csv::fmt(train_tol), csv::fmt(n),
             csv::fmt(k), csv::fmt(static_cast<long>(run.trace.records.size())), "", "", "", "",
             "diverged", run.trace.error});
  }
  detail::write_csv(out_dir, "traj_fit.csv", w);
}

// --- interpolant comparison --------------------------------------------------

inline void exp_interp_compare(const KvConfig& cfg, std::uint64_t seed, long repeat, long jobs,
                               const std::string& out_dir) {
  (void)repeat;
  const std::string field_kind = cfg.get_str("field", "mlp");
  const long state_dim = cfg.get_int("state_dim", 4);
  const long hidden = cfg.get_int("hidden", 8);
  const double t0 = cfg.get_double("t0", 0.0);
  const double t1 = cfg.get_double("t1", 2.0);
  const double tol = cfg.get_double("tol", 1e-8);
  const double ref_tol = cfg.get_double("ref_tol", 1e-10);
  const std::vector<long> n_list = cfg.get_int_list("chebyshev_n", {8});
  const std::vector<std::string> kinds =
      cfg.get_str_list("interp_kinds", {"bli", "linear", "cubic"});
  const long seeds = cfg.get_int("seeds", 3);
  cfg.finish();

  struct Setup {
    VectorField field;
    Vec z0;
    LossSeed loss;
    Vec ref_theta;
  };
  std::vector<Setup> setups;
  setups.reserve(static_cast<std::size_t>(seeds));
  for (long s = 0; s < seeds; ++s) {
    const std::uint64_t seed_i = seed + static_cast<std::uint64_t>(s);
    auto rng = make_rng(seed_i, 0x17);
    VectorField field = [&]() -> VectorField {
      if (field_kind == "mlp")
        return mlp_field(static_cast<int>(state_dim), static_cast<int>(hidden),
                         mix64(seed_i) ^ 0x1f1e1dULL);
      if (field_kind == "linear") {
        Matrix a(2, 2);
        std::uniform_real_distribution<double> dist(-0.8, 0.8);
        for (double& v : a.data) v = dist(rng);
        return linear_field(a);
      }
      if (field_kind == "zero") {
        Matrix a(2, 2);
        return linear_field(a);
      }
      throw Error(ErrorKind::ConfigError, "field must be mlp, linear or zero");
    }();
    const int d = field.state_dim();
    std::uniform_real_distribution<double> z0_dist(-1.0, 1.0);
    Vec z0(static_cast<std::size_t>(d));
    for (double& v : z0) v = z0_dist(rng);
    LossSeed loss{detail::random_unit(rng, d)};
    SolverConfig rcfg;
    rcfg.rtol = rcfg.atol = ref_tol;
    rcfg.max_steps = 1000000;
    OdeProblem ref_problem{field, z0, t0, t1, rcfg};
    const GradientResult ref = grad(ref_problem, MethodConfig::direct(), loss);
    setups.push_back({std::move(field), std::move(z0), std::move(loss),
                      ref.dl_dtheta.values()});
  }

  struct Row {
    std::uint64_t seed_i = 0;
    long n = 0;
    std::string kind;
    bool ok = false;
    std::string error;
    double l1 = 0, l2 = 0;
    long fnfe = 0, bnfe = 0;
    double wall = 0;
  };
  const long cells = seeds * static_cast<long>(n_list.size()) * static_cast<long>(kinds.size());
  std::vector<Row> rows(static_cast<std::size_t>(cells));

  detail::parallel_cells(jobs, cells, [&](long idx) {
    Row& row = rows[static_cast<std::size_t>(idx)];
    long rest = idx;
    const long s = rest / (n_list.size() * kinds.size());
    rest %= n_list.size() * kinds.size();
    row.seed_i = seed + static_cast<std::uint64_t>(s);
    row.n = n_list[static_cast<std::size_t>(rest / kinds.size())];
    row.kind = kinds[static_cast<std::size_t>(rest % kinds.size())];
    const Setup& setup = setups[static_cast<std::size_t>(s)];
    detail::guard_cell(
        [&] {
          SolverConfig scfg;
          scfg.rtol = scfg.atol = tol;
          scfg.max_steps = 1000000;
          OdeProblem problem{setup.field, setup.z0, t0, t1, scfg};
          const GradientResult g = grad(
              problem,
              MethodConfig::irdm(static_cast<int>(row.n), detail::parse_interp(row.kind)),
              setup.loss);
          double l1 = 0, l2 = 0;
          for (std::size_t i = 0; i < setup.ref_theta.size(); ++i) {
            const double d = g.dl_dtheta.values()[i] - setup.ref_theta[i];
            l1 += std::fabs(d);
            l2 += d * d;
          }
          row.l1 = l1;
          row.l2 = std::sqrt(l2);
          row.fnfe = g.stats.forward_nfe;
          row.bnfe = g.stats.backward_nfe;
          row.wall = g.stats.wall_ms;
        },
        row.ok, row.error);
  });

  CsvWriter w({"experiment", "seed", "field", "tol", "chebyshev_n", "interp", "method",
               "l1_error", "l2_error", "forward_nfe", "backward_nfe", "wall_ms", "status",
               "error"});
  for (const auto& row : rows)
    w.row({"interp_compare", std::to_string(row.seed_i), field_kind, csv::fmt(tol),
           csv::fmt(row.n), row.kind, "irdm", csv::fmt(row.l1), csv::fmt(row.l2),
           csv::fmt(row.fnfe), csv::fmt(row.bnfe), csv::fmt(row.wall),
           row.ok ? "ok" : "failed", row.error});
  detail::write_csv(out_dir, "interp_compare.csv", w);
}

// --- driver -------------------------------------------------------------------

inline void run_experiment(const KvConfig& cfg, const RunOptions& opts) {
  const std::string cfg_experiment = cfg.get_str("experiment", opts.experiment);
  if (cfg_experiment != opts.experiment)
    throw Error(ErrorKind::ConfigError, "config names experiment '" + cfg_experiment +
                                            "' but the command line asked for '" +
                                            opts.experiment + "'");
  const std::uint64_t seed =
      opts.seed ? *opts.seed : static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  const long repeat = opts.repeat ? *opts.repeat : cfg.get_int("repeat", 1);
  const long jobs = opts.jobs ? *opts.jobs : cfg.get_int("jobs", 1);
  if (repeat < 1) throw Error(ErrorKind::ConfigError, "repeat must be >= 1");
  if (jobs < 1) throw Error(ErrorKind::ConfigError, "jobs must be >= 1");

  if (opts.experiment == "tol_grid_sweep")
    exp_tol_grid_sweep(cfg, seed, repeat, jobs, opts.out_dir);
  else if (opts.experiment == "collapse_nfe")
    exp_collapse_nfe(cfg, seed, repeat, jobs, opts.out_dir);
  else if (opts.experiment == "traj_fit")
    exp_traj_fit(cfg, seed, repeat, jobs, opts.out_dir);
  else if (opts.experiment == "interp_compare")
    exp_interp_compare(cfg, seed, repeat, jobs, opts.out_dir);
  else
    throw Error(ErrorKind::ConfigError, "unknown experiment '" + opts.experiment + "'");
}

}  // namespace odegrad::bench
