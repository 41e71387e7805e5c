// Benchmark driver: runs one experiment from a key-value config file and
// writes plot-ready CSV into the output directory.
//
//   bench <experiment-id> --config <path> --out <dir> [--seed S] [--repeat R] [--jobs J]
//
// Exit codes: 0 success, 2 config error, 3 unrecoverable failure.
// ODEGRAD_SEED and ODEGRAD_JOBS override config values; explicit flags win.

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "odegrad/experiments.hpp"

namespace {

std::optional<long> env_long(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t pos = 0;
    const long x = std::stol(v, &pos);
    if (pos != std::string(v).size())
      throw odegrad::Error(odegrad::ErrorKind::ConfigError, "");
    return x;
  } catch (const std::exception&) {
    throw odegrad::Error(odegrad::ErrorKind::ConfigError,
                         std::string(name) + " is not an integer: " + v);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neural-ODE gradient benchmarks"};
  std::string experiment, config_path, out_dir;
  long seed = 0, repeat = 0, jobs = 0;
  app.add_option("experiment", experiment,
                 "one of: tol_grid_sweep, collapse_nfe, traj_fit, interp_compare")
      ->required();
  app.add_option("--config", config_path, "key-value config file")->required();
  app.add_option("--out", out_dir, "output directory for CSV files")->required();
  auto* seed_opt = app.add_option("--seed", seed, "base RNG seed");
  auto* repeat_opt = app.add_option("--repeat", repeat, "repeat count");
  auto* jobs_opt = app.add_option("--jobs", jobs, "parallel cell workers");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    odegrad::bench::RunOptions opts;
    opts.experiment = experiment;
    opts.out_dir = out_dir;
    if (seed_opt->count()) opts.seed = static_cast<std::uint64_t>(seed);
    else if (auto s = env_long("ODEGRAD_SEED")) opts.seed = static_cast<std::uint64_t>(*s);
    if (repeat_opt->count()) opts.repeat = repeat;
    if (jobs_opt->count()) opts.jobs = jobs;
    else if (auto j = env_long("ODEGRAD_JOBS")) opts.jobs = *j;

    const auto cfg = odegrad::bench::KvConfig::from_file(config_path);
    odegrad::bench::run_experiment(cfg, opts);
  } catch (const odegrad::Error& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return e.kind() == odegrad::ErrorKind::ConfigError ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "bench: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
