// dpdmon: command-line front end for the dpd monitoring library.
//
// Exit codes: 0 success, 1 statistical failure (non-convergence, flagged
// experiment), 2 usage or I/O error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dpd/critval.hpp"
#include "dpd/garch.hpp"
#include "dpd/io.hpp"
#include "dpd/monitor.hpp"
#include "dpd/normal_iid.hpp"
#include "dpd/retro.hpp"
#include "dpd/simlab.hpp"

namespace {

using dpd::io::fmt17;
using dpd::io::fmt_short;
using dpd::io::join;

constexpr int kOk = 0;
constexpr int kStatFailure = 1;
constexpr int kUsage = 2;

/// Usage problem detected after CLI11 parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SeriesArgs {
  std::string path;
  bool prices = false;
  bool no_scale = false;
};

void add_series_flags(CLI::App* cmd, SeriesArgs& a, const std::string& flag, const std::string& what) {
  cmd->add_option(flag, a.path, what)->required();
}

void add_transform_flags(CLI::App* cmd, SeriesArgs& a) {
  cmd->add_flag("--prices", a.prices, "input holds prices; convert to log returns");
  cmd->add_flag("--no-scale", a.no_scale, "do not multiply log returns by 100");
}

std::vector<double> load(const SeriesArgs& a, const std::string& path) {
  auto s = dpd::io::read_series(path);
  if (!a.prices) return std::move(s.values);
  return dpd::io::log_returns(s.values, a.no_scale ? 1.0 : 100.0);
}

struct EngineArgs {
  std::string engine = "garch";
  int p = 1;
  int q = 1;
  double alpha = 0.0;
};

void add_engine_flags(CLI::App* cmd, EngineArgs& e) {
  cmd->add_option("--engine", e.engine, "normal or garch")->check(CLI::IsMember({"normal", "garch"}));
  cmd->add_option("--p", e.p, "ARCH order")->check(CLI::Range(1, dpd::garch::kMaxOrder));
  cmd->add_option("--q", e.q, "GARCH order")->check(CLI::Range(0, dpd::garch::kMaxOrder));
  cmd->add_option("--alpha", e.alpha, "DPD tuning parameter")->required();
}

dpd::retro::EngineSpec spec_of(const EngineArgs& e) {
  return e.engine == "normal" ? dpd::retro::EngineSpec::normal() : dpd::retro::EngineSpec::garch(e.p, e.q);
}

dpd::Alpha alpha_of(const EngineArgs& e) {
  try {
    return dpd::Alpha(e.alpha);
  } catch (const dpd::ConfigError& err) {
    throw UsageError(err.what());
  }
}

void check_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw UsageError("--level must lie in (0, 1)");
}

/// Sends report text to `path`, or stdout when empty.
class Sink {
 public:
  explicit Sink(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw dpd::io::IoError("cannot write " + path);
    }
  }
  std::ostream& out() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

// --- critval -------------------------------------------------------------------

struct CritvalArgs {
  int d = 0;
  double level = 0.05;
  std::string kind = "sequential";
  std::optional<std::uint64_t> seed;
  std::size_t grid_n = 4096;
  std::size_t n_mc = 100000;
};

int run_critval(const CritvalArgs& a) {
  check_level(a.level);
  if (a.d < 1 || a.d > 50) throw UsageError("--d must lie in [1, 50]");
  double c = 0.0;
  if (a.kind == "sequential") {
    c = dpd::critval::critical_value_sequential(a.d, a.level);
  } else {
    if (!a.seed) throw UsageError("--seed is required for --kind retro");
    c = dpd::critval::cached_critical_value_retro(a.d, a.level, {a.grid_n, a.n_mc, *a.seed, 0});
  }
  std::cout << fmt17(c) << '\n';
  return kOk;
}

// --- fit -----------------------------------------------------------------------

struct FitArgs {
  SeriesArgs series;
  EngineArgs engine;
  std::string out;
};

void write_fit_report(std::ostream& os, const std::string& engine, double alpha, std::size_t n, const dpd::Vector& theta,
                      double objective, const dpd::Matrix& info, double grad_norm, bool converged, int iterations,
                      int best_start) {
  os << "command = fit\n";
  os << "engine = " << engine << '\n';
  os << "alpha = " << fmt_short(alpha) << '\n';
  os << "n = " << n << '\n';
  os << "theta_hat = " << join(theta) << '\n';
  os << "objective = " << fmt17(objective) << '\n';
  os << "info_hat = " << dpd::io::join_rows(info) << '\n';
  os << "grad_norm = " << fmt17(grad_norm) << '\n';
  os << "converged = " << (converged ? "true" : "false") << '\n';
  os << "iterations = " << iterations << '\n';
  os << "best_start = " << best_start << '\n';
}

int run_fit(const FitArgs& a) {
  const auto data = load(a.series, a.series.path);
  const auto alpha = alpha_of(a.engine);
  const auto spec = spec_of(a.engine);
  Sink sink(a.out);
  try {
    if (spec.kind == dpd::retro::EngineSpec::Kind::Normal) {
      const auto f = dpd::normal::mdpde_fit_normal(data, alpha);
      write_fit_report(sink.out(), spec.describe(), alpha.value(), f.n_used, f.theta_hat.to_vector(), f.objective,
                       f.info_hat, f.grad_norm, f.converged, f.iterations, f.best_start);
    } else {
      const auto f = dpd::garch::mdpde_fit_garch(data, alpha, spec.p, spec.q);
      write_fit_report(sink.out(), spec.describe(), alpha.value(), f.n_used, f.theta_hat.to_vector(), f.objective,
                       f.info_hat, f.grad_norm, f.converged, f.iterations, f.best_start);
    }
  } catch (const dpd::OptimizationFailure& e) {
    auto& os = sink.out();
    os << "command = fit\nengine = " << spec.describe() << "\nalpha = " << fmt_short(alpha.value()) << '\n';
    os << "n = " << data.size() << '\n';
    os << "theta_hat = " << join(e.best_iterate()) << '\n';
    os << "objective = " << fmt17(e.objective()) << '\n';
    os << "grad_norm = " << fmt17(e.grad_norm()) << '\n';
    os << "converged = false\n";
    os << "error = " << e.what() << '\n';
    return kStatFailure;
  }
  return kOk;
}

// --- monitor -------------------------------------------------------------------

struct MonitorArgs {
  SeriesArgs hist;
  std::string stream_path;
  EngineArgs engine;
  std::optional<double> level;
  std::optional<double> b;
  std::optional<std::size_t> horizon;
  std::string norm = "max";
  std::string detector_csv;
  std::string out;
};

int run_monitor_cmd(const MonitorArgs& a) {
  if (a.level.has_value() == a.b.has_value()) throw UsageError("give exactly one of --level and --b");
  if (a.level) check_level(*a.level);
  if (a.b && !(*a.b > 0.0)) throw UsageError("--b must be positive");
  const auto hist = load(a.hist, a.hist.path);
  const auto stream = load(a.hist, a.stream_path);
  const auto alpha = alpha_of(a.engine);
  const auto spec = spec_of(a.engine);
  const auto norm = a.norm == "max" ? dpd::NormKind::Max : dpd::NormKind::Euclidean;
  const double b = a.b ? *a.b : dpd::critval::critical_value_sequential(static_cast<int>(spec.dim()), *a.level);
  const auto boundary = dpd::BoundaryFn::constant(b);
  const std::size_t horizon = a.horizon.value_or(stream.size());
  if (horizon == 0) throw UsageError("--horizon must be positive");

  std::optional<dpd::monitor::MonitorOutcome> run;
  dpd::Vector theta;
  try {
    if (spec.kind == dpd::retro::EngineSpec::Kind::Normal) {
      const auto f = dpd::normal::mdpde_fit_normal(hist, alpha);
      theta = f.theta_hat.to_vector();
      run = dpd::monitor::run_monitor(f, hist, stream, alpha, boundary, norm, horizon);
    } else {
      const auto f = dpd::garch::mdpde_fit_garch(hist, alpha, spec.p, spec.q);
      theta = f.theta_hat.to_vector();
      run = dpd::monitor::run_monitor(f, hist, stream, alpha, boundary, norm, horizon);
    }
  } catch (const dpd::OptimizationFailure& e) {
    std::cout << "command = monitor\nverdict = fit_failure\nerror = " << e.what() << '\n';
    return kStatFailure;
  }
  const auto& outcome = *run;

  Sink sink(a.out);
  auto& os = sink.out();
  os << "command = monitor\n";
  os << "engine = " << spec.describe() << '\n';
  os << "alpha = " << fmt_short(alpha.value()) << '\n';
  os << "n = " << hist.size() << '\n';
  os << "horizon = " << horizon << '\n';
  os << "norm = " << a.norm << '\n';
  os << "boundary = " << boundary.describe() << '\n';
  os << "theta_hat = " << join(theta) << '\n';
  os << "verdict = " << (outcome.stop_k ? "change" : "no_change") << '\n';
  os << "stop_k = " << (outcome.stop_k ? std::to_string(*outcome.stop_k) : std::string("none")) << '\n';
  os << "steps = " << outcome.detector_path.size() << '\n';
  if (a.detector_csv.empty()) {
    os << "\n";
    dpd::io::write_detector_csv(os, outcome.detector_path, boundary, hist.size());
  } else {
    std::ofstream csv(a.detector_csv);
    if (!csv) throw dpd::io::IoError("cannot write " + a.detector_csv);
    dpd::io::write_detector_csv(csv, outcome.detector_path, boundary, hist.size());
  }
  return kOk;
}

// --- retro ---------------------------------------------------------------------

struct RetroArgs {
  SeriesArgs series;
  EngineArgs engine;
  double level = 0.05;
  std::optional<std::uint64_t> seed;
  std::size_t grid_n = 4096;
  std::size_t n_mc = 100000;
  std::string out;
};

int run_retro(const RetroArgs& a) {
  check_level(a.level);
  if (!a.seed) throw UsageError("--seed is required");
  const auto data = load(a.series, a.series.path);
  const auto alpha = alpha_of(a.engine);
  const auto spec = spec_of(a.engine);
  dpd::retro::RetroOptions opts;
  opts.mc = {a.grid_n, a.n_mc, *a.seed, 0};
  dpd::retro::RetroResult r;
  try {
    r = dpd::retro::retro_test(data, alpha, spec, a.level, opts);
  } catch (const dpd::OptimizationFailure& e) {
    std::cout << "command = retro\nverdict = fit_failure\nerror = " << e.what() << '\n';
    return kStatFailure;
  }
  Sink sink(a.out);
  auto& os = sink.out();
  os << "command = retro\n";
  os << "engine = " << spec.describe() << '\n';
  os << "alpha = " << fmt_short(alpha.value()) << '\n';
  os << "n = " << data.size() << '\n';
  os << "level = " << fmt_short(a.level) << '\n';
  os << "theta_hat = " << join(r.theta_hat) << '\n';
  os << "statistic = " << fmt17(r.statistic) << '\n';
  os << "critical = " << fmt17(r.critical) << '\n';
  os << "verdict = " << (r.reject ? "reject" : "accept") << '\n';
  os << "change_point = " << r.change_point << '\n';
  os << "mc = grid_n " << a.grid_n << ", n_mc " << a.n_mc << ", seed " << *a.seed << '\n';
  return kOk;
}

// --- experiment ----------------------------------------------------------------

struct ExperimentArgs {
  std::string config;
  std::string out_dir;
  std::optional<unsigned> threads;
};

int run_experiment(const ExperimentArgs& a) {
  auto sc = dpd::io::read_scenario(a.config);
  if (a.threads) sc.threads = *a.threads;
  const auto rep = dpd::simlab::run_scenario(sc);
  dpd::io::write_experiment_summary(std::cout, rep);
  if (!a.out_dir.empty()) {
    std::filesystem::create_directories(a.out_dir);
    const std::filesystem::path dir(a.out_dir);
    auto open = [&](const char* name) {
      std::ofstream f(dir / name);
      if (!f) throw dpd::io::IoError("cannot write " + (dir / name).string());
      return f;
    };
    auto summary = open("summary.txt");
    dpd::io::write_experiment_summary(summary, rep);
    auto curves = open("rejection.csv");
    dpd::io::write_rejection_csv(curves, rep.per_alpha);
    auto delays = open("delay.csv");
    dpd::io::write_delay_csv(delays, rep);
    if (!rep.clean.empty()) {
      auto clean = open("rejection_clean.csv");
      dpd::io::write_rejection_csv(clean, rep.clean);
    }
  }
  return rep.flagged ? kStatFailure : kOk;
}

// --- simulate ------------------------------------------------------------------

struct SimulateArgs {
  std::vector<double> theta;
  std::vector<double> theta1;
  int p = 1;
  int q = 1;
  std::size_t n = 1000;
  std::size_t change_at = 0;
  std::size_t burn_in = 500;
  std::optional<std::uint64_t> seed;
  double p_outlier = 0.0;
  std::optional<double> s_scale;
  std::string out;
};

int run_simulate(const SimulateArgs& a) {
  if (!a.seed) throw UsageError("--seed is required");
  auto params = [&](const std::vector<double>& v) {
    if (v.size() != static_cast<std::size_t>(1 + a.p + a.q)) throw UsageError("parameter vector needs 1 + p + q values");
    return dpd::garch::GarchParams::from_vector(
        Eigen::Map<const dpd::Vector>(v.data(), static_cast<Eigen::Index>(v.size())), a.p, a.q);
  };
  const auto theta0 = params(a.theta);
  std::vector<double> path;
  const std::uint64_t path_seed = dpd::derive_seed(*a.seed, 0, dpd::simlab::kPathStream);
  if (!a.theta1.empty()) {
    if (a.change_at == 0 || a.change_at >= a.n) throw UsageError("--change-at must lie in [1, n)");
    path = dpd::simlab::simulate_garch_switch(theta0, a.change_at, params(a.theta1), a.n - a.change_at, a.burn_in,
                                              path_seed);
  } else {
    path = dpd::simlab::simulate_garch_path(theta0, a.n, a.burn_in, path_seed);
  }
  if (a.p_outlier > 0.0) {
    path = dpd::simlab::contaminate(path, a.p_outlier, a.s_scale.value_or(dpd::simlab::default_outlier_shift(theta0)),
                                    dpd::derive_seed(*a.seed, 0, dpd::simlab::kOutlierStream));
  }
  Sink sink(a.out);
  auto& os = sink.out();
  os << "value\n";
  for (double x : path) os << fmt17(x) << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust DPD-based parameter change monitoring for GARCH and i.i.d. normal data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "dpdmon 1.0");

  CritvalArgs crit;
  auto* c = app.add_subcommand("critval", "critical value of the sequential or retrospective test");
  c->add_option("--d", crit.d, "parameter dimension")->required();
  c->add_option("--level", crit.level, "significance level");
  c->add_option("--kind", crit.kind, "sequential or retro")->check(CLI::IsMember({"sequential", "retro"}));
  c->add_option("--seed", crit.seed, "Monte Carlo seed (retro only)");
  c->add_option("--grid-n", crit.grid_n, "bridge grid size (retro only)");
  c->add_option("--n-mc", crit.n_mc, "Monte Carlo replications (retro only)");

  FitArgs fit;
  auto* f = app.add_subcommand("fit", "minimum DPD estimate with information matrix");
  add_series_flags(f, fit.series, "--series", "input series CSV");
  add_transform_flags(f, fit.series);
  add_engine_flags(f, fit.engine);
  f->add_option("--out", fit.out, "report file (default stdout)");

  MonitorArgs mon;
  auto* m = app.add_subcommand("monitor", "sequential monitoring of a stream against a historical window");
  add_series_flags(m, mon.hist, "--hist", "historical series CSV");
  m->add_option("--stream", mon.stream_path, "monitoring series CSV")->required();
  add_transform_flags(m, mon.hist);
  add_engine_flags(m, mon.engine);
  m->add_option("--level", mon.level, "significance level of the constant boundary");
  m->add_option("--b", mon.b, "explicit constant boundary");
  m->add_option("--horizon", mon.horizon, "maximum number of monitored observations");
  m->add_option("--norm", mon.norm, "max or euclidean")->check(CLI::IsMember({"max", "euclidean"}));
  m->add_option("--detector-csv", mon.detector_csv, "write the detector path here instead of the report");
  m->add_option("--out", mon.out, "report file (default stdout)");

  RetroArgs ret;
  auto* r = app.add_subcommand("retro", "retrospective score test and change-point location");
  add_series_flags(r, ret.series, "--series", "input series CSV");
  add_transform_flags(r, ret.series);
  add_engine_flags(r, ret.engine);
  r->add_option("--level", ret.level, "significance level");
  r->add_option("--seed", ret.seed, "Monte Carlo seed for the critical value");
  r->add_option("--grid-n", ret.grid_n, "bridge grid size");
  r->add_option("--n-mc", ret.n_mc, "Monte Carlo replications");
  r->add_option("--out", ret.out, "report file (default stdout)");

  ExperimentArgs exp;
  auto* e = app.add_subcommand("experiment", "simulation experiment from a scenario config");
  e->add_option("--config", exp.config, "scenario config file")->required();
  e->add_option("--out-dir", exp.out_dir, "directory for summary.txt, rejection.csv, delay.csv");
  e->add_option("--threads", exp.threads, "worker threads (0 = hardware)");

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "simulate a GARCH path (optionally with a change or outliers)");
  s->add_option("--theta", sim.theta, "omega,alpha_1..alpha_p,beta_1..beta_q")->required()->delimiter(',');
  s->add_option("--theta1", sim.theta1, "post-change parameters")->delimiter(',');
  s->add_option("--p", sim.p, "ARCH order")->check(CLI::Range(1, dpd::garch::kMaxOrder));
  s->add_option("--q", sim.q, "GARCH order")->check(CLI::Range(0, dpd::garch::kMaxOrder));
  s->add_option("--n", sim.n, "path length");
  s->add_option("--change-at", sim.change_at, "number of observations before the change");
  s->add_option("--burn-in", sim.burn_in, "discarded warm-up length");
  s->add_option("--seed", sim.seed, "master seed");
  s->add_option("--p-outlier", sim.p_outlier, "outlier probability");
  s->add_option("--s-scale", sim.s_scale, "outlier shift (default 5 stationary sd)");
  s->add_option("--out", sim.out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ok) {
    return app.exit(ok);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (*c) return run_critval(crit);
    if (*f) return run_fit(fit);
    if (*m) return run_monitor_cmd(mon);
    if (*r) return run_retro(ret);
    if (*e) return run_experiment(exp);
    if (*s) return run_simulate(sim);
  } catch (const UsageError& err) {
    std::cerr << "usage error: " << err.what() << '\n';
    return kUsage;
  } catch (const dpd::io::ParseError& err) {
    std::cerr << "parse error: " << err.what() << '\n';
    return kUsage;
  } catch (const dpd::io::IoError& err) {
    std::cerr << "io error: " << err.what() << '\n';
    return kUsage;
  } catch (const dpd::ConfigError& err) {
    std::cerr << "configuration error: " << err.what() << '\n';
    return kUsage;
  } catch (const dpd::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kStatFailure;
  }
  return kUsage;
}
