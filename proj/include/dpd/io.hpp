#pragma once

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/simlab.hpp"

namespace dpd::io {

/// File missing or unreadable.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed input row; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& why)
      : Error(file + ":" + std::to_string(line) + ": " + why), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Shortest text that parses back to the same double.
inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Shortest text that parses back to the same double; used for echoed inputs and labels.
inline std::string fmt_short(double x) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  std::string tmp(s);
  char* end = nullptr;
  const double v = std::strtod(tmp.c_str(), &end);
  if (end != tmp.c_str() + tmp.size()) return std::nullopt;
  return v;
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.emplace_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

struct Series {
  std::vector<double> values;
  std::vector<std::string> timestamps;  ///< empty for single-column files
};

/**
 * Reads `value` or `timestamp,value` rows. Blank lines and lines starting with '#'
 * are skipped; a first row equal to `value` or `timestamp,value` is a header.
 */
inline Series parse_series(std::istream& in, const std::string& name = "<input>") {
  Series s;
  std::string line;
  std::size_t lineno = 0;
  bool seen_data = false;
  std::optional<std::size_t> columns;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto cells = split(t, ',');
    if (!seen_data && (t == "value" || (cells.size() == 2 && cells[0] == "timestamp" && cells[1] == "value"))) {
      seen_data = true;
      columns = cells.size();
      continue;
    }
    seen_data = true;
    if (cells.size() > 2) throw ParseError(name, lineno, "expected 1 or 2 columns");
    if (columns && *columns != cells.size()) throw ParseError(name, lineno, "inconsistent column count");
    columns = cells.size();
    const auto v = parse_double(cells.back());
    if (!v) throw ParseError(name, lineno, "value is not a number");
    if (!std::isfinite(*v)) throw ParseError(name, lineno, "value is not finite");
    if (cells.size() == 2) s.timestamps.push_back(cells[0]);
    s.values.push_back(*v);
  }
  return s;
}

inline Series read_series(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_series(in, path);
}

/// r_t = scale * (log P_t - log P_{t-1}); needs strictly positive prices.
inline std::vector<double> log_returns(const std::vector<double>& prices, double scale = 100.0) {
  if (prices.size() < 2) throw DimensionError("log returns need at least two prices");
  std::vector<double> r;
  r.reserve(prices.size() - 1);
  for (std::size_t t = 1; t < prices.size(); ++t) {
    if (!(prices[t] > 0.0) || !(prices[t - 1] > 0.0)) throw DomainError("prices must be positive");
    r.push_back(scale * (std::log(prices[t]) - std::log(prices[t - 1])));
  }
  return r;
}

// --- scenario configuration ------------------------------------------------

inline std::vector<double> parse_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& cell : split(value, ',')) {
    const auto v = parse_double(cell);
    if (!v || !std::isfinite(*v)) throw ConfigError("key '" + key + "': bad number '" + cell + "'");
    out.push_back(*v);
  }
  return out;
}

namespace detail {

inline std::size_t to_count(const std::string& key, const std::string& value) {
  const auto v = parse_double(value);
  if (!v || *v < 0.0 || *v != std::floor(*v) || *v > 1e15) {
    throw ConfigError("key '" + key + "' needs a nonnegative integer");
  }
  return static_cast<std::size_t>(*v);
}

inline double to_real(const std::string& key, const std::string& value) {
  const auto v = parse_double(value);
  if (!v || !std::isfinite(*v)) throw ConfigError("key '" + key + "' needs a finite number");
  return *v;
}

inline bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError("key '" + key + "' needs true or false");
}

inline garch::GarchParams to_params(const std::string& key, const std::string& value, int p, int q) {
  const auto v = parse_list(key, value);
  if (v.size() != static_cast<std::size_t>(1 + p + q)) {
    throw ConfigError("key '" + key + "' needs 1 + p + q = " + std::to_string(1 + p + q) + " values");
  }
  return garch::GarchParams::from_vector(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())),
                                         p, q);
}

}  // namespace detail

/// key = value lines, '#' comments. Unknown keys are errors.
inline simlab::Scenario parse_scenario(std::istream& in, const std::string& name = "<config>") {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ParseError(name, lineno, "expected key = value");
    const std::string key(trim(t.substr(0, eq)));
    if (key.empty()) throw ParseError(name, lineno, "empty key");
    if (kv.count(key)) throw ParseError(name, lineno, "duplicate key '" + key + "'");
    kv[key] = std::string(trim(t.substr(eq + 1)));
  }

  using detail::to_bool;
  using detail::to_count;
  using detail::to_real;
  simlab::Scenario sc;
  const int p = kv.count("p") ? static_cast<int>(to_count("p", kv["p"])) : 1;
  const int q = kv.count("q") ? static_cast<int>(to_count("q", kv["q"])) : 1;
  if (!kv.count("theta0")) throw ConfigError("missing required key 'theta0'");
  if (!kv.count("seed")) throw ConfigError("missing required key 'seed'");
  for (const auto& [key, value] : kv) {
    if (key == "p" || key == "q") continue;
    if (key == "theta0") sc.theta0 = detail::to_params(key, value, p, q);
    else if (key == "theta1") sc.theta1 = detail::to_params(key, value, p, q);
    else if (key == "k_star") sc.k_star = to_count(key, value);
    else if (key == "n_hist") sc.n_hist = to_count(key, value);
    else if (key == "horizon") sc.horizon = to_count(key, value);
    else if (key == "contamination") {
      if (value == "none") sc.contamination = simlab::Contamination::None;
      else if (value == "H") sc.contamination = simlab::Contamination::H;
      else if (value == "M") sc.contamination = simlab::Contamination::M;
      else if (value == "HM") sc.contamination = simlab::Contamination::HM;
      else throw ConfigError("contamination must be none, H, M or HM");
    } else if (key == "p_outlier") sc.p_outlier = to_real(key, value);
    else if (key == "s_scale") sc.s_scale = to_real(key, value);
    else if (key == "outlier_window") sc.outlier_window = to_count(key, value);
    else if (key == "alpha_grid") sc.alpha_grid = parse_list(key, value);
    else if (key == "level") sc.level = to_real(key, value);
    else if (key == "reps") sc.reps = to_count(key, value);
    else if (key == "seed") sc.seed = static_cast<std::uint64_t>(to_count(key, value));
    else if (key == "burn_in") sc.burn_in = to_count(key, value);
    else if (key == "paired_clean") sc.paired_clean = to_bool(key, value);
    else if (key == "jitter_start") sc.jitter_start = to_bool(key, value);
    else if (key == "threads") sc.threads = static_cast<unsigned>(to_count(key, value));
    else if (key == "norm") {
      if (value == "max") sc.norm = NormKind::Max;
      else if (value == "euclidean") sc.norm = NormKind::Euclidean;
      else throw ConfigError("norm must be max or euclidean");
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
  sc.validate();
  return sc;
}

inline simlab::Scenario read_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return parse_scenario(in, path);
}

// --- report writers --------------------------------------------------------

inline std::string join(const Eigen::Ref<const Vector>& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt17(v[i]);
  return s;
}

inline std::string join(const std::vector<double>& v) {
  return join(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
}

inline std::string join_short(const Eigen::Ref<const Vector>& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_short(v[i]);
  return s;
}

/// Row-major, rows separated by ';'.
inline std::string join_rows(const Matrix& m) {
  std::string s;
  for (Eigen::Index r = 0; r < m.rows(); ++r) s += (r ? ";" : "") + join(Vector(m.row(r).transpose()));
  return s;
}

/// Detector path CSV: k,detector,boundary,alarm.
inline void write_detector_csv(std::ostream& out, const std::vector<double>& path, const BoundaryFn& boundary,
                               std::size_t n) {
  out << "k,detector,boundary,alarm\n";
  for (std::size_t i = 0; i < path.size(); ++i) {
    const std::size_t k = i + 1;
    const double b = boundary(static_cast<double>(k) / static_cast<double>(n));
    out << k << ',' << fmt17(path[i]) << ',' << fmt17(b) << ',' << (path[i] > b ? 1 : 0) << '\n';
  }
}

/// Detector column of a CSV written by write_detector_csv.
inline std::vector<double> read_detector_csv(std::istream& in) {
  std::vector<double> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1 && trim(line) == "k,detector,boundary,alarm") continue;
    if (trim(line).empty()) continue;
    const auto cells = split(line, ',');
    if (cells.size() != 4) throw ParseError("<detector>", lineno, "expected 4 columns");
    const auto v = parse_double(cells[1]);
    if (!v) throw ParseError("<detector>", lineno, "detector is not a number");
    out.push_back(*v);
  }
  return out;
}

/// Rejection curves: k followed by one column per alpha.
inline void write_rejection_csv(std::ostream& out, const std::vector<simlab::AlphaReport>& per_alpha) {
  out << "k";
  for (const auto& r : per_alpha) out << ",alpha_" << fmt_short(r.alpha);
  out << '\n';
  if (per_alpha.empty()) return;
  for (std::size_t k = 0; k < per_alpha.front().rejection_curve.size(); ++k) {
    out << k + 1;
    for (const auto& r : per_alpha) out << ',' << fmt17(r.rejection_curve[k]);
    out << '\n';
  }
}

inline void write_delay_csv(std::ostream& out, const simlab::ExperimentReport& rep) {
  out << "alpha,successes,failures,terminal_rate,mean_delay,q1,median,q3,censored,d_ratio\n";
  for (std::size_t i = 0; i < rep.per_alpha.size(); ++i) {
    const auto& r = rep.per_alpha[i];
    out << fmt_short(r.alpha) << ',' << r.successes << ',' << r.failures << ',' << fmt17(r.terminal_rate());
    if (r.delay) {
      out << ',' << fmt17(r.delay->mean) << ',' << fmt17(r.delay->q1) << ',' << fmt17(r.delay->median) << ','
          << fmt17(r.delay->q3) << ',' << r.delay->censored;
    } else {
      out << ",,,,,";
    }
    out << ',' << (i < rep.delay_ratio.size() ? fmt17(rep.delay_ratio[i]) : std::string()) << '\n';
  }
}

/// Config echo and summary as key = value lines.
inline void write_experiment_summary(std::ostream& out, const simlab::ExperimentReport& rep) {
  const auto& sc = rep.scenario;
  out << "theta0 = " << join_short(sc.theta0.to_vector()) << '\n';
  out << "theta1 = " << (sc.theta1 ? join_short(sc.theta1->to_vector()) : std::string("none")) << '\n';
  out << "p = " << sc.theta0.p() << "\nq = " << sc.theta0.q() << '\n';
  out << "k_star = " << sc.k_star << "\nn_hist = " << sc.n_hist << "\nhorizon = " << sc.horizon << '\n';
  out << "contamination = " << simlab::to_string(sc.contamination) << '\n';
  out << "p_outlier = " << fmt_short(sc.p_outlier) << "\ns_scale = " << fmt17(rep.outlier_shift) << '\n';
  out << "outlier_window = " << sc.outlier_window << '\n';
  out << "alpha_grid = " << join_short(Eigen::Map<const Vector>(sc.alpha_grid.data(), static_cast<Eigen::Index>(sc.alpha_grid.size()))) << '\n';
  out << "level = " << fmt_short(sc.level) << "\nreps = " << sc.reps << "\nseed = " << sc.seed << '\n';
  out << "burn_in = " << sc.burn_in << "\npaired_clean = " << (sc.paired_clean ? "true" : "false") << '\n';
  out << "jitter_start = " << (sc.jitter_start ? "true" : "false") << '\n';
  out << "norm = " << (sc.norm == NormKind::Max ? "max" : "euclidean") << '\n';
  out << "critical_value = " << fmt17(rep.critical_value) << '\n';
  out << "flagged = " << (rep.flagged ? "true" : "false") << '\n';
  for (const auto& r : rep.per_alpha) {
    out << "terminal_rate[" << fmt_short(r.alpha) << "] = " << fmt17(r.terminal_rate()) << '\n';
    out << "failures[" << fmt_short(r.alpha) << "] = " << r.failures << '\n';
    if (r.delay) out << "mean_delay[" << fmt_short(r.alpha) << "] = " << fmt17(r.delay->mean) << '\n';
  }
  for (std::size_t i = 0; i < rep.delay_ratio.size(); ++i) {
    out << "d_ratio[" << fmt_short(rep.per_alpha[i].alpha) << "] = " << fmt17(rep.delay_ratio[i]) << '\n';
  }
}

}  // namespace dpd::io
