#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "dpd/core.hpp"
#include "dpd/rng.hpp"

namespace dpd::critval {

/// Value of the alternating series plus the partial sum before the last added term.
struct SeriesValue {
  double value;
  double previous_partial;
  int terms;
};

/// P(sup_{0<s<1} |W(s)| <= b) by the alternating exponential series, truncated at |term| < tol.
inline SeriesValue sup_abs_bm_cdf_series(double b, double tol = 1e-14) {
  if (!(b > 0.0) || !std::isfinite(b)) throw DomainError("sup_abs_bm_cdf needs b > 0");
  constexpr double kPi = std::numbers::pi;
  const double scale = kPi * kPi / (8.0 * b * b);
  double sum = 0.0;
  double previous = 0.0;
  int k = 0;
  for (; k < 10'000'000; ++k) {
    const double m = 2.0 * k + 1.0;
    const double term = (4.0 / kPi) * ((k % 2 == 0) ? 1.0 : -1.0) / m * std::exp(-scale * m * m);
    previous = sum;
    sum += term;
    if (std::abs(term) < tol) break;
  }
  return {sum, previous, k + 1};
}

inline double sup_abs_bm_cdf(double b, double tol = 1e-14) { return sup_abs_bm_cdf_series(b, tol).value; }

/// d/db of sup_abs_bm_cdf.
inline double sup_abs_bm_pdf(double b, double tol = 1e-14) {
  constexpr double kPi = std::numbers::pi;
  const double scale = kPi * kPi / (8.0 * b * b);
  double sum = 0.0;
  for (int k = 0; k < 10'000'000; ++k) {
    const double m = 2.0 * k + 1.0;
    const double term = (4.0 / kPi) * ((k % 2 == 0) ? 1.0 : -1.0) / m * std::exp(-scale * m * m) *
                        2.0 * scale * m * m / b;
    sum += term;
    if (std::abs(term) < tol) break;
  }
  return sum;
}

inline void validate_level(double level) {
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("significance level must lie in (0, 1)");
}

/// Asymptotic rejection probability 1 - F(b)^d of the max-norm constant-boundary procedure.
inline double sequential_size(double b, int d) { return 1.0 - std::pow(sup_abs_bm_cdf(b), d); }

/**
 * Constant boundary b solving 1 - F(b)^d = level, F the sup|W| distribution.
 * Bisection on [0.1, 10] to 1e-8 followed by one Newton step.
 */
inline double critical_value_sequential(int d, double level) {
  if (d < 1 || d > 50) throw ConfigError("parameter dimension d must lie in [1, 50]");
  validate_level(level);
  auto excess = [&](double b) { return sequential_size(b, d) - level; };
  double lo = 0.1;
  double hi = 10.0;
  while (hi - lo > 1e-8) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) > 0.0 ? lo : hi) = mid;
  }
  double b = 0.5 * (lo + hi);
  const double f = sup_abs_bm_cdf(b);
  const double slope = -d * std::pow(f, d - 1) * sup_abs_bm_pdf(b);
  if (slope < 0.0) {
    const double polished = b - excess(b) / slope;
    if (std::abs(polished - b) < 1e-6) b = polished;
  }
  return b;
}

struct RetroMcOptions {
  std::size_t grid_n = 4096;
  std::size_t n_mc = 100000;
  std::uint64_t seed = 20210901;
  unsigned threads = 0;
};

/// One draw of sup_j sum_i B_i(j/N)^2 per replication, B_i independent discretised Brownian bridges.
inline std::vector<double> retro_sup_samples(int d, const RetroMcOptions& opts) {
  if (d < 1) throw ConfigError("parameter dimension d must be positive");
  if (opts.grid_n < 1000) throw ConfigError("bridge grid must have at least 1000 points");
  if (opts.n_mc < 10000) throw ConfigError("at least 10^4 Monte Carlo replications are required");
  std::vector<double> sups(opts.n_mc);
  const std::size_t grid = opts.grid_n;
  const double step_sd = std::sqrt(1.0 / static_cast<double>(grid));
  const std::size_t chunk = 256;
  const std::size_t chunks = (opts.n_mc + chunk - 1) / chunk;
  parallel_for(chunks, opts.threads, [&](std::size_t c) {
    std::vector<double> walk(grid);
    std::vector<double> acc(grid);
    const std::size_t end = std::min(opts.n_mc, (c + 1) * chunk);
    for (std::size_t rep = c * chunk; rep < end; ++rep) {
      std::mt19937_64 rng(derive_seed(opts.seed, rep));
      std::normal_distribution<double> z(0.0, step_sd);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int i = 0; i < d; ++i) {
        double w = 0.0;
        for (std::size_t j = 0; j < grid; ++j) {
          w += z(rng);
          walk[j] = w;
        }
        const double w1 = walk[grid - 1];
        for (std::size_t j = 0; j < grid; ++j) {
          const double s = static_cast<double>(j + 1) / static_cast<double>(grid);
          const double bridge = walk[j] - s * w1;
          acc[j] += bridge * bridge;
        }
      }
      sups[rep] = *std::max_element(acc.begin(), acc.end());
    }
  });
  return sups;
}

/// Order statistic at ceil(prob * n) (inverse empirical CDF).
inline double empirical_quantile(std::vector<double> sample, double prob) {
  if (sample.empty()) throw DimensionError("quantile of an empty sample");
  const auto n = sample.size();
  auto rank = static_cast<std::size_t>(std::ceil(prob * static_cast<double>(n)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(rank - 1), sample.end());
  return sample[rank - 1];
}

/// Monte Carlo (1 - level) quantile of sup_s ||W_d^o(s)||^2. Thresholds are simulation-derived.
inline double critical_value_retro(int d, double level, const RetroMcOptions& opts = {}) {
  validate_level(level);
  return empirical_quantile(retro_sup_samples(d, opts), 1.0 - level);
}

/**
 * Versioned text cache of retrospective critical values.
 * Line format after the two header lines: d,level,grid_n,n_mc,seed,c
 */
class RetroCache {
 public:
  static constexpr const char* kHeader = "# dpd-retro-critval-cache v1";
  static constexpr const char* kColumns = "d,level,grid_n,n_mc,seed,c";
  using Key = std::tuple<int, double, std::size_t, std::size_t, std::uint64_t>;

  explicit RetroCache(std::filesystem::path file) : file_(std::move(file)) { load(); }

  /// Cache file under $DPD_CACHE_DIR, if the variable is set.
  static std::optional<RetroCache> from_env() {
    const char* dir = std::getenv("DPD_CACHE_DIR");
    if (!dir || !*dir) return std::nullopt;
    return RetroCache(std::filesystem::path(dir) / "retro_critvals.csv");
  }

  std::optional<double> lookup(const Key& key) const {
    auto it = table_.find(key);
    if (it == table_.end()) return std::nullopt;
    return it->second;
  }

  void store(const Key& key, double c) {
    table_[key] = c;
    std::error_code ec;
    if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path(), ec);
    const bool fresh = !std::filesystem::exists(file_);
    std::ofstream out(file_, std::ios::app);
    if (!out) return;
    if (fresh) out << kHeader << '\n' << kColumns << '\n';
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.17g,%zu,%zu,%llu,%.17g\n", std::get<0>(key), std::get<1>(key),
                  std::get<2>(key), std::get<3>(key), static_cast<unsigned long long>(std::get<4>(key)), c);
    out << buf;
  }

  const std::filesystem::path& file() const noexcept { return file_; }

 private:
  void load() {
    std::ifstream in(file_);
    if (!in) return;
    std::string line;
    if (!std::getline(in, line) || line != kHeader) return;  // unknown version: ignore
    while (std::getline(in, line)) {
      if (line.empty() || line == kColumns) continue;
      std::istringstream row(line);
      std::string field[6];
      int i = 0;
      while (i < 6 && std::getline(row, field[i], ',')) ++i;
      if (i != 6) continue;
      try {
        Key key{std::stoi(field[0]), std::stod(field[1]), std::stoull(field[2]), std::stoull(field[3]),
                std::stoull(field[4])};
        table_[key] = std::stod(field[5]);
      } catch (const std::exception&) {
        continue;
      }
    }
  }

  std::filesystem::path file_;
  std::map<Key, double> table_;
};

/// critical_value_retro with an in-process memo and the $DPD_CACHE_DIR file cache.
inline double cached_critical_value_retro(int d, double level, const RetroMcOptions& opts = {}) {
  validate_level(level);
  static std::mutex mu;
  static std::map<RetroCache::Key, double> memo;
  const RetroCache::Key key{d, level, opts.grid_n, opts.n_mc, opts.seed};
  {
    std::lock_guard lock(mu);
    if (auto it = memo.find(key); it != memo.end()) return it->second;
  }
  auto cache = RetroCache::from_env();
  if (cache) {
    if (auto hit = cache->lookup(key)) {
      std::lock_guard lock(mu);
      memo[key] = *hit;
      return *hit;
    }
  }
  const double c = critical_value_retro(d, level, opts);
  std::lock_guard lock(mu);
  memo[key] = c;
  if (cache) cache->store(key, c);
  return c;
}

}  // namespace dpd::critval
