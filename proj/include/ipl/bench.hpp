#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "ipl/cache.hpp"
#include "ipl/model.hpp"

namespace ipl {

struct BenchSettings {
  int repeats = 5;
  std::uint64_t cache_bytes = 512ull << 20;
  bool run_uncached = true;
  // Exact-on-miss caching warms one FIB layer per repeat, so steady state
  // needs num_fibs+1 passes; -1 picks that automatically.
  int warmup_runs = -1;
};

struct BenchRow {
  int scene = 0;
  std::string mode;  // uncached | warmup | warm
  int repeat = 0;
  double seconds = 0;
  std::uint64_t lfe_evals = 0;
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  double hit_rate = 0;
  std::uint64_t cache_bytes_used = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  std::uint64_t cache_peak_bytes = 0;

  std::string text() const {
    std::string out;
    char buf[256];
    for (const BenchRow& r : rows) {
      std::snprintf(buf, sizeof(buf),
                    "scene=%d mode=%s repeat=%d time_s=%.6f lfe_evals=%llu "
                    "hits=%llu misses=%llu hit_rate=%.4f bytes_used=%llu\n",
                    r.scene, r.mode.c_str(), r.repeat, r.seconds,
                    static_cast<unsigned long long>(r.lfe_evals),
                    static_cast<unsigned long long>(r.hits),
                    static_cast<unsigned long long>(r.misses), r.hit_rate,
                    static_cast<unsigned long long>(r.cache_bytes_used));
      out += buf;
    }
    std::snprintf(buf, sizeof(buf), "cache_peak_bytes=%llu\n",
                  static_cast<unsigned long long>(cache_peak_bytes));
    out += buf;
    return out;
  }

  std::string csv() const {
    std::string out =
        "scene,mode,repeat,time_s,lfe_evals,hits,misses,hit_rate,bytes_used\n";
    char buf[256];
    for (const BenchRow& r : rows) {
      std::snprintf(buf, sizeof(buf), "%d,%s,%d,%.6f,%llu,%llu,%llu,%.4f,%llu\n",
                    r.scene, r.mode.c_str(), r.repeat, r.seconds,
                    static_cast<unsigned long long>(r.lfe_evals),
                    static_cast<unsigned long long>(r.hits),
                    static_cast<unsigned long long>(r.misses), r.hit_rate,
                    static_cast<unsigned long long>(r.cache_bytes_used));
      out += buf;
    }
    return out;
  }

  std::vector<double> times(const std::string& mode) const {
    std::vector<double> out;
    for (const BenchRow& r : rows) {
      if (r.mode == mode) out.push_back(r.seconds);
    }
    return out;
  }
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Wall time and cache behavior of repeated fusions, cache off vs on, with
// cold/warm phases reported separately.
inline BenchReport bench_run(const ModelWeights& weights, const ModelConfig& cfg,
                             const std::vector<ExposureTriplet>& scenes,
                             const BenchSettings& settings) {
  if (settings.repeats < 1) throw ValueError("bench repeats must be >= 1");
  using Clock = std::chrono::steady_clock;
  BenchReport report;
  const int warmups =
      settings.warmup_runs >= 0 ? settings.warmup_runs : cfg.num_fibs + 1;

  for (int scene = 0; scene < static_cast<int>(scenes.size()); ++scene) {
    if (settings.run_uncached) {
      ModelConfig off = cfg;
      off.cache_enabled = false;
      for (int rep = 0; rep < settings.repeats; ++rep) {
        ForwardStats stats;
        const auto t0 = Clock::now();
        fuse_triplet(scenes[scene], weights, off, nullptr, &stats);
        const std::chrono::duration<double> dt = Clock::now() - t0;
        report.rows.push_back({scene, "uncached", rep, dt.count(),
                               stats.lfe_evals, 0, 0, 0.0, 0});
      }
    }

    ModelConfig on = cfg;
    on.cache_enabled = true;
    AttentionCache cache(settings.cache_bytes, on.q_min(), on.q_max());
    auto timed_run = [&](const std::string& mode, int rep) {
      const CacheStats before = cache.stats();
      ForwardStats stats;
      const auto t0 = Clock::now();
      fuse_triplet(scenes[scene], weights, on, &cache, &stats);
      const std::chrono::duration<double> dt = Clock::now() - t0;
      const CacheStats after = cache.stats();
      BenchRow row;
      row.scene = scene;
      row.mode = mode;
      row.repeat = rep;
      row.seconds = dt.count();
      row.lfe_evals = stats.lfe_evals;
      row.hits = after.hits - before.hits;
      row.misses = after.misses - before.misses;
      const std::uint64_t lookups = row.hits + row.misses;
      row.hit_rate = lookups == 0 ? 0.0 : static_cast<double>(row.hits) / lookups;
      row.cache_bytes_used = after.bytes_used;
      report.rows.push_back(row);
    };
    for (int rep = 0; rep < warmups; ++rep) timed_run("warmup", rep);
    for (int rep = 0; rep < settings.repeats; ++rep) timed_run("warm", rep);
    report.cache_peak_bytes = std::max(report.cache_peak_bytes, cache.peak_bytes());
  }
  return report;
}

}  // namespace ipl
