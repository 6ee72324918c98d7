#pragma once

// Latency / energy benchmark: repeated single-sentence forward passes with
// untimed warmup, quartile reporting and a pluggable energy meter.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "minidistill/error.hpp"
#include "minidistill/model.hpp"

namespace minidistill {

struct Quartiles {
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;

  friend bool operator==(const Quartiles&, const Quartiles&) = default;
};

/// Linear interpolation at h = p (n - 1) over the sorted sample.
inline Quartiles quartiles(std::vector<double> samples) {
  if (samples.empty()) throw InvalidInput("quartiles: empty sample");
  std::sort(samples.begin(), samples.end());
  auto at = [&](double p) {
    const double h = p * static_cast<double>(samples.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, samples.size() - 1);
    return samples[lo] + (h - static_cast<double>(lo)) * (samples[hi] - samples[lo]);
  };
  return {at(0.25), at(0.5), at(0.75)};
}

// start() and stop() must alternate. stop() yields joules consumed since the
// matching start(), or nullopt when no reading could be taken.
class EnergyMeter {
 public:
  virtual ~EnergyMeter() = default;

  virtual bool reports_energy() const = 0;
  virtual std::string name() const = 0;

  void start() {
    if (running_) throw std::logic_error("energy meter started twice");
    running_ = true;
    do_start();
  }

  std::optional<double> stop() {
    if (!running_) throw std::logic_error("energy meter stopped without start");
    running_ = false;
    return do_stop();
  }

 protected:
  virtual void do_start() = 0;
  virtual std::optional<double> do_stop() = 0;

 private:
  bool running_ = false;
};

/// Timing only.
class NullMeter final : public EnergyMeter {
 public:
  bool reports_energy() const override { return false; }
  std::string name() const override { return "null"; }

 protected:
  void do_start() override {}
  std::optional<double> do_stop() override { return std::nullopt; }
};

// Cumulative energy counter in microjoules exposed as text files by the OS
// (powercap layout: <dir>/energy_uj and <dir>/max_energy_range_uj). Wraparound
// is handled by subtraction modulo the counter range.
class PlatformCounterMeter final : public EnergyMeter {
 public:
  static constexpr const char* kDefaultZone = "/sys/class/powercap/intel-rapl:0";

  explicit PlatformCounterMeter(std::string zone_dir = kDefaultZone) : dir_(std::move(zone_dir)) {
    const auto range = read_counter("max_energy_range_uj");
    if (!range || *range == 0) throw IoError("no readable energy counter range under '" + dir_ + "'");
    range_uj_ = *range;
    if (!read_counter("energy_uj")) throw IoError("no readable energy counter under '" + dir_ + "'");
  }

  bool reports_energy() const override { return true; }
  std::string name() const override { return "platform"; }

  /// Joules between two raw counter readings, allowing one wraparound.
  static double delta_joules(std::uint64_t before_uj, std::uint64_t after_uj, std::uint64_t range_uj) {
    const std::uint64_t delta = after_uj >= before_uj ? after_uj - before_uj : (range_uj - before_uj) + after_uj;
    return static_cast<double>(delta) * 1e-6;
  }

 protected:
  void do_start() override { start_uj_ = read_counter("energy_uj"); }

  std::optional<double> do_stop() override {
    const auto now = read_counter("energy_uj");
    if (!start_uj_ || !now) return std::nullopt;
    return delta_joules(*start_uj_, *now, range_uj_);
  }

 private:
  std::optional<std::uint64_t> read_counter(const std::string& file) const {
    std::ifstream in(dir_ + "/" + file);
    std::uint64_t v = 0;
    if (!(in >> v)) return std::nullopt;
    return v;
  }

  std::string dir_;
  std::uint64_t range_uj_ = 0;
  std::optional<std::uint64_t> start_uj_;
};

struct BenchOptions {
  std::size_t warmup_runs = 10;
  std::size_t threads = 1;  // anything else is refused
  std::function<double()> clock_ms;  // defaults to steady_clock
};

struct BenchReport {
  std::string model_id;
  std::string input_descriptor;
  std::size_t runs = 0;
  Quartiles latency_ms;
  std::vector<double> latency_samples_ms;  // timed runs, in run order
  std::optional<Quartiles> energy_joules_per_run;
  std::optional<double> energy_total_kj;  // sum over all timed runs
  std::size_t meter_warnings = 0;
};

// Times `runs` full forward passes cycling through `inputs`, after
// options.warmup_runs untimed passes. A meter that fails mid-run disables
// energy reporting for the whole report and bumps meter_warnings.
inline BenchReport measure(const EncoderModel& model, const std::vector<std::vector<TokenId>>& inputs,
                           std::size_t runs, EnergyMeter& meter, const BenchOptions& options = {}) {
  if (runs < 1) throw InvalidInput("measure: runs must be >= 1");
  if (inputs.empty()) throw InvalidInput("measure: no inputs");
  if (options.threads != 1) throw InvalidInput("measure: the benchmark loop is single-threaded only");
  auto clock = options.clock_ms;
  if (!clock) {
    clock = [] {
      return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
    };
  }

  double sink = 0.0;
  for (std::size_t i = 0; i < options.warmup_runs; ++i) sink += embed(model, inputs[i % inputs.size()])[0];

  BenchReport report;
  report.runs = runs;
  std::vector<double> latency, joules;
  latency.reserve(runs);
  bool energy_ok = meter.reports_energy();
  for (std::size_t i = 0; i < runs; ++i) {
    const auto& ids = inputs[i % inputs.size()];
    if (energy_ok) {
      try {
        meter.start();
      } catch (const std::exception&) {
        energy_ok = false;
        ++report.meter_warnings;
      }
    }
    const double t0 = clock();
    sink += embed(model, ids)[0];
    const double t1 = clock();
    if (energy_ok) {
      std::optional<double> j;
      try {
        j = meter.stop();
      } catch (const std::exception&) {
      }
      if (j && *j >= 0.0) {
        joules.push_back(*j);
      } else {
        energy_ok = false;
        ++report.meter_warnings;
      }
    }
    latency.push_back(t1 - t0);
  }
  if (!std::isfinite(sink)) throw std::runtime_error("measure: non-finite model output");

  report.latency_ms = quartiles(latency);
  report.latency_samples_ms = std::move(latency);
  if (energy_ok && joules.size() == runs) {
    report.energy_joules_per_run = quartiles(joules);
    double total = 0.0;
    for (double j : joules) total += j;
    report.energy_total_kj = total / 1000.0;
  }
  return report;
}

/// Table with median [q1, q3] columns for energy and latency.
inline std::string format_bench_table(const std::vector<BenchReport>& reports) {
  auto triple = [](const Quartiles& q, const char* fmt) {
    char buf[128];
    std::snprintf(buf, sizeof buf, fmt, q.median, q.q1, q.q3);
    return std::string(buf);
  };
  std::string out = "model | runs | energy per run [J] | energy total [kJ] | inference time [ms]\n";
  for (const auto& r : reports) {
    out += r.model_id + " | " + std::to_string(r.runs) + " | ";
    if (r.energy_joules_per_run) {
      char total[64];
      std::snprintf(total, sizeof total, "%.4f", *r.energy_total_kj);
      out += triple(*r.energy_joules_per_run, "%.4f [%.4f, %.4f]") + " | " + total;
    } else {
      out += "n/a | n/a";
    }
    out += " | " + triple(r.latency_ms, "%.3f [%.3f, %.3f]") + "\n";
  }
  return out;
}

inline nlohmann::json bench_report_to_json(const BenchReport& r) {
  auto q = [](const Quartiles& x) { return nlohmann::json{{"q1", x.q1}, {"median", x.median}, {"q3", x.q3}}; };
  nlohmann::json j{{"model_id", r.model_id},
                   {"input", r.input_descriptor},
                   {"runs", r.runs},
                   {"latency_ms", q(r.latency_ms)},
                   {"meter_warnings", r.meter_warnings}};
  j["energy_joules_per_run"] = r.energy_joules_per_run ? q(*r.energy_joules_per_run) : nlohmann::json(nullptr);
  j["energy_total_kj"] = r.energy_total_kj ? nlohmann::json(*r.energy_total_kj) : nlohmann::json(nullptr);
  return j;
}

}  // namespace minidistill
