#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "minidistill/bench.hpp"
#include "minidistill/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace minidistill;

namespace {

EncoderModel bench_model(std::size_t layers, std::size_t d = 16) {
  ModelConfig c;
  c.num_layers = layers;
  c.hidden_dim = d;
  c.num_heads = 2;
  c.ffn_dim = 4 * d;
  c.max_seq_len = 32;
  c.vocab_size = 50;
  return init_model(c, 1);
}

// Each reading advances by the next scripted step.
struct ScriptedClock {
  std::vector<double> steps;
  std::size_t calls = 0;
  double now = 0.0;
  double operator()() {
    now += steps[calls++ % steps.size()];
    return now;
  }
};

class ScriptedMeter final : public EnergyMeter {
 public:
  explicit ScriptedMeter(std::vector<std::optional<double>> readings) : readings_(std::move(readings)) {}
  bool reports_energy() const override { return true; }
  std::string name() const override { return "scripted"; }
  std::size_t starts = 0;

 protected:
  void do_start() override { ++starts; }
  std::optional<double> do_stop() override { return readings_[next_++ % readings_.size()]; }

 private:
  std::vector<std::optional<double>> readings_;
  std::size_t next_ = 0;
};

}  // namespace

TEST(Quartiles, Examples) {
  EXPECT_EQ(quartiles({5}), (Quartiles{5, 5, 5}));
  EXPECT_EQ(quartiles({1, 2, 3, 4}), (Quartiles{1.75, 2.5, 3.25}));
  EXPECT_EQ(quartiles({4, 1, 3, 2}), (Quartiles{1.75, 2.5, 3.25}));
  EXPECT_THROW(quartiles({}), InvalidInput);
}

TEST(Quartiles, MatchesOracleAndIsOrdered) {
  Pcg32 rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> xs(1 + rng.below(40));
    for (auto& x : xs) x = rng.below(4) == 0 ? 1.0 : rng.normal();
    const auto q = quartiles(xs);
    const auto o = oracle::sort_and_interpolate(xs);
    EXPECT_EQ(q.q1, o[0]);
    EXPECT_EQ(q.median, o[1]);
    EXPECT_EQ(q.q3, o[2]);
    EXPECT_LE(q.q1, q.median);
    EXPECT_LE(q.median, q.q3);
    shuffle(xs.begin(), xs.end(), rng);
    EXPECT_EQ(quartiles(xs), q);
  }
}

TEST(Measure, MockedClockAndMeterAreDeterministic) {
  const auto m = bench_model(1);
  ScriptedClock clock{{10.0, 1.0, 10.0, 2.0, 10.0, 3.0, 10.0, 4.0}};
  ScriptedMeter meter({0.5, 1.5, 2.5, 3.5});
  BenchOptions opts;
  opts.clock_ms = std::ref(clock);
  const auto r = measure(m, {{1, 2, 3}, {4, 5}}, 4, meter, opts);
  EXPECT_EQ(r.runs, 4u);
  EXPECT_EQ(r.latency_ms, (Quartiles{1.75, 2.5, 3.25}));
  ASSERT_TRUE(r.energy_joules_per_run.has_value());
  EXPECT_EQ(*r.energy_joules_per_run, (Quartiles{1.25, 2.0, 2.75}));
  EXPECT_DOUBLE_EQ(*r.energy_total_kj, 8.0 / 1000.0);
  EXPECT_EQ(r.meter_warnings, 0u);
  // Warmup passes are neither timed nor metered.
  EXPECT_EQ(clock.calls, 8u);
  EXPECT_EQ(meter.starts, 4u);
}

TEST(Measure, SingleRunAndNullMeter) {
  const auto m = bench_model(1);
  ScriptedClock clock{{0.0, 7.0}};
  NullMeter meter;
  BenchOptions opts;
  opts.clock_ms = std::ref(clock);
  const auto r = measure(m, {{1, 2}}, 1, meter, opts);
  EXPECT_EQ(r.latency_ms, (Quartiles{7, 7, 7}));
  EXPECT_FALSE(r.energy_joules_per_run.has_value());
  EXPECT_FALSE(r.energy_total_kj.has_value());
  EXPECT_EQ(r.meter_warnings, 0u);

  const auto real = measure(m, {{1, 2}}, 5, meter);
  EXPECT_GT(real.latency_ms.median, 0.0);
  EXPECT_TRUE(std::isfinite(real.latency_ms.q3));
}

TEST(Measure, FailingMeterMarksEnergyUnavailable) {
  const auto m = bench_model(1);
  ScriptedMeter meter({1.0, std::nullopt, 1.0});
  const auto r = measure(m, {{1}}, 6, meter);
  EXPECT_FALSE(r.energy_joules_per_run.has_value());
  EXPECT_FALSE(r.energy_total_kj.has_value());
  EXPECT_EQ(r.meter_warnings, 1u);
  EXPECT_EQ(meter.starts, 2u);
}

TEST(Measure, Errors) {
  const auto m = bench_model(1);
  NullMeter meter;
  EXPECT_THROW(measure(m, {{1}}, 0, meter), InvalidInput);
  EXPECT_THROW(measure(m, {}, 3, meter), InvalidInput);
  BenchOptions opts;
  opts.threads = 4;
  EXPECT_THROW(measure(m, {{1}}, 3, meter, opts), InvalidInput);
}

TEST(EnergyMeter, StartStopMustAlternate) {
  NullMeter meter;
  EXPECT_THROW(meter.stop(), std::logic_error);
  meter.start();
  EXPECT_THROW(meter.start(), std::logic_error);
  EXPECT_EQ(meter.stop(), std::nullopt);
}

TEST(PlatformCounterMeter, ReadsDeltasAndWraps) {
  testutil::TempDir dir;
  const auto zone = dir.file("zone");
  std::filesystem::create_directories(zone);
  auto put = [&](const char* name, const std::string& value) { std::ofstream(zone + "/" + name) << value << "\n"; };
  put("max_energy_range_uj", "1000000");
  put("energy_uj", "250000");
  PlatformCounterMeter meter(zone);
  meter.start();
  put("energy_uj", "750000");
  EXPECT_DOUBLE_EQ(*meter.stop(), 0.5);
  meter.start();
  put("energy_uj", "100000");  // wrapped: 250000 to the top plus 100000
  EXPECT_DOUBLE_EQ(*meter.stop(), 0.35);
  meter.start();
  std::filesystem::remove(zone + "/energy_uj");
  EXPECT_EQ(meter.stop(), std::nullopt);

  EXPECT_DOUBLE_EQ(PlatformCounterMeter::delta_joules(10, 20, 100), 1e-5);
  EXPECT_DOUBLE_EQ(PlatformCounterMeter::delta_joules(90, 5, 100), 15e-6);
  EXPECT_THROW(PlatformCounterMeter(dir.file("absent")), IoError);
}

TEST(Measure, MedianLatencyGrowsWithDepth) {
  NullMeter meter;
  std::vector<std::vector<TokenId>> inputs;
  for (TokenId s = 0; s < 4; ++s) {
    std::vector<TokenId> ids;
    for (TokenId t = 0; t < 24; ++t) ids.push_back((s * 7 + t * 3) % 50);
    inputs.push_back(ids);
  }
  double previous = 0.0;
  for (std::size_t layers : {1u, 2u, 4u}) {
    const auto r = measure(bench_model(layers, 64), inputs, 40, meter);
    EXPECT_GE(r.latency_ms.median, previous) << layers << " layers";
    previous = r.latency_ms.median;
  }
}

TEST(BenchReport, TableAndJson) {
  BenchReport r;
  r.model_id = "student";
  r.runs = 3;
  r.latency_ms = {1.0, 2.0, 3.0};
  const auto table = format_bench_table({r});
  EXPECT_NE(table.find("student | 3 | n/a | n/a | 2.000 [1.000, 3.000]"), std::string::npos);
  auto j = bench_report_to_json(r);
  EXPECT_TRUE(j["energy_total_kj"].is_null());
  EXPECT_EQ(j["latency_ms"]["median"], 2.0);
  r.energy_joules_per_run = Quartiles{0.1, 0.2, 0.3};
  r.energy_total_kj = 0.0006;
  EXPECT_NE(format_bench_table({r}).find("0.2000 [0.1000, 0.3000] | 0.0006"), std::string::npos);
  EXPECT_EQ(bench_report_to_json(r)["energy_joules_per_run"]["q3"], 0.3);
}
