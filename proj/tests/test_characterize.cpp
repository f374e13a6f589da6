#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "smiprobe/characterize.hpp"
#include "smiprobe/experiments.hpp"

using namespace smiprobe;
using testing::make_trace;

namespace {

SimulationSetup quiet_setup(const SensorCharacteristics& chars) {
  SimulationSetup s = default_setup(chars);
  s.truth.noise_std = 0.0;
  s.pmd.noise_std = 0.0;
  s.sensor.quant_step = 0.0;
  return s;
}

SensorCharacteristics chars_of(double update_period, double window,
                               TransientClass cls = TransientClass::Instant) {
  SensorCharacteristics c;
  c.update_period = update_period;
  c.window = window;
  c.transient_class = cls;
  return c;
}

// Boxcar mean by brute-force quadrature, independent of EnergyIndex.
double oracle_boxcar(const PowerTrace& ref, double t, double w) {
  return testing::midpoint_integral([&](double x) { return value_at(ref, x); }, t - w, t, 4000) / w;
}

}  // namespace

TEST_CASE("update period: V100 polled every 5 ms") {
  const auto setup = default_setup(find_preset("v100").chars);
  const auto polled = update_period_capture(setup, {0.005, 0.0, 0}, 10.0, 1);
  const auto est = estimate_update_period(polled);
  CHECK(est.median_period == doctest::Approx(0.020).epsilon(1e-6));
  int total = 0;
  for (const auto& [bin, count] : est.histogram) total += count;
  CHECK(static_cast<std::size_t>(total) == est.runs);
  CHECK(est.runs >= 20);
}

TEST_CASE("update period: A100 with and without extra interval") {
  auto setup = default_setup(find_preset("a100").chars);
  const auto plain = estimate_update_period(update_period_capture(setup, {0.0005, 0.0, 0}, 10.0, 2));
  CHECK(plain.median_period == doctest::Approx(0.100).epsilon(0.006));
  setup.sensor.update_jitter = 0.001;
  const auto slow = estimate_update_period(update_period_capture(setup, {0.0005, 0.0, 0}, 10.0, 2));
  CHECK(std::abs(slow.median_period - 0.101) <= 0.0005 + 1e-9);
  CHECK(slow.histogram.count(101) == 1);
}

TEST_CASE("update period needs variation") {
  std::vector<double> t, p;
  for (int i = 0; i < 200; ++i) {
    t.push_back(i * 0.005);
    p.push_back(100.0);
  }
  CHECK_THROWS_WITH_AS(estimate_update_period(make_trace(Source::SmiInstant, t, p)),
                       doctest::Contains("insufficient variation"), Error);
}

TEST_CASE("rise time of a linear ramp is 0.8 of its duration") {
  for (double d : {0.05, 0.25, 1.0}) {
    const auto up = testing::sample_fn(
        Source::Pmd, [d](double t) { return std::clamp((t - 0.5) / d, 0.0, 1.0) * 100.0 + 20.0; }, 0.0,
        2.0, 5000);
    CHECK(measure_rise_time(up, 20.0, 120.0) == doctest::Approx(0.8 * d).epsilon(1e-6));
    const auto down = testing::sample_fn(
        Source::Pmd, [d](double t) { return 120.0 - std::clamp((t - 0.5) / d, 0.0, 1.0) * 100.0; }, 0.0,
        2.0, 5000);
    CHECK(measure_rise_time(down, 120.0, 20.0) == doctest::Approx(0.8 * d).epsilon(1e-6));
  }
  const auto flat = make_trace(Source::Pmd, {0.0, 1.0}, {5.0, 5.0});
  CHECK_THROWS_WITH_AS(measure_rise_time(flat, 0.0, 100.0), doctest::Contains("no step detected"), Error);
}

TEST_CASE("rise time seen by simulated sensors") {
  SUBCASE("instant sensor rises within one update") {
    const auto cap = step_capture(quiet_setup(find_preset("a100").chars), 1.0, 3.0, 4);
    CHECK(measure_rise_time(cap.smi, 60.0, 260.0) <= 0.1 + 1e-9);
  }
  SUBCASE("running average takes 0.8 s") {
    const auto cap = step_capture(quiet_setup(find_preset("rtx3090-average").chars), 1.0, 4.0, 4);
    CHECK(std::abs(measure_rise_time(cap.smi, 60.0, 260.0) - 0.8) <= 0.1 + 1e-9);
  }
}

TEST_CASE("transient classification round trip") {
  struct Case {
    SensorCharacteristics chars;
    TransientClass expected;
  };
  auto slow = chars_of(0.1, 0.1, TransientClass::SlowSource);
  slow.rise_time = 0.3;
  const Case cases[] = {
      {find_preset("a100").chars, TransientClass::Instant},
      {slow, TransientClass::SlowSource},
      {find_preset("rtx3090-average").chars, TransientClass::LinearRunningAvg},
      {chars_of(0.1, 0.1, TransientClass::LogGrowth), TransientClass::LogGrowth},
  };
  for (const auto& c : cases) {
    CAPTURE(to_string(c.expected));
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      const auto cap = step_capture(quiet_setup(c.chars), 1.0, 4.0, seed);
      TransientOptions opts;
      opts.update_period = c.chars.update_period;
      opts.reference = &cap.reference;
      const auto fit = classify_transient(cap.smi, cap.step_time, opts);
      CHECK(fit.cls == c.expected);
      if (c.expected == TransientClass::LinearRunningAvg)
        CHECK(fit.ramp_duration == doctest::Approx(1.0).epsilon(0.1));
      if (c.expected == TransientClass::LogGrowth) CHECK(fit.exp_tau == doctest::Approx(0.2).epsilon(0.25));
    }
  }
}

TEST_CASE("transient class names round trip") {
  for (auto c : {TransientClass::Instant, TransientClass::SlowSource, TransientClass::LinearRunningAvg,
                 TransientClass::LogGrowth})
    CHECK(transient_class_from_string(to_string(c)) == c);
  CHECK(to_string(TransientClass::LinearRunningAvg) == "LINEAR_RUNNING_AVG");
  CHECK_THROWS_AS(transient_class_from_string("FAST"), Error);
}

TEST_CASE("emulate_boxcar") {
  const auto flat = make_trace(Source::Pmd, {0.0, 2.0}, {70.0, 70.0});
  const std::vector<double> times = {0.5, 1.0, 1.7};
  for (double w : {0.001, 0.1, 0.5}) {
    const auto e = emulate_boxcar(flat, times, w);
    CHECK(e.source() == Source::Emulated);
    for (const auto& s : e.samples()) CHECK(s.p == doctest::Approx(70.0));
  }

  const auto wave = gen_ground_truth(
      [] {
        GroundTruthModel m;
        m.load = {0.1, 0.3, 200.0, 0.0, 20, 0.0001};
        m.idle_power = 10.0;
        return m;
      }(),
      2.0, 5000);
  SUBCASE("vanishing window returns the reference value") {
    for (double t : {0.3333, 0.71, 1.2345}) {
      const auto e = emulate_boxcar(wave, std::vector<double>{t}, 0.0);
      CHECK(e[0].p == doctest::Approx(value_at(wave, t)));
      const auto tiny = emulate_boxcar(wave, std::vector<double>{t}, 1e-7);
      CHECK(tiny[0].p == doctest::Approx(value_at(wave, t)).epsilon(1e-3));
    }
  }
  SUBCASE("a whole period averages to the duty-weighted mean") {
    const std::vector<double> ts = {0.5, 0.5377, 1.02, 1.9};
    const auto e = emulate_boxcar(wave, ts, 0.1);
    for (const auto& s : e.samples())
      CHECK(s.p == doctest::Approx(10.0 + 0.3 * 200.0).epsilon(1e-6));
  }
  SUBCASE("matches brute-force quadrature") {
    const std::vector<double> ts = {0.41, 0.77, 1.5};
    for (double w : {0.013, 0.04, 0.25}) {
      const auto e = emulate_boxcar(wave, ts, w);
      for (const auto& s : e.samples()) CHECK(s.p == doctest::Approx(oracle_boxcar(wave, s.t, w)).epsilon(1e-3));
    }
  }
  CHECK_THROWS_AS(emulate_boxcar(wave, std::vector<double>{0.05}, 0.1), Error);
}

TEST_CASE("window loss is minimal at the true window on a 1 ms grid") {
  for (double w_true : {0.010, 0.025, 0.060}) {
    CAPTURE(w_true);
    const auto setup = quiet_setup(chars_of(0.1, w_true));
    const auto cap = window_capture(setup, 0.075, 9.0, 17, ReferenceKind::GroundTruth);
    const WindowLoss loss(cap.smi, cap.reference);
    const double at_true = loss(w_true);
    CHECK(at_true < 1e-6);
    for (int ms = 1; ms <= 150; ++ms) CHECK(at_true <= loss(ms * 1e-3) + 1e-12);
  }
}

TEST_CASE("window loss of an exact emulation is zero") {
  const auto setup = quiet_setup(chars_of(0.1, 0.1));
  const auto cap = window_capture(setup, 0.08, 5.0, 3, ReferenceKind::GroundTruth);
  CHECK(window_loss(0.1, cap.smi, cap.reference) == doctest::Approx(0.0));
  CHECK(window_loss(0.1, cap.smi, cap.reference) == doctest::Approx(WindowLoss(cap.smi, cap.reference)(0.1)));
}

TEST_CASE("window loss ignores affine rescaling of the reference") {
  const auto setup = default_setup(find_preset("a100").chars);
  const auto cap = window_capture(setup, 0.08, 9.0, 5);
  std::vector<PowerSample> scaled;
  for (const auto& s : cap.reference.samples()) scaled.push_back({s.t, 1.7 * s.p + 30.0});
  const PowerTrace ref2(Source::Pmd, std::move(scaled));
  for (double w : {0.01, 0.025, 0.07}) {
    CHECK(window_loss(w, cap.smi, ref2) == doctest::Approx(window_loss(w, cap.smi, cap.reference)).epsilon(1e-9));
  }
  // The sensor's own gain and offset do not matter either.
  auto skewed = setup;
  skewed.sensor.chars.gain = 0.93;
  skewed.sensor.chars.offset = 3.0;
  const auto cap2 = window_capture(skewed, 0.08, 9.0, 5);
  CHECK(estimate_window(cap2.smi, cap2.reference, 0.1).window ==
        doctest::Approx(estimate_window(cap.smi, cap.reference, 0.1).window).epsilon(0.02));
}

TEST_CASE("window loss rejects unusable captures") {
  const auto flat = make_trace(Source::SmiInstant, {0.0, 1.0, 2.0, 3.0, 4.0}, {5, 5, 5, 5, 5});
  const auto ref = make_trace(Source::Pmd, {0.0, 4.0}, {5, 5});
  CHECK_THROWS_WITH_AS(window_loss(0.01, flat, ref), doctest::Contains("degenerate normalization"), Error);
  const auto shortcap = make_trace(Source::SmiInstant, {0.0, 0.5}, {1, 2});
  CHECK_THROWS_AS(window_loss(0.01, shortcap, ref), Error);
}

TEST_CASE("estimate_window recovers preset windows from single captures") {
  struct Case {
    const char* preset;
    double load_period;
    double tolerance;
  };
  for (const Case& c : {Case{"a100", 0.075, 0.004}, Case{"gtx1080ti", 0.0267, 0.0025},
                        Case{"rtx3090-instant", 0.08, 0.002}, Case{"gh200-gpu", 0.125, 0.004}}) {
    CAPTURE(c.preset);
    const auto chars = find_preset(c.preset).chars;
    const auto cap = window_capture(default_setup(chars), c.load_period, 9.0, 11);
    WindowSearchOptions opts;
    opts.load_period = c.load_period;
    const auto est = estimate_window(cap.smi, cap.reference, chars.update_period, opts);
    CHECK(std::abs(est.window - chars.window) <= c.tolerance);
    CHECK(est.converged);
  }
}

TEST_CASE("estimate_window: square-wave reference finds the same minimum") {
  const auto setup = default_setup(find_preset("a100").chars);
  const auto pmd = window_capture(setup, 0.125, 9.0, 23, ReferenceKind::Pmd);
  const auto ideal = window_capture(setup, 0.125, 9.0, 23, ReferenceKind::SquareWave);
  CHECK(pmd.smi == ideal.smi);
  const double a = estimate_window(pmd.smi, pmd.reference, 0.1).window;
  const double b = estimate_window(ideal.smi, ideal.reference, 0.1).window;
  // The ideal wave ignores the 2 ms edge settling, which costs a few ms of bias.
  CHECK(std::abs(a - b) <= 0.004);
  CHECK(std::abs(a - 0.025) <= 0.004);
  CHECK(std::abs(b - 0.025) <= 0.004);
}

TEST_CASE("estimate_window from half the update period on the RTX 3090") {
  const auto chars = find_preset("rtx3090-instant").chars;
  const auto cap = window_capture(default_setup(chars), 0.075, 9.0, 29);
  WindowSearchOptions opts;
  opts.load_period = 0.075;
  const auto est = estimate_window(cap.smi, cap.reference, chars.update_period, opts);
  CHECK(est.window == doctest::Approx(0.1).epsilon(0.02));
}

TEST_CASE("loss curve") {
  const auto setup = quiet_setup(find_preset("a100").chars);
  const auto cap = window_capture(setup, 0.08, 9.0, 31);
  const auto curve = loss_curve(cap.smi, cap.reference, 0.005, 0.1, 0.005);
  REQUIRE(curve.size() == 20);
  const auto best = std::min_element(curve.begin(), curve.end(),
                                     [](const LossPoint& a, const LossPoint& b) { return a.loss < b.loss; });
  CHECK(best->window == doctest::Approx(0.025));
  CHECK_THROWS_AS(loss_curve(cap.smi, cap.reference, 0.1, 0.05, 0.01), Error);
}

TEST_CASE("window protocol recovers an arbitrary window") {
  auto chars = chars_of(0.1, 0.040);
  ProtocolOptions opts;
  opts.repeats = 4;
  const auto result =
      estimate_window_protocol(simulated_capture_source(default_setup(chars), 77), 0.1, opts);
  CHECK(result.runs.size() == 24);
  CHECK(std::abs(result.estimate.window - 0.040) <= 0.004);
  CHECK(result.estimate.samples.size() == 24);
  for (const auto& run : result.runs) CHECK(run.window > 0.0);
}

TEST_CASE("window protocol reports unstable estimation") {
  ProtocolOptions opts;
  opts.repeats = 1;
  opts.search.optimizer.max_iterations = 1;
  opts.resolve_aliases = false;
  CHECK_THROWS_WITH_AS(
      estimate_window_protocol(simulated_capture_source(default_setup(find_preset("a100").chars), 1, ReferenceKind::Pmd, 4.0),
                               0.1, opts),
      doctest::Contains("unstable estimation"), Error);
  opts.repeats = 0;
  CHECK_THROWS_AS(estimate_window_protocol(simulated_capture_source(default_setup(find_preset("a100").chars), 1), 0.1, opts),
                  Error);
}

TEST_CASE("steady-state capture recovers gain and offset") {
  auto chars = find_preset("a100").chars;
  chars.gain = 0.95;
  chars.offset = 2.0;
  const auto setup = quiet_setup(chars);
  const std::vector<double> levels = {0, 50, 100, 150, 200, 250, 300};
  const auto points = steady_state_capture(setup, levels, 2, 8, ReferenceKind::GroundTruth);
  CHECK(points.size() == 14);
  const auto fit = steady_state_regression(points);
  CHECK(fit.gradient == doctest::Approx(0.95).epsilon(1e-9));
  CHECK(fit.intercept == doctest::Approx(2.0).epsilon(1e-7));
  CHECK(fit.r_squared == doctest::Approx(1.0));
}
