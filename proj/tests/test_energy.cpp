#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "smiprobe/energy.hpp"
#include "smiprobe/experiments.hpp"
#include "smiprobe/sim.hpp"

using namespace smiprobe;
using testing::make_trace;

namespace {

void append_block(RepetitionLog& log, int reps, double rep, double start, int trial) {
  for (int i = 0; i < reps; ++i) log.add({start + i * rep, start + (i + 1) * rep}, trial);
}

RepetitionLog contiguous_log(int reps, double rep, double start = 0.0, int trial = 0) {
  RepetitionLog log;
  append_block(log, reps, rep, start, trial);
  return log;
}

MeasurementPlan bare_plan(int reps) {
  MeasurementPlan plan;
  plan.repetitions = reps;
  plan.trials = 1;
  return plan;
}

struct SimRun {
  EnergyReport report;
  VirtualExperiment ex;
};

SimRun simulate_measurement(const SensorCharacteristics& truth_chars,
                            const SensorCharacteristics& assumed, double rep_duration,
                            std::uint64_t seed, bool quiet, CorrectionOptions correction = {},
                            std::optional<MeasurementPlan> plan_override = {}) {
  SimulationSetup setup = default_setup(truth_chars);
  if (quiet) {
    setup.truth.noise_std = 0.0;
    setup.pmd.noise_std = 0.0;
  }
  const MeasurementPlan plan = plan_override.value_or(plan_measurement(assumed, rep_duration));
  GroundTruthModel model = setup.truth;
  model.seed = mix_seed(seed, 500);
  SensorConfig sensor = setup.sensor;
  sensor.seed = mix_seed(seed, 501);
  PmdConfig pmd = setup.pmd;
  pmd.seed = mix_seed(seed, 502);
  SimRun run{{}, run_virtual_experiment(plan, rep_duration, model, sensor, pmd)};
  run.report = measure_energy(run.ex.smi, run.ex.log, plan, assumed, correction);
  run.report = compare_with_reference(run.report, run.ex.truth, run.ex.log);
  return run;
}

}  // namespace

TEST_CASE("plan_measurement rules") {
  SUBCASE("A100, 100 ms repetitions") {
    const auto plan = plan_measurement(find_preset("a100").chars, 0.1);
    CHECK(plan.repetitions == 50);
    CHECK(plan.shifts == 8);
    CHECK(plan.shift_delay == doctest::Approx(0.025));
    CHECK(plan.trials == 4);
    CHECK(plan.inter_trial_min == 0.0);
    CHECK(plan.inter_trial_max == 1.0);
    CHECK(plan.discard_lead == doctest::Approx(0.1 + 0.1));
  }
  SUBCASE("window equal to the update period needs no shifts") {
    const auto plan = plan_measurement(find_preset("rtx3090-instant").chars, 0.1);
    CHECK(plan.shifts == 0);
    CHECK(plan.shift_delay == 0.0);
  }
  SUBCASE("running average discards rise plus one second") {
    const auto plan = plan_measurement(find_preset("rtx3090-average").chars, 0.1);
    CHECK(plan.discard_lead == doctest::Approx(1.25));
    CHECK(plan.shifts == 0);
  }
  SUBCASE("repetition count covers the minimum runtime") {
    const auto chars = find_preset("v100").chars;
    CHECK(plan_measurement(chars, 1.0).repetitions == 32);
    CHECK(plan_measurement(chars, 0.01).repetitions == 500);
    CHECK(plan_measurement(chars, 0.3).repetitions == 32);
    CHECK(plan_measurement(chars, 0.15).repetitions == 34);
  }
  CHECK_THROWS_AS(plan_measurement(find_preset("a100").chars, 0.0), Error);
}

TEST_CASE("schedule_shifts") {
  const auto four = schedule_shifts(64, 4, 0.025);
  REQUIRE(four.size() == 3);
  CHECK(four[0] == ShiftPoint{16, 0.025});
  CHECK(four[1] == ShiftPoint{32, 0.025});
  CHECK(four[2] == ShiftPoint{48, 0.025});
  const auto eight = schedule_shifts(64, 8, 0.025);
  REQUIRE(eight.size() == 7);
  for (std::size_t i = 0; i < eight.size(); ++i) CHECK(eight[i].after_rep == 8 * static_cast<int>(i + 1));
  CHECK(schedule_shifts(50, 0, 0.025).empty());
  CHECK_THROWS_AS(schedule_shifts(4, 5, 0.025), Error);
  CHECK_THROWS_AS(schedule_shifts(4, -1, 0.025), Error);
}

TEST_CASE("schedule_shifts properties") {
  for (int n = 1; n <= 120; ++n) {
    for (int s = 0; s <= std::min(n, 16); ++s) {
      const auto points = schedule_shifts(n, s, 0.01);
      CHECK(static_cast<int>(points.size()) <= s);
      CHECK(static_cast<int>(points.size()) >= std::max(0, s - 1));
      for (std::size_t i = 0; i < points.size(); ++i) {
        CHECK(points[i].after_rep < n);
        CHECK(points[i].after_rep > 0);
        if (i > 0) CHECK(points[i].after_rep > points[i - 1].after_rep);
      }
      if (s > 0 && n % s == 0) {
        // The final delay would fall after the last repetition; the spacing
        // still amounts to S delays per N repetitions.
        double total = 0.0;
        for (const auto& p : points) total += p.delay;
        CHECK(total + 0.01 == doctest::Approx(s * 0.01));
      }
    }
  }
}

TEST_CASE("correct_trace") {
  const auto smi = make_trace(Source::SmiInstant, {1.0, 1.1, 1.2}, {50.0, 80.0, 90.0});
  SensorCharacteristics c = find_preset("rtx3090-instant").chars;
  const auto shifted = correct_trace(smi, c);
  for (std::size_t i = 0; i < smi.size(); ++i) {
    CHECK(shifted[i].t == doctest::Approx(smi[i].t - 0.1));
    CHECK(shifted[i].p == smi[i].p);
  }
  c.gain = 0.95;
  c.offset = 2.0;
  const auto affine = correct_trace(smi, c);
  for (std::size_t i = 0; i < smi.size(); ++i) CHECK(affine[i].p == doctest::Approx((smi[i].p - 2.0) / 0.95));
  const auto time_only = correct_trace(smi, c, {false});
  CHECK(time_only.values() == smi.values());
  c.gain = 0.0;
  CHECK_THROWS_AS(correct_trace(smi, c), Error);
}

TEST_CASE("correct_trace re-aligns step edges to the ground truth") {
  for (const char* name : {"a100", "rtx3090-instant", "v100", "gh200-cpu"}) {
    CAPTURE(name);
    const auto chars = find_preset(name).chars;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      const auto cap = step_capture(default_setup(chars), 1.0, 2.0, seed);
      const auto corrected = correct_trace(cap.smi, chars);
      double edge = -1.0;
      for (const auto& s : corrected.samples())
        if (s.p > 160.0) {
          edge = s.t;
          break;
        }
      CHECK(std::abs(edge - 1.0) <= chars.update_period + 1e-9);
    }
  }
}

TEST_CASE("discard_rise") {
  const auto log = contiguous_log(40, 0.025, 3.0);
  const auto cut = discard_rise(log, 0.25);
  int discarded = 0;
  for (std::size_t i = 0; i < cut.size(); ++i) {
    if (cut.discarded[i]) ++discarded;
    CHECK(cut.discarded[i] == (i < 10));
  }
  CHECK(discarded == 10);

  const auto none = discard_rise(log, 0.0);
  for (bool d : none.discarded) CHECK_FALSE(d);

  // A repetition straddling the boundary intersects the lead and goes.
  const auto straddle = discard_rise(contiguous_log(4, 0.1), 0.15);
  CHECK(straddle.discarded == std::vector<bool>{true, true, false, false});

  // Leads are counted per trial.
  RepetitionLog two = contiguous_log(4, 0.1);
  append_block(two, 4, 0.1, 1.0, 1);
  CHECK(discard_rise(two, 0.1).discarded ==
        std::vector<bool>{true, false, false, false, true, false, false, false});

  CHECK_THROWS_WITH_AS(discard_rise(contiguous_log(4, 0.1), 1.0), doctest::Contains("trial too short"), Error);
}

TEST_CASE("discard_boundaries drops repetitions next to idle time") {
  RepetitionLog log = contiguous_log(8, 0.1);
  append_block(log, 8, 0.1, 0.825, 0);  // after a 25 ms delay
  MeasurementPlan plan = bare_plan(16);
  plan.discard_lead = 0.15;
  plan.discard_after_delay = 0.1;
  plan.discard_tail = 0.025;
  const auto out = discard_boundaries(log, plan);
  const std::vector<bool> expected = {true, true, false, false, false, false, false, true,
                                      true, false, false, false, false, false, false, true};
  CHECK(out.discarded == expected);

  MeasurementPlan loose = bare_plan(16);
  CHECK(discard_boundaries(log, loose).discarded == std::vector<bool>(16, false));
  plan.discard_tail = 5.0;
  CHECK_THROWS_WITH_AS(discard_boundaries(log, plan), doctest::Contains("trial too short"), Error);
}

TEST_CASE("measure_energy on a constant trace") {
  std::vector<double> t, p;
  for (int i = 0; i <= 120; ++i) {
    t.push_back(i * 0.1);
    p.push_back(100.0);
  }
  const auto smi = make_trace(Source::SmiInstant, t, p);
  SensorCharacteristics c;
  c.update_period = 0.1;
  c.window = 0.1;
  const auto log = contiguous_log(8, 1.0, 1.0);
  const auto r = measure_energy(smi, log, bare_plan(8), c);
  CHECK(r.per_rep_j.size() == 8);
  for (double e : r.per_rep_j) CHECK(e == doctest::Approx(100.0));
  CHECK(r.corrected_energy_j == doctest::Approx(100.0));
  CHECK(r.naive_energy_j == doctest::Approx(100.0));
  CHECK(stddev_of(r.per_rep_j) == doctest::Approx(0.0));

  const auto same = compare_with_reference(r, make_trace(Source::Pmd, {0.0, 12.0}, {100.0, 100.0}), log);
  CHECK(*same.mean_error_pct == doctest::Approx(0.0));
  CHECK(*same.reference_energy_j == doctest::Approx(100.0));

  const auto high = compare_with_reference(r, make_trace(Source::Pmd, {0.0, 12.0}, {80.0, 80.0}), log);
  CHECK(*high.mean_error_pct == doctest::Approx(25.0));
  CHECK_THROWS_WITH_AS(compare_with_reference(r, make_trace(Source::Pmd, {0.0, 5.0}, {80.0, 80.0}), log),
                       doctest::Contains("coverage gap"), Error);
}

TEST_CASE("measure_energy is invariant under time translation") {
  const auto chars = find_preset("a100").chars;
  const auto run = simulate_measurement(chars, chars, 0.1, 3, false);
  for (double dt : {-0.4, 2.5, 100.0}) {
    const auto smi = shift_earlier(run.ex.smi, -dt);
    RepetitionLog log = run.ex.log;
    for (auto& s : log.spans) s = {s.start + dt, s.end + dt};
    const auto plan = plan_measurement(chars, 0.1);
    const auto moved = measure_energy(smi, log, plan, chars);
    CHECK(moved.kept == run.report.kept);
    CHECK(moved.corrected_energy_j == doctest::Approx(run.report.corrected_energy_j).epsilon(1e-9));
    CHECK(moved.naive_energy_j == doctest::Approx(run.report.naive_energy_j).epsilon(1e-9));
  }
}

TEST_CASE("ideal sensor: corrected energy equals true energy") {
  // INSTANT, w = T_u, unit gain, noiseless: only the 0.01 W reading quantum remains.
  const auto chars = find_preset("rtx3090-instant").chars;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    const auto run = simulate_measurement(chars, chars, 0.1, seed, true);
    CHECK(std::abs(*run.report.mean_error_pct) < 0.01);
    for (double e : run.report.per_trial_error_pct) CHECK(std::abs(e) < 0.01);
  }
}

TEST_CASE("gain error survives time correction and vanishes with the affine transform") {
  // Window equal to, and longer than, the update period: the two RTX 3090 cases.
  for (const char* name : {"rtx3090-instant", "rtx3090-average"}) {
    CAPTURE(name);
    auto chars = find_preset(name).chars;
    chars.gain = 0.953;
    const double injected = (0.953 - 1.0) * 100.0;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto time_only = simulate_measurement(chars, chars, 0.1, seed, false, {false});
      CHECK(std::abs(*time_only.report.mean_error_pct - injected) < 1.0);
      const auto full = simulate_measurement(chars, chars, 0.1, seed, false, {true});
      CHECK(std::abs(*full.report.mean_error_pct) < 1.0);
    }
  }
}

TEST_CASE("phase shifting reduces the spread of per-trial errors") {
  const auto chars = find_preset("a100").chars;
  MeasurementPlan naive_plan = plan_measurement(chars, 0.1);
  naive_plan.shifts = 0;
  naive_plan.discard_after_delay = 0.0;
  std::vector<double> naive, corrected;
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    const auto run = simulate_measurement(chars, chars, 0.1, seed, false);
    for (double e : run.report.per_trial_naive_error_pct) naive.push_back(e);
    for (double e : run.report.per_trial_error_pct) corrected.push_back(e);
  }
  CHECK(stddev_of(corrected) < stddev_of(naive));
  CHECK(stddev_of(corrected) < 5.0);
  CHECK(std::abs(mean_of(corrected)) < 1.0);
}

TEST_CASE("shifts widen the part of each period the sensor observes") {
  // Mark which 1 ms slots of the 100 ms repetition fall inside some sensor
  // window, over one trial.
  const auto chars = find_preset("a100").chars;
  auto coverage = [&](int shifts) {
    MeasurementPlan plan = plan_measurement(chars, 0.1);
    plan.shifts = shifts;
    plan.trials = 1;
    GroundTruthModel model = default_setup(chars).truth;
    model.seed = 9;
    const auto ex = run_virtual_experiment(plan, 0.1, model, default_setup(chars).sensor, PmdConfig{});
    std::vector<bool> seen(100, false);
    for (const auto& s : ex.smi.samples()) {
      for (int j = 0; j < 25; ++j) {
        const double x = s.t - chars.window + (j + 0.5) * 1e-3;
        for (const auto& span : ex.log.spans)
          if (x >= span.start && x < span.end)
            seen[std::min<std::size_t>(99, static_cast<std::size_t>((x - span.start) * 1e3))] = true;
      }
    }
    return static_cast<double>(std::count(seen.begin(), seen.end(), true)) / 100.0;
  };
  const double w_over_tu = chars.window / chars.update_period;
  CHECK(coverage(0) <= w_over_tu + 0.02);
  CHECK(coverage(8) >= std::min(1.0, 9 * w_over_tu) - 0.02);
}

TEST_CASE("plan and log validation") {
  MeasurementPlan plan;
  plan.repetitions = 0;
  CHECK_THROWS_AS(plan.validate(), Error);
  plan = MeasurementPlan{};
  plan.shifts = 40;
  CHECK_THROWS_AS(plan.validate(), Error);
  plan = MeasurementPlan{};
  plan.inter_trial_min = 2.0;
  CHECK_THROWS_AS(plan.validate(), Error);

  RepetitionLog log;
  log.add({0.0, 1.0}, 0);
  log.add({0.5, 1.5}, 0);
  CHECK_THROWS_WITH_AS(log.validate(), doctest::Contains("overlapping"), Error);
}
