#include "smiprobe/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace smiprobe {

namespace {

double draw_phase(std::uint64_t seed, double update_period) {
  std::mt19937_64 rng(seed);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  return std::min(u * update_period, std::nextafter(update_period, 0.0));
}

PowerTrace reference_for(ReferenceKind kind, const PowerTrace& truth,
                         std::span<const LoadSegment> segments,
                         const SimulationSetup& setup, double duration, std::uint64_t seed) {
  switch (kind) {
    case ReferenceKind::Pmd: {
      PmdConfig pmd = setup.pmd;
      pmd.seed = mix_seed(seed, 3);
      return sample_pmd(truth, pmd).trace;
    }
    case ReferenceKind::SquareWave: {
      GroundTruthModel ideal = setup.truth;
      ideal.transition_tau = 0.0;
      ideal.noise_std = 0.0;
      return gen_ground_truth(segments, ideal, duration, setup.truth_rate);
    }
    case ReferenceKind::GroundTruth:
      return truth;
  }
  return truth;
}

}  // namespace

SimulationSetup default_setup(const SensorCharacteristics& chars) {
  SimulationSetup s;
  s.sensor.chars = chars;
  s.sensor.quant_step = 0.01;
  s.truth.load.p_high = 200.0;
  s.truth.load.p_low = 0.0;
  s.truth.load.duty = 0.5;
  s.truth.idle_power = 60.0;
  s.truth.transition_tau = 0.002;
  // The slow-source case is the board itself taking hundreds of ms to draw
  // full power; its 10-90% rise of a first-order lag is tau * ln 9.
  if (chars.transient_class == TransientClass::SlowSource)
    s.truth.transition_tau = std::max(chars.rise_time, 0.3) / std::log(9.0);
  s.truth.noise_std = 2.0;
  s.pmd.noise_std = 1.0;
  return s;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over the combined words
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (a + 1) + 0xbf58476d1ce4e5b9ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<LoadSegment> realised_square_wave(const SimulationSetup& setup,
                                              double load_period, double duration,
                                              std::uint64_t seed) {
  if (!(load_period > 0.0) || !(duration > 0.0))
    throw Error("invalid load: period and duration must be > 0");
  if (!(setup.period_error_min >= 0.0 && setup.period_error_max >= setup.period_error_min &&
        setup.cycle_jitter >= 0.0 && setup.period_error_max < 0.5 && setup.cycle_jitter < 0.2))
    throw Error("invalid load: period error or cycle jitter out of range");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double magnitude = setup.period_error_min +
                           (setup.period_error_max - setup.period_error_min) * unit(rng);
  const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  const double period = load_period * (1.0 + sign * magnitude);
  std::normal_distribution<double> jitter(0.0, setup.cycle_jitter);
  const LoadProfile& load = setup.truth.load;

  std::vector<LoadSegment> out;
  double t = 0.0;
  while (t < duration + load_period) {
    // Clamp keeps pathological draws from producing empty or negative phases.
    const double scale = std::clamp(1.0 + jitter(rng), 0.5, 1.5);
    const double high = load.duty * period * scale;
    const double low = (1.0 - load.duty) * period * scale;
    if (high > 0.0) out.push_back({t, t + high, load.p_high});
    if (low > 0.0) out.push_back({t + high, t + high + low, load.p_low});
    t += high + low;
  }
  return out;
}

SimulatedSession simulate_session(const SimulationSetup& setup, double load_period,
                                  double duration, std::uint64_t seed) {
  GroundTruthModel model = setup.truth;
  model.seed = mix_seed(seed, 1);
  SimulatedSession out;
  out.segments = realised_square_wave(setup, load_period, duration, mix_seed(seed, 6));
  out.truth = gen_ground_truth(out.segments, model, duration, setup.truth_rate);

  SensorConfig sensor = setup.sensor;
  sensor.chars.phase = draw_phase(mix_seed(seed, 2), sensor.chars.update_period);
  sensor.seed = mix_seed(seed, 4);
  out.phase = sensor.chars.phase;
  out.smi = sample_sensor(out.truth, sensor);
  PmdConfig pmd = setup.pmd;
  pmd.seed = mix_seed(seed, 3);
  out.pmd = sample_pmd(out.truth, pmd).trace;
  return out;
}

Capture window_capture(const SimulationSetup& setup, double load_period, double duration,
                       std::uint64_t seed, ReferenceKind reference) {
  GroundTruthModel model = setup.truth;
  model.seed = mix_seed(seed, 1);
  const auto segments = realised_square_wave(setup, load_period, duration, mix_seed(seed, 6));
  const PowerTrace truth = gen_ground_truth(segments, model, duration, setup.truth_rate);

  SensorConfig sensor = setup.sensor;
  sensor.chars.phase = draw_phase(mix_seed(seed, 2), sensor.chars.update_period);
  sensor.seed = mix_seed(seed, 4);

  Capture capture;
  capture.smi = sample_sensor(truth, sensor);
  capture.reference = reference_for(reference, truth, segments, setup, duration, seed);
  return capture;
}

CaptureSource simulated_capture_source(const SimulationSetup& setup, std::uint64_t seed,
                                       ReferenceKind reference, double duration) {
  return [=](double load_period, int fraction_index, int repeat) {
    return window_capture(setup, load_period, duration,
                          mix_seed(seed, static_cast<std::uint64_t>(fraction_index),
                                   static_cast<std::uint64_t>(repeat)),
                          reference);
  };
}

PowerTrace update_period_capture(const SimulationSetup& setup, const QueryConfig& query,
                                 double duration, std::uint64_t seed, double load_period) {
  const Capture capture =
      window_capture(setup, load_period, duration, seed, ReferenceKind::GroundTruth);
  QueryConfig q = query;
  q.seed = mix_seed(seed, 5);
  return poll_sensor(capture.smi, q);
}

StepCapture step_capture(const SimulationSetup& setup, double step_time, double duration,
                         std::uint64_t seed) {
  GroundTruthModel model = setup.truth;
  model.seed = mix_seed(seed, 1);
  const LoadSegment step{step_time, duration + 1.0, model.load.p_high};
  const PowerTrace truth =
      gen_ground_truth(std::span<const LoadSegment>(&step, 1), model, duration, setup.truth_rate);

  SensorConfig sensor = setup.sensor;
  sensor.chars.phase = draw_phase(mix_seed(seed, 2), sensor.chars.update_period);
  sensor.seed = mix_seed(seed, 4);

  StepCapture out;
  out.step_time = step_time;
  out.smi = sample_sensor(truth, sensor);
  PmdConfig pmd = setup.pmd;
  pmd.seed = mix_seed(seed, 3);
  out.reference = sample_pmd(truth, pmd).trace;
  return out;
}

std::vector<SteadyStatePoint> steady_state_capture(const SimulationSetup& setup,
                                                   std::span<const double> levels,
                                                   int repetitions, std::uint64_t seed,
                                                   ReferenceKind reference) {
  const double settle =
      std::max(0.5, setup.sensor.chars.effective_window() + setup.sensor.chars.update_period);
  const double duration = settle + 1.0;
  std::vector<SteadyStatePoint> points;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    for (int r = 0; r < repetitions; ++r) {
      const std::uint64_t s = mix_seed(seed, l, static_cast<std::uint64_t>(r));
      GroundTruthModel model = setup.truth;
      model.seed = mix_seed(s, 1);
      const LoadSegment constant{0.0, duration + 1.0, levels[l]};
      const auto segments = std::span<const LoadSegment>(&constant, 1);
      const PowerTrace truth = gen_ground_truth(segments, model, duration, setup.truth_rate);

      SensorConfig sensor = setup.sensor;
      sensor.chars.phase = draw_phase(mix_seed(s, 2), sensor.chars.update_period);
      sensor.seed = mix_seed(s, 4);
      const PowerTrace smi = sample_sensor(truth, sensor);
      const PowerTrace ref = reference_for(reference, truth, segments, setup, duration, s);

      std::vector<double> readings;
      for (const auto& x : smi.samples())
        if (x.t >= settle) readings.push_back(x.p);
      if (readings.empty()) throw Error("insufficient samples: no settled sensor readings");
      const double t0 = std::max(settle - setup.sensor.chars.effective_window(), 0.0);
      points.push_back({mean_power(ref, {t0, duration}), mean_of(readings)});
    }
  }
  return points;
}

}  // namespace smiprobe
