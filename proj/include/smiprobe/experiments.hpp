#pragma once

// Characterization experiments run against the simulator: each function
// produces the capture the corresponding bench procedure would record.

#include <cstdint>
#include <span>
#include <vector>

#include "smiprobe/characterize.hpp"
#include "smiprobe/sim.hpp"

namespace smiprobe {

struct SimulationSetup {
  SensorConfig sensor;
  // Load levels, idle floor, edge settling and noise. The load's period and
  // cycle count are overridden by each experiment.
  GroundTruthModel truth;
  PmdConfig pmd;
  double truth_rate = 5000.0;
  // A calibrated load never hits its nominal period exactly. Each capture
  // draws a realised period off by a relative error in
  // [period_error_min, period_error_max] (random sign), and every cycle's
  // duration varies with relative std cycle_jitter.
  double period_error_min = 0.002;
  double period_error_max = 0.01;
  double cycle_jitter = 0.005;
};

// Defaults used throughout the toolkit: 60 W idle, +200 W high state,
// 2 ms edge settling, light noise on truth and meter, 0.01 W readings.
// A SLOW_SOURCE sensor gets a source whose edges rise over chars.rise_time
// (at least 300 ms).
SimulationSetup default_setup(const SensorCharacteristics& chars);

// What the sensor is compared against: the external meter, the ideal load
// square wave, or the simulator's noisy ground truth.
enum class ReferenceKind { Pmd, SquareWave, GroundTruth };

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Segments of a square wave whose realised period and per-cycle durations
// deviate from the nominal one as configured in `setup`.
std::vector<LoadSegment> realised_square_wave(const SimulationSetup& setup,
                                              double load_period, double duration,
                                              std::uint64_t seed);

struct SimulatedSession {
  std::vector<LoadSegment> segments;
  PowerTrace truth;
  PowerTrace smi;
  PowerTrace pmd;
  double phase = 0.0;
};

// Everything recorded during one square-wave capture: ground truth, the
// sensor's readings and the meter trace.
SimulatedSession simulate_session(const SimulationSetup& setup, double load_period,
                                  double duration, std::uint64_t seed);

// Square-wave load of (roughly) the given period from t = 0 for `duration`
// seconds, sensor phase drawn from the seed.
Capture window_capture(const SimulationSetup& setup, double load_period,
                       double duration, std::uint64_t seed,
                       ReferenceKind reference = ReferenceKind::Pmd);

CaptureSource simulated_capture_source(const SimulationSetup& setup, std::uint64_t seed,
                                       ReferenceKind reference = ReferenceKind::Pmd,
                                       double duration = 9.0);

// Polled sensor trace under a fast-changing load (default 20 ms square wave,
// slightly detuned so consecutive updates differ).
PowerTrace update_period_capture(const SimulationSetup& setup, const QueryConfig& query,
                                 double duration, std::uint64_t seed,
                                 double load_period = 0.0206);

struct StepCapture {
  PowerTrace smi;
  PowerTrace reference;
  double step_time = 0.0;
};

// Idle until step_time, then the high state until the end.
StepCapture step_capture(const SimulationSetup& setup, double step_time, double duration,
                         std::uint64_t seed);

// Constant loads at each level (watts above idle), `repetitions` captures per
// level. Each point pairs the mean reference power with the mean sensor
// reading over the settled part of the capture.
std::vector<SteadyStatePoint> steady_state_capture(const SimulationSetup& setup,
                                                   std::span<const double> levels,
                                                   int repetitions, std::uint64_t seed,
                                                   ReferenceKind reference = ReferenceKind::Pmd);

}  // namespace smiprobe
