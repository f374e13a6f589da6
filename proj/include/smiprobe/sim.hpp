#pragma once

// Deterministic stand-in for a GPU under test: continuous board power for a
// workload, the on-board sensor's view of it, and a high-rate external meter.
// Every generator is a pure function of its inputs and seed.

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smiprobe/energy.hpp"
#include "smiprobe/model.hpp"
#include "smiprobe/trace.hpp"

namespace smiprobe {

struct GroundTruthModel {
  LoadProfile load;
  double idle_power = 0.0;      // floor added to every load level
  double transition_tau = 0.0;  // first-order settling at load edges
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Load level (watts above idle) held over [start, end).
struct LoadSegment {
  double start = 0.0;
  double end = 0.0;
  double level = 0.0;
};

std::vector<LoadSegment> square_wave_segments(const LoadProfile& load);

// Dense ground truth from model.load sampled at `rate` over [0, duration].
PowerTrace gen_ground_truth(const GroundTruthModel& model, double duration,
                            double rate);

// Same, for an arbitrary segment schedule; model.load is ignored.
PowerTrace gen_ground_truth(std::span<const LoadSegment> segments,
                            const GroundTruthModel& model, double duration,
                            double rate);

struct SensorConfig {
  SensorCharacteristics chars;
  double quant_step = 0.0;  // reading granularity, 0 disables
  std::uint64_t seed = 0;
  // Extra time added to every update interval, and random spread around it.
  double update_jitter = 0.0;
  double update_jitter_std = 0.0;
  // Delay between the end of the averaging window and publication.
  double latency = 0.0;

  void validate() const;
};

// One reading per sensor update, at t_k = start + phase + k * T_u.
PowerTrace sample_sensor(const PowerTrace& truth, const SensorConfig& cfg);

// A client polling the sensor: readings at the query instants, each holding
// the last published update.
struct QueryConfig {
  double interval = 0.005;
  double jitter = 0.0;  // uniform half-width added to every interval
  std::uint64_t seed = 0;
};

PowerTrace poll_sensor(const PowerTrace& updates, const QueryConfig& cfg);

struct PmdConfig {
  double sample_rate = 5000.0;
  double volt_quantum = 0.007568;
  double amp_quantum = 0.0488;
  double bus_voltage = 12.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr int kAdcLevels = 4096;

struct PmdSampling {
  PowerTrace trace;
  std::size_t clamped = 0;  // samples whose current exceeded the ADC range
};

PmdSampling sample_pmd(const PowerTrace& truth, const PmdConfig& cfg);

struct EventMarkers {
  std::vector<TimeWindow> rep_spans;
  std::vector<TimeWindow> delay_spans;
};

struct ExperimentOptions {
  double truth_rate = 5000.0;
  double lead_in = 0.5;  // idle time before the first trial
  double tail = -1.0;    // idle time after the last trial; < 0 picks a default
  bool randomize_phase = true;
};

struct VirtualExperiment {
  PowerTrace truth;
  PowerTrace smi;
  PowerTrace pmd;
  EventMarkers markers;
  RepetitionLog log;
  double phase = 0.0;  // sensor phase actually used
};

// Executes a measurement plan against the simulator. Each repetition is one
// period of the model's load shape: duty * rep_duration at p_high followed by
// p_low. Delays and inter-trial gaps run at idle.
VirtualExperiment run_virtual_experiment(const MeasurementPlan& plan,
                                         double rep_duration,
                                         const GroundTruthModel& model,
                                         const SensorConfig& sensor,
                                         const PmdConfig& pmd,
                                         const ExperimentOptions& options = {});

struct Preset {
  std::string_view name;
  SensorCharacteristics chars;
  std::string_view note;
};

std::span<const Preset> presets();
const Preset& find_preset(std::string_view name);
std::string preset_names();

}  // namespace smiprobe
