#pragma once

#include <cstdint>
#include <string_view>

namespace smiprobe {

// Square-wave workload: `cycles` periods starting at t_start, each spending
// duty * period at p_high and the remainder at p_low.
struct LoadProfile {
  double period = 0.1;
  double duty = 0.5;
  double p_high = 200.0;
  double p_low = 0.0;
  int cycles = 1;
  double t_start = 0.0;

  double end() const { return t_start + period * cycles; }
  void validate() const;
};

enum class TransientClass { Instant, SlowSource, LinearRunningAvg, LogGrowth };

std::string_view to_string(TransientClass c);
TransientClass transient_class_from_string(std::string_view name);

// Hidden sampling behaviour of an on-board sensor.
struct SensorCharacteristics {
  double update_period = 0.1;  // T_u, seconds between published readings
  double window = 0.1;         // trailing boxcar length, seconds
  double gain = 1.0;
  double offset = 0.0;  // watts
  double rise_time = 0.0;
  TransientClass transient_class = TransientClass::Instant;
  double log_tau = 0.2;  // lag time constant, LogGrowth only
  double phase = 0.0;    // first update instant relative to capture start, [0, T_u)

  // Window actually applied by the sensor; the running-average mode always
  // reports the last second.
  double effective_window() const {
    return transient_class == TransientClass::LinearRunningAvg ? 1.0 : window;
  }
  void validate() const;
};

}  // namespace smiprobe
