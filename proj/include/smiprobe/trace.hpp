#pragma once

// Time-series model shared by every other part of the toolkit: power traces
// from the on-board sensor, the external meter, the simulator's ground truth
// and emulated sensor output, plus the arithmetic done on them.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "smiprobe/error.hpp"

namespace smiprobe {

enum class Source { SmiInstant, SmiAverage, Pmd, GroundTruth, Emulated };

std::string_view to_string(Source source);
Source source_from_string(std::string_view name);

// Sensor readings persist until the next update; everything else is a
// densely sampled signal and is interpolated linearly.
bool uses_hold(Source source);

struct PowerSample {
  double t = 0.0;  // seconds on the session timebase
  double p = 0.0;  // watts

  friend bool operator==(const PowerSample&, const PowerSample&) = default;
};

struct TimeWindow {
  double start = 0.0;
  double end = 0.0;

  double duration() const { return end - start; }
  bool contains(double t) const { return t >= start && t <= end; }

  friend bool operator==(const TimeWindow&, const TimeWindow&) = default;
};

TimeWindow make_window(double start, double end);

// Timestamps strictly increasing, every value finite and non-negative.
class PowerTrace {
 public:
  PowerTrace() = default;
  PowerTrace(Source source, std::vector<PowerSample> samples,
             double nominal_period = 0.0);

  Source source() const { return source_; }
  double nominal_period() const { return nominal_period_; }
  std::span<const PowerSample> samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const PowerSample& operator[](std::size_t i) const { return samples_[i]; }
  const PowerSample& front() const { return samples_.front(); }
  const PowerSample& back() const { return samples_.back(); }

  TimeWindow span() const;
  std::vector<double> times() const;
  std::vector<double> values() const;

  // Index of the last sample with t <= time, or nullopt when time precedes
  // the first sample.
  std::optional<std::size_t> index_at_or_before(double time) const;

  // Samples with t in [start, end].
  PowerTrace slice(double start, double end) const;
  PowerTrace with_source(Source source) const;

  friend bool operator==(const PowerTrace&, const PowerTrace&) = default;

 private:
  Source source_ = Source::GroundTruth;
  std::vector<PowerSample> samples_;
  double nominal_period_ = 0.0;
};

// Interpolated value (hold or linear depending on the source).
double value_at(const PowerTrace& trace, double t);

// Integral of power over the part of `win` covered by the trace. Sensor traces
// integrate their held readings exactly; dense traces use the trapezoid rule
// with linearly interpolated boundary values.
double integrate_energy(const PowerTrace& trace, const TimeWindow& win);

// Mean power over the covered part of `win`.
double mean_power(const PowerTrace& trace, const TimeWindow& win);

PowerTrace normalize(const PowerTrace& trace);

// Negative dt shifts the trace later.
PowerTrace shift_earlier(const PowerTrace& trace, double dt);

struct Run {
  double value = 0.0;
  double duration = 0.0;
  bool partial = false;

  friend bool operator==(const Run&, const Run&) = default;
};

// Maximal runs of consecutive equal readings. Each run lasts from its first
// sample to the first sample of the next run; the final run is cut at the
// last sample and flagged partial.
std::vector<Run> run_lengths(const PowerTrace& trace, double epsilon = 0.0);

double mse(const PowerTrace& a, const PowerTrace& b);

// Prefix integral over a trace for repeated window queries. Answers the same
// question as integrate_energy in O(log n) per query.
class EnergyIndex {
 public:
  explicit EnergyIndex(const PowerTrace& trace);

  const PowerTrace& trace() const { return trace_; }

  // Integral over [a, b] clipped to the trace span.
  double integral(double a, double b) const;

  // Mean over the trailing window [t - w, t]. The part of the window before
  // the first sample is filled with the first sample's value.
  double trailing_mean(double t, double w) const;

 private:
  double cumulative_at(double t) const;

  PowerTrace trace_;
  bool hold_;
  std::vector<double> prefix_;
};

}  // namespace smiprobe
