#pragma once

// Recovering a sensor's hidden sampling behaviour from observed traces:
// update period, step response, averaging window and steady-state error.

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "smiprobe/model.hpp"
#include "smiprobe/optimize.hpp"
#include "smiprobe/regression.hpp"
#include "smiprobe/stats.hpp"
#include "smiprobe/trace.hpp"

namespace smiprobe {

struct UpdatePeriodEstimate {
  double median_period = 0.0;
  std::map<int, int> histogram;  // run duration in whole ms -> count
  std::size_t runs = 0;
};

// Median duration of the complete runs of repeated readings in a polled
// sensor trace. The first and last runs are truncated by the capture and are
// left out.
UpdatePeriodEstimate estimate_update_period(const PowerTrace& trace,
                                            std::size_t min_runs = 20,
                                            double epsilon = 0.0);

// 10%-90% rise time between `baseline` and `plateau`, crossings located with
// the trace's interpolation rule. Works for falling edges too.
double measure_rise_time(const PowerTrace& trace, double baseline, double plateau);

struct TransientOptions {
  double update_period = 0.0;  // 0: take the trace's nominal period
  double pre_window = 0.3;     // baseline is averaged over [step - pre, step)
  double horizon = 2.0;        // fit segment is [step, step + horizon]
  double ambiguity = 0.05;     // relative residual gap below which a fit is ambiguous
  double slow_source_rise = 0.1;
  double slow_source_margin = 2.0;  // in update periods
  const PowerTrace* reference = nullptr;  // dense trace of the same step, optional
};

struct TransientFit {
  TransientClass cls = TransientClass::Instant;
  bool ambiguous = false;
  double rise_time = 0.0;
  std::optional<double> reference_rise_time;
  double baseline = 0.0;
  double plateau = 0.0;
  double instant_residual = 0.0;
  double ramp_residual = 0.0;
  double exp_residual = 0.0;
  double ramp_duration = 0.0;
  double exp_tau = 0.0;
};

// A rise finishing within one update period is INSTANT (or SLOW_SOURCE when
// the reference shows the source itself rising slowly and the sensor keeps
// up). Otherwise the lower residual of a linear-ramp and a saturating
// exponential fit picks LINEAR_RUNNING_AVG or LOG_GROWTH.
TransientFit classify_transient(const PowerTrace& smi, double step_time,
                                const TransientOptions& options = {});

// Emulated sensor: trailing mean of `reference` over [t - w, t] at each t.
PowerTrace emulate_boxcar(const PowerTrace& reference, std::span<const double> times,
                          double w);

// Loss of a candidate window: MSE between the normalised sensor trace and the
// normalised emulation, both restricted to t > capture start + discard.
// Built once per capture so the optimiser can evaluate it cheaply.
class WindowLoss {
 public:
  WindowLoss(const PowerTrace& smi, const PowerTrace& reference, double discard = 1.0);

  double operator()(double w) const;
  // Largest window the reference can support at every kept timestamp.
  double max_window() const { return max_window_; }
  std::span<const double> times() const { return times_; }

 private:
  EnergyIndex reference_;
  std::vector<double> times_;
  PowerTrace observed_;  // normalised
  double max_window_ = 0.0;
};

double window_loss(double w, const PowerTrace& smi, const PowerTrace& reference,
                   double discard = 1.0);

struct WindowEstimate {
  double window = 0.0;
  double loss_at_min = 0.0;
  std::vector<double> samples;
  double stddev = 0.0;
  bool converged = true;
  int not_converged = 0;
};

struct WindowSearchOptions {
  double discard = 1.0;
  double min_window = 0.001;
  double max_window = 2.0;
  // Period of the load in the capture. When set, windows one or more load
  // periods away from the first optimum are also tried.
  double load_period = 0.0;
  int alias_orders = 2;
  NelderMeadOptions optimizer;
};

// Nelder-Mead over the window loss starting from half the update period,
// followed by the alias check when the load period is known.
WindowEstimate estimate_window(const PowerTrace& smi, const PowerTrace& reference,
                               double update_period,
                               const WindowSearchOptions& options = {});

struct LossPoint {
  double window = 0.0;
  double loss = 0.0;
};

std::vector<LossPoint> loss_curve(const PowerTrace& smi, const PowerTrace& reference,
                                  double from, double to, double step,
                                  double discard = 1.0);

struct Capture {
  PowerTrace smi;
  PowerTrace reference;
};

// Produces one independent capture with the load period set to the given
// value. `fraction_index` and `repeat` identify the run so a source can seed it.
using CaptureSource =
    std::function<Capture(double load_period, int fraction_index, int repeat)>;

struct ProtocolOptions {
  std::vector<double> fractions = {2.0 / 3.0, 3.0 / 4.0, 4.0 / 5.0,
                                   6.0 / 5.0, 5.0 / 4.0, 4.0 / 3.0};
  int repeats = 32;
  double max_unconverged = 0.25;
  bool resolve_aliases = true;  // pass each capture's load period to the search
  WindowSearchOptions search;
};

struct ProtocolRun {
  double fraction = 0.0;
  int repeat = 0;
  double window = 0.0;
  double loss = 0.0;
  bool converged = false;
};

struct ProtocolEstimate {
  WindowEstimate estimate;  // window is the median over runs
  std::vector<ProtocolRun> runs;
};

ProtocolEstimate estimate_window_protocol(const CaptureSource& source,
                                          double update_period,
                                          const ProtocolOptions& options = {});

}  // namespace smiprobe
