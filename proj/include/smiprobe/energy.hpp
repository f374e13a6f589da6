#pragma once

// Energy measurement good practice: how many repetitions to run, where to put
// phase-shifting delays, how to post-process the sensor trace, and how the
// resulting per-repetition energy compares with a reference meter.

#include <cstdint>
#include <optional>
#include <vector>

#include "smiprobe/model.hpp"
#include "smiprobe/stats.hpp"
#include "smiprobe/trace.hpp"

namespace smiprobe {

struct MeasurementPlan {
  int repetitions = 32;
  double min_runtime = 5.0;
  int shifts = 0;
  double shift_delay = 0.0;
  int trials = 4;
  double inter_trial_min = 0.0;
  double inter_trial_max = 1.0;
  double discard_lead = 0.0;
  // Held readings reach across idle time next to the workload: a reading
  // stands for the following update period, and after the window shift its
  // window extends w past its timestamp. Repetitions starting less than
  // discard_after_delay after a controlled delay, or ending less than
  // discard_tail before idle time, are dropped as well.
  double discard_after_delay = 0.0;
  double discard_tail = 0.0;

  void validate() const;
};

struct ShiftPoint {
  int after_rep = 0;  // number of repetitions completed before the delay
  double delay = 0.0;

  friend bool operator==(const ShiftPoint&, const ShiftPoint&) = default;
};

struct RepetitionLog {
  std::vector<TimeWindow> spans;
  std::vector<int> trial_id;
  std::vector<bool> discarded;

  std::size_t size() const { return spans.size(); }
  int trial_count() const;
  void add(TimeWindow span, int trial);
  void validate() const;
};

struct EnergyReport {
  // All energies are joules per repetition.
  double naive_energy_j = 0.0;
  double corrected_energy_j = 0.0;
  std::vector<double> per_trial_j;
  std::vector<double> per_trial_naive_j;
  std::vector<double> per_rep_j;  // kept repetitions only, in log order
  std::vector<std::size_t> kept;  // log indices behind per_rep_j
  int repetitions = 0;
  int kept_repetitions = 0;

  // Filled by compare_with_reference.
  std::optional<double> reference_energy_j;
  std::optional<double> mean_error_pct;
  std::optional<double> std_error_pct;
  std::optional<double> naive_mean_error_pct;
  std::optional<double> naive_std_error_pct;
  std::vector<double> per_trial_error_pct;
  std::vector<double> per_trial_naive_error_pct;
};

MeasurementPlan plan_measurement(const SensorCharacteristics& chars,
                                 double rep_duration);

std::vector<ShiftPoint> schedule_shifts(int repetitions, int shifts,
                                        double shift_delay);

struct CorrectionOptions {
  bool apply_affine = true;  // undo gain/offset as well as the time lag
};

PowerTrace correct_trace(const PowerTrace& smi, const SensorCharacteristics& chars,
                         CorrectionOptions options = {});

RepetitionLog discard_rise(const RepetitionLog& log, double discard_lead);

// discard_rise plus the delay and tail rules of the plan. Consecutive
// repetitions of a trial with no gap between them form one block.
RepetitionLog discard_boundaries(const RepetitionLog& log, const MeasurementPlan& plan);

EnergyReport measure_energy(const PowerTrace& smi, const RepetitionLog& log,
                            const MeasurementPlan& plan,
                            const SensorCharacteristics& chars,
                            CorrectionOptions options = {});

EnergyReport compare_with_reference(const EnergyReport& report,
                                    const PowerTrace& reference,
                                    const RepetitionLog& log);

}  // namespace smiprobe
