#include "smiprobe/energy.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace smiprobe {

namespace {

// Repetition boundaries come from sums of durations; a rep that starts
// "exactly" at a discard limit must not flip with rounding.
constexpr double kBoundaryTolerance = 1e-9;

}  // namespace

void MeasurementPlan::validate() const {
  if (repetitions < 1) throw Error("invalid plan: repetitions must be >= 1");
  if (shifts < 0 || shifts > repetitions)
    throw Error("invalid plan: shifts must be in [0, repetitions]");
  if (trials < 1) throw Error("invalid plan: trials must be >= 1");
  if (!(shift_delay >= 0.0)) throw Error("invalid plan: shift_delay must be >= 0");
  if (!(inter_trial_min >= 0.0 && inter_trial_max >= inter_trial_min))
    throw Error("invalid plan: inter-trial delay range");
  if (!(discard_lead >= 0.0)) throw Error("invalid plan: discard_lead must be >= 0");
  if (!(discard_after_delay >= 0.0) || !(discard_tail >= 0.0))
    throw Error("invalid plan: discard_after_delay and discard_tail must be >= 0");
}

int RepetitionLog::trial_count() const {
  if (trial_id.empty()) return 0;
  return *std::max_element(trial_id.begin(), trial_id.end()) + 1;
}

void RepetitionLog::add(TimeWindow span, int trial) {
  spans.push_back(span);
  trial_id.push_back(trial);
  discarded.push_back(false);
}

void RepetitionLog::validate() const {
  if (trial_id.size() != spans.size() || discarded.size() != spans.size())
    throw Error("invalid repetition log: field lengths differ");
  for (std::size_t i = 0; i < spans.size(); ++i) {
    if (!(spans[i].end > spans[i].start))
      throw Error("invalid repetition log: empty span " + std::to_string(i));
    if (trial_id[i] < 0) throw Error("invalid repetition log: negative trial id");
    if (i > 0 && trial_id[i] == trial_id[i - 1] && spans[i].start < spans[i - 1].end)
      throw Error("invalid repetition log: overlapping spans at " + std::to_string(i));
  }
}

MeasurementPlan plan_measurement(const SensorCharacteristics& chars,
                                 double rep_duration) {
  chars.validate();
  if (!(rep_duration > 0.0)) throw Error("invalid plan: rep_duration must be > 0");
  MeasurementPlan plan;
  // Small tolerance so 5 s / 0.1 s lands on 50, not 51.
  const double needed = std::ceil(plan.min_runtime / rep_duration - 1e-9);
  plan.repetitions = static_cast<int>(std::max(32.0, needed));
  const double window = chars.effective_window();
  if (window < chars.update_period) {
    plan.shifts = 8;
    plan.shift_delay = window;
  }
  plan.trials = 4;
  plan.inter_trial_min = 0.0;
  plan.inter_trial_max = 1.0;
  plan.discard_lead = chars.rise_time + std::max(window, chars.update_period);
  plan.discard_after_delay = plan.shifts > 0 ? chars.update_period : 0.0;
  plan.discard_tail = window;
  return plan;
}

std::vector<ShiftPoint> schedule_shifts(int repetitions, int shifts,
                                        double shift_delay) {
  if (repetitions < 1) throw Error("invalid schedule: repetitions must be >= 1");
  if (shifts < 0 || shifts > repetitions)
    throw Error("invalid schedule: shifts must be in [0, repetitions]");
  std::vector<ShiftPoint> out;
  if (shifts == 0) return out;
  const int every = repetitions / shifts;
  for (int k = 1; k <= shifts; ++k) {
    const int after = k * every;
    if (after >= repetitions) break;
    out.push_back({after, shift_delay});
  }
  return out;
}

PowerTrace correct_trace(const PowerTrace& smi, const SensorCharacteristics& chars,
                         CorrectionOptions options) {
  if (!(chars.gain > 0.0)) throw Error("invalid correction: gain must be > 0");
  PowerTrace shifted = shift_earlier(smi, chars.effective_window());
  if (!options.apply_affine || (chars.gain == 1.0 && chars.offset == 0.0))
    return shifted;
  std::vector<PowerSample> out(shifted.samples().begin(), shifted.samples().end());
  for (auto& s : out) s.p = std::max(0.0, (s.p - chars.offset) / chars.gain);
  return PowerTrace(smi.source(), std::move(out), smi.nominal_period());
}

RepetitionLog discard_rise(const RepetitionLog& log, double discard_lead) {
  log.validate();
  RepetitionLog out = log;
  std::map<int, double> trial_start;
  for (std::size_t i = 0; i < log.size(); ++i) {
    auto [it, inserted] = trial_start.emplace(log.trial_id[i], log.spans[i].start);
    if (!inserted) it->second = std::min(it->second, log.spans[i].start);
  }
  std::map<int, int> kept;
  for (const auto& [trial, start] : trial_start) kept[trial] = 0;
  for (std::size_t i = 0; i < log.size(); ++i) {
    const double limit = trial_start[log.trial_id[i]] + discard_lead;
    if (log.spans[i].start < limit - kBoundaryTolerance) out.discarded[i] = true;
    if (!out.discarded[i]) ++kept[log.trial_id[i]];
  }
  for (const auto& [trial, count] : kept)
    if (count == 0)
      throw Error("trial too short: every repetition of trial " + std::to_string(trial) +
                  " falls inside the discard lead");
  return out;
}

RepetitionLog discard_boundaries(const RepetitionLog& log, const MeasurementPlan& plan) {
  RepetitionLog out = discard_rise(log, plan.discard_lead);
  if (plan.discard_after_delay <= 0.0 && plan.discard_tail <= 0.0) return out;
  std::size_t begin = 0;
  while (begin < log.size()) {
    std::size_t end = begin + 1;
    while (end < log.size() && log.trial_id[end] == log.trial_id[begin] &&
           log.spans[end].start - log.spans[end - 1].end <= kBoundaryTolerance)
      ++end;
    const bool first_block =
        begin == 0 || log.trial_id[begin - 1] != log.trial_id[begin];
    const double block_start = log.spans[begin].start;
    const double block_end = log.spans[end - 1].end;
    for (std::size_t i = begin; i < end; ++i) {
      if (!first_block &&
          log.spans[i].start < block_start + plan.discard_after_delay - kBoundaryTolerance)
        out.discarded[i] = true;
      if (log.spans[i].end > block_end - plan.discard_tail + kBoundaryTolerance)
        out.discarded[i] = true;
    }
    begin = end;
  }
  std::map<int, int> kept;
  for (std::size_t i = 0; i < out.size(); ++i) {
    kept.try_emplace(out.trial_id[i], 0);
    if (!out.discarded[i]) ++kept[out.trial_id[i]];
  }
  for (const auto& [trial, count] : kept)
    if (count == 0)
      throw Error("trial too short: every repetition of trial " + std::to_string(trial) +
                  " is discarded");
  return out;
}

EnergyReport measure_energy(const PowerTrace& smi, const RepetitionLog& log,
                            const MeasurementPlan& plan,
                            const SensorCharacteristics& chars,
                            CorrectionOptions options) {
  plan.validate();
  if (log.size() == 0) throw Error("insufficient samples: empty repetition log");
  const PowerTrace corrected = correct_trace(smi, chars, options);
  const RepetitionLog filtered = discard_boundaries(log, plan);
  const EnergyIndex index(corrected);
  const EnergyIndex raw(smi);

  const int trials = filtered.trial_count();
  EnergyReport report;
  report.repetitions = static_cast<int>(log.size());
  std::vector<std::vector<double>> by_trial(static_cast<std::size_t>(trials));
  std::vector<std::optional<double>> first_rep(static_cast<std::size_t>(trials));

  for (std::size_t i = 0; i < filtered.size(); ++i) {
    const auto& span = filtered.spans[i];
    const auto trial = static_cast<std::size_t>(filtered.trial_id[i]);
    if (!first_rep[trial]) {
      if (span.start < smi.front().t || span.end > smi.back().t)
        throw Error("insufficient samples: sensor trace does not cover repetition " +
                    std::to_string(i));
      first_rep[trial] = raw.integral(span.start, span.end);
    }
    if (filtered.discarded[i]) continue;
    if (span.start < corrected.front().t || span.end > corrected.back().t)
      throw Error("insufficient samples: corrected trace does not cover repetition " +
                  std::to_string(i));
    const double e = index.integral(span.start, span.end);
    report.per_rep_j.push_back(e);
    report.kept.push_back(i);
    by_trial[trial].push_back(e);
  }
  for (std::size_t t = 0; t < by_trial.size(); ++t) {
    if (by_trial[t].empty()) continue;  // trial ids need not be dense
    report.per_trial_j.push_back(mean_of(by_trial[t]));
    report.per_trial_naive_j.push_back(first_rep[t].value_or(0.0));
  }
  report.kept_repetitions = static_cast<int>(report.per_rep_j.size());
  report.corrected_energy_j = mean_of(report.per_trial_j);
  report.naive_energy_j = report.per_trial_naive_j.front();
  return report;
}

EnergyReport compare_with_reference(const EnergyReport& report,
                                    const PowerTrace& reference,
                                    const RepetitionLog& log) {
  log.validate();
  if (reference.size() < 2) throw Error("coverage gap: reference trace too short");
  const EnergyIndex index(reference);
  const TimeWindow span = reference.span();
  const int trials = log.trial_count();

  auto covered = [&](const TimeWindow& w) {
    return w.start >= span.start && w.end <= span.end;
  };

  std::vector<std::vector<double>> kept_ref(static_cast<std::size_t>(trials));
  for (std::size_t i : report.kept) {
    if (i >= log.size()) throw Error("coverage gap: report does not match log");
    const auto& w = log.spans[i];
    if (!covered(w))
      throw Error("coverage gap: reference misses repetition " + std::to_string(i));
    kept_ref[static_cast<std::size_t>(log.trial_id[i])].push_back(
        index.integral(w.start, w.end));
  }

  EnergyReport out = report;
  out.per_trial_error_pct.clear();
  out.per_trial_naive_error_pct.clear();
  std::vector<double> ref_trials;
  std::size_t slot = 0;
  for (std::size_t t = 0; t < kept_ref.size(); ++t) {
    if (kept_ref[t].empty()) continue;
    if (slot >= report.per_trial_j.size())
      throw Error("coverage gap: report does not match log");
    const double ref = mean_of(kept_ref[t]);
    if (!(ref > 0.0)) throw Error("coverage gap: reference energy is zero");
    ref_trials.push_back(ref);
    out.per_trial_error_pct.push_back(100.0 * (report.per_trial_j[slot] - ref) / ref);
    out.per_trial_naive_error_pct.push_back(
        100.0 * (report.per_trial_naive_j[slot] - ref) / ref);
    ++slot;
  }
  out.reference_energy_j = mean_of(ref_trials);
  out.mean_error_pct = mean_of(out.per_trial_error_pct);
  out.std_error_pct = stddev_of(out.per_trial_error_pct);
  out.naive_mean_error_pct = mean_of(out.per_trial_naive_error_pct);
  out.naive_std_error_pct = stddev_of(out.per_trial_naive_error_pct);
  return out;
}

}  // namespace smiprobe
