#include "smiprobe/characterize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace smiprobe {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Time at which the trace first reaches `threshold` moving in `direction`.
std::optional<double> first_crossing(const PowerTrace& trace, double threshold,
                                     double direction) {
  const auto s = trace.samples();
  const bool hold = uses_hold(trace.source());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (direction * (s[i].p - threshold) < 0.0) continue;
    if (hold || i == 0) return s[i].t;
    const double a = s[i - 1].p, b = s[i].p;
    if (a == b) return s[i].t;
    return s[i - 1].t + (threshold - a) / (b - a) * (s[i].t - s[i - 1].t);
  }
  return std::nullopt;
}

double sum_squares(std::span<const double> tau, std::span<const double> y,
                   const std::function<double(double)>& model) {
  double ss = 0.0;
  for (std::size_t i = 0; i < tau.size(); ++i) {
    const double r = y[i] - model(tau[i]);
    ss += r * r;
  }
  return ss;
}

}  // namespace

UpdatePeriodEstimate estimate_update_period(const PowerTrace& trace,
                                            std::size_t min_runs, double epsilon) {
  const auto runs = run_lengths(trace, epsilon);
  std::vector<double> durations;
  // runs.front() starts at the capture, not at an update; runs.back() is partial.
  for (std::size_t i = 1; i + 1 < runs.size(); ++i) durations.push_back(runs[i].duration);
  if (durations.size() < min_runs)
    throw Error("insufficient variation: " + std::to_string(durations.size()) +
                " complete runs, need " + std::to_string(min_runs));
  UpdatePeriodEstimate est;
  est.median_period = median_of(durations);
  est.runs = durations.size();
  for (double d : durations) ++est.histogram[static_cast<int>(std::lround(d * 1000.0))];
  return est;
}

double measure_rise_time(const PowerTrace& trace, double baseline, double plateau) {
  const double delta = plateau - baseline;
  if (delta == 0.0 || !std::isfinite(delta))
    throw Error("no step detected: baseline equals plateau");
  const double direction = delta > 0.0 ? 1.0 : -1.0;
  const auto t10 = first_crossing(trace, baseline + 0.1 * delta, direction);
  if (!t10) throw Error("no step detected: 10% threshold never crossed");
  const auto t90 =
      first_crossing(trace.slice(*t10, trace.back().t), baseline + 0.9 * delta, direction);
  if (!t90) throw Error("no step detected: 90% threshold never crossed");
  return *t90 - *t10;
}

TransientFit classify_transient(const PowerTrace& smi, double step_time,
                                const TransientOptions& options) {
  if (smi.size() < 3) throw Error("no step detected: trace too short");
  double update = options.update_period > 0.0 ? options.update_period : smi.nominal_period();
  if (!(update > 0.0)) {
    std::vector<double> gaps;
    for (std::size_t i = 1; i < smi.size(); ++i) gaps.push_back(smi[i].t - smi[i - 1].t);
    update = median_of(gaps);
  }
  const double end = std::min(smi.back().t, step_time + options.horizon);
  if (!(end > step_time)) throw Error("no step detected: step after end of trace");

  TransientFit fit;
  {
    const PowerTrace before = smi.slice(step_time - options.pre_window, step_time);
    std::vector<double> v;
    for (const auto& s : before.samples())
      if (s.t < step_time) v.push_back(s.p);
    fit.baseline = v.empty() ? smi.front().p : mean_of(v);
  }
  const PowerTrace segment = smi.slice(step_time, end);
  if (segment.size() < 3) throw Error("no step detected: too few samples after step");
  {
    const double tail_from = step_time + 0.75 * (end - step_time);
    std::vector<double> v;
    for (const auto& s : segment.samples())
      if (s.t >= tail_from) v.push_back(s.p);
    if (v.empty()) v.push_back(segment.back().p);
    fit.plateau = mean_of(v);
  }
  fit.rise_time = measure_rise_time(smi.slice(step_time - options.pre_window, end),
                                    fit.baseline, fit.plateau);

  std::vector<double> tau, y;
  const double delta = fit.plateau - fit.baseline;
  for (const auto& s : segment.samples()) {
    tau.push_back(s.t - step_time);
    y.push_back((s.p - fit.baseline) / delta);
  }

  // Instant: a single jump at the best sample boundary.
  fit.instant_residual = kInf;
  for (std::size_t k = 0; k <= tau.size(); ++k) {
    const double jump = k < tau.size() ? tau[k] : kInf;
    fit.instant_residual = std::min(
        fit.instant_residual,
        sum_squares(tau, y, [jump](double t) { return t >= jump ? 1.0 : 0.0; }));
  }

  NelderMeadOptions nm;
  nm.tolerance = 1e-5;
  nm.max_iterations = 400;
  const double rise = std::max(fit.rise_time, update);

  auto ramp = [](double t, double start, double length) {
    return std::clamp((t - start) / length, 0.0, 1.0);
  };
  auto saturating = [](double t, double start, double k) {
    return t <= start ? 0.0 : 1.0 - std::exp(-(t - start) / k);
  };

  nm.initial_step = {0.5 * update, 0.25 * rise};
  const auto ramp_fit = nelder_mead(
      [&](const std::vector<double>& p) {
        const double length = std::abs(p[1]) + 1e-6;
        return sum_squares(tau, y, [&](double t) { return ramp(t, p[0], length); });
      },
      {0.0, rise / 0.8}, nm);
  fit.ramp_residual = ramp_fit.value;
  fit.ramp_duration = std::abs(ramp_fit.x[1]) + 1e-6;

  const auto exp_fit = nelder_mead(
      [&](const std::vector<double>& p) {
        const double k = std::abs(p[1]) + 1e-6;
        return sum_squares(tau, y, [&](double t) { return saturating(t, p[0], k); });
      },
      {0.0, rise / std::log(9.0)}, nm);
  fit.exp_residual = exp_fit.value;
  fit.exp_tau = std::abs(exp_fit.x[1]) + 1e-6;

  if (options.reference != nullptr) {
    const PowerTrace& ref = *options.reference;
    const PowerTrace before = ref.slice(step_time - options.pre_window, step_time);
    const PowerTrace after = ref.slice(step_time + 0.75 * (end - step_time), end);
    if (!before.empty() && !after.empty()) {
      const double ref_base = mean_of(before.values());
      const double ref_plateau = mean_of(after.values());
      fit.reference_rise_time = measure_rise_time(
          ref.slice(step_time - options.pre_window, end), ref_base, ref_plateau);
    }
  }

  const double limit = update * (1.0 + 1e-9);
  if (fit.reference_rise_time && *fit.reference_rise_time >= options.slow_source_rise &&
      fit.rise_time <= *fit.reference_rise_time + options.slow_source_margin * update) {
    fit.cls = TransientClass::SlowSource;
  } else if (fit.rise_time <= limit) {
    fit.cls = TransientClass::Instant;
  } else {
    fit.cls = fit.ramp_residual <= fit.exp_residual ? TransientClass::LinearRunningAvg
                                                    : TransientClass::LogGrowth;
    const double hi = std::max(fit.ramp_residual, fit.exp_residual);
    const double lo = std::min(fit.ramp_residual, fit.exp_residual);
    fit.ambiguous = hi > 0.0 && (hi - lo) <= options.ambiguity * hi;
  }
  return fit;
}

PowerTrace emulate_boxcar(const PowerTrace& reference, std::span<const double> times,
                          double w) {
  if (reference.size() < 2) throw Error("insufficient reference span: too few samples");
  if (!(w >= 0.0)) throw Error("invalid window: must be >= 0");
  const TimeWindow span = reference.span();
  const EnergyIndex index(reference);
  std::vector<PowerSample> out;
  out.reserve(times.size());
  for (double t : times) {
    if (t - w < span.start - 1e-12 || t > span.end)
      throw Error("insufficient reference span for window at t=" + std::to_string(t));
    out.push_back({t, index.trailing_mean(t, w)});
  }
  return PowerTrace(Source::Emulated, std::move(out));
}

WindowLoss::WindowLoss(const PowerTrace& smi, const PowerTrace& reference, double discard)
    : reference_(reference) {
  if (smi.empty() || reference.size() < 2)
    throw Error("insufficient samples: empty capture");
  const double capture_start = std::min(smi.front().t, reference.front().t);
  const TimeWindow ref_span = reference.span();
  std::vector<PowerSample> kept;
  for (const auto& s : smi.samples())
    if (s.t > capture_start + discard && s.t <= ref_span.end) kept.push_back(s);
  if (kept.size() < 3)
    throw Error("insufficient samples: fewer than 3 sensor readings after discard");
  observed_ = normalize(PowerTrace(Source::Emulated, std::move(kept)));
  times_ = observed_.times();
  max_window_ = times_.front() - ref_span.start;
}

double WindowLoss::operator()(double w) const {
  if (!(w > 0.0)) throw Error("invalid window: must be > 0");
  if (w > max_window_ + 1e-12)
    throw Error("insufficient reference span for window " + std::to_string(w));
  double lo = kInf, hi = -kInf;
  std::vector<double> emulated(times_.size());
  for (std::size_t i = 0; i < times_.size(); ++i) {
    emulated[i] = reference_.trailing_mean(times_[i], w);
    lo = std::min(lo, emulated[i]);
    hi = std::max(hi, emulated[i]);
  }
  if (!(hi > lo)) throw Error("degenerate normalization: emulated trace is constant");
  double sum = 0.0;
  for (std::size_t i = 0; i < times_.size(); ++i) {
    const double d = observed_[i].p - (emulated[i] - lo) / (hi - lo);
    sum += d * d;
  }
  return sum / static_cast<double>(times_.size());
}

double window_loss(double w, const PowerTrace& smi, const PowerTrace& reference,
                   double discard) {
  return WindowLoss(smi, reference, discard)(w);
}

WindowEstimate estimate_window(const PowerTrace& smi, const PowerTrace& reference,
                               double update_period, const WindowSearchOptions& options) {
  if (!(update_period > 0.0)) throw Error("invalid update period: must be > 0");
  if (!(options.load_period >= 0.0) || options.alias_orders < 0)
    throw Error("invalid window search: negative load period or alias orders");
  const WindowLoss loss(smi, reference, options.discard);
  const double lo = options.min_window;
  const double hi = std::min(options.max_window, loss.max_window());
  if (!(hi > lo)) throw Error("insufficient reference span for window search");
  auto clamp = [&](double w) { return std::clamp(w, lo, hi); };
  auto objective = [&](double w) {
    try {
      return loss(clamp(w));
    } catch (const Error&) {
      return kInf;
    }
  };
  auto search = [&](double x0) {
    return nelder_mead([&](const std::vector<double>& x) { return objective(x[0]); },
                       {clamp(x0)}, options.optimizer);
  };

  auto result = search(update_period / 2.0);
  double best = clamp(result.x[0]);

  // Under a periodic load of period P the emulations for w and w + kP are
  // affine images of each other, as are w and kP - w for a 50% duty cycle,
  // so the loss has near-equal minima there. Only the load's irregularity
  // separates them. The realised period differs slightly from the nominal
  // one, so each alias is refined by its own search rather than compared at
  // the raw candidate point.
  if (options.load_period > 0.0) {
    const double p = options.load_period;
    std::vector<double> candidates;
    for (int k = 1; k <= options.alias_orders; ++k) {
      candidates.push_back(best + k * p);
      candidates.push_back(best - k * p);
      candidates.push_back(k * p - best);
    }
    for (double c : candidates) {
      // A true window at the edge of the searchable range still needs a look.
      if (c < lo - p / 2 || c > hi + p / 2) continue;
      c = clamp(c);
      auto retry = search(c);
      if (retry.value < result.value) {
        result = retry;
        best = clamp(retry.x[0]);
      }
    }
  }

  WindowEstimate est;
  est.window = best;
  est.loss_at_min = result.value;
  est.samples = {est.window};
  est.converged = result.converged;
  est.not_converged = result.converged ? 0 : 1;
  return est;
}

std::vector<LossPoint> loss_curve(const PowerTrace& smi, const PowerTrace& reference,
                                  double from, double to, double step, double discard) {
  if (!(step > 0.0) || !(to >= from)) throw Error("invalid loss curve range");
  const WindowLoss loss(smi, reference, discard);
  std::vector<LossPoint> out;
  const auto n = static_cast<std::size_t>(std::floor((to - from) / step + 1e-9));
  for (std::size_t i = 0; i <= n; ++i) {
    const double w = from + step * static_cast<double>(i);
    if (!(w > 0.0) || w > loss.max_window()) continue;
    double v = kInf;
    try {
      v = loss(w);
    } catch (const Error&) {
    }
    out.push_back({w, v});
  }
  return out;
}

ProtocolEstimate estimate_window_protocol(const CaptureSource& source,
                                          double update_period,
                                          const ProtocolOptions& options) {
  if (options.fractions.empty() || options.repeats < 1)
    throw Error("invalid protocol: need at least one fraction and one repeat");
  ProtocolEstimate out;
  int failed = 0;
  for (std::size_t f = 0; f < options.fractions.size(); ++f) {
    const double fraction = options.fractions[f];
    for (int r = 0; r < options.repeats; ++r) {
      const Capture capture = source(fraction * update_period, static_cast<int>(f), r);
      ProtocolRun run{fraction, r, 0.0, kInf, false};
      try {
        WindowSearchOptions search = options.search;
        if (options.resolve_aliases) search.load_period = fraction * update_period;
        const auto est =
            estimate_window(capture.smi, capture.reference, update_period, search);
        run.window = est.window;
        run.loss = est.loss_at_min;
        run.converged = est.converged;
      } catch (const Error&) {
        run.converged = false;
      }
      if (!run.converged) ++failed;
      out.runs.push_back(run);
    }
  }
  const double total = static_cast<double>(out.runs.size());
  if (failed > options.max_unconverged * total)
    throw Error("unstable estimation: " + std::to_string(failed) + " of " +
                std::to_string(out.runs.size()) + " runs did not converge");
  for (const auto& run : out.runs)
    if (run.window > 0.0) out.estimate.samples.push_back(run.window);
  out.estimate.window = median_of(out.estimate.samples);
  out.estimate.stddev = stddev_of(out.estimate.samples);
  out.estimate.not_converged = failed;
  out.estimate.converged = failed == 0;
  std::vector<double> losses;
  for (const auto& run : out.runs)
    if (std::isfinite(run.loss)) losses.push_back(run.loss);
  if (!losses.empty()) out.estimate.loss_at_min = median_of(losses);
  return out;
}

}  // namespace smiprobe
