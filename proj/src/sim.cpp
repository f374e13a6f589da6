#include "smiprobe/sim.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace smiprobe {

namespace {

SensorCharacteristics make_chars(double update_period, double window,
                                 double rise_time,
                                 TransientClass cls = TransientClass::Instant) {
  SensorCharacteristics c;
  c.update_period = update_period;
  c.window = window;
  c.rise_time = rise_time;
  c.transient_class = cls;
  return c;
}

const Preset kPresets[] = {
    {"v100", make_chars(0.020, 0.010, 0.0), "Volta: 10 ms window every 20 ms"},
    {"a100", make_chars(0.100, 0.025, 0.100), "A100: 25 ms window every 100 ms"},
    {"h100", make_chars(0.100, 0.025, 0.100), "H100 instant: 25 ms window every 100 ms"},
    {"rtx3090-instant", make_chars(0.100, 0.100, 0.250),
     "RTX 3090 power.draw.instant: 100 ms window every 100 ms"},
    {"rtx3090-average", make_chars(0.100, 1.0, 0.250, TransientClass::LinearRunningAvg),
     "RTX 3090 power.draw.average: 1 s running average every 100 ms"},
    {"gtx1080ti", make_chars(0.020, 0.010, 0.0), "Pascal: 10 ms window every 20 ms"},
    {"gh200-gpu", make_chars(0.100, 0.020, 0.0), "GH200 GPU domain: 20 ms every 100 ms"},
    {"gh200-cpu", make_chars(0.100, 0.010, 0.0), "GH200 CPU domain: 10 ms every 100 ms"},
};

struct Edge {
  double t;
  double level;  // level in force from t onwards
};

// Level changes of a segment schedule, idle (0) outside every segment.
std::vector<Edge> schedule_edges(std::span<const LoadSegment> segments) {
  std::vector<LoadSegment> sorted;
  for (const auto& s : segments)
    if (s.end > s.start) sorted.push_back(s);
  std::sort(sorted.begin(), sorted.end(),
            [](const LoadSegment& a, const LoadSegment& b) { return a.start < b.start; });

  std::vector<Edge> raw;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    if (i > 0 && sorted[i - 1].end < sorted[i].start) raw.push_back({sorted[i - 1].end, 0.0});
    raw.push_back({sorted[i].start, sorted[i].level});
  }
  if (!sorted.empty()) raw.push_back({sorted.back().end, 0.0});

  std::vector<Edge> edges;
  double current = 0.0;
  for (const auto& e : raw) {
    if (!edges.empty() && edges.back().t == e.t) {
      edges.pop_back();
      current = edges.empty() ? 0.0 : edges.back().level;
    }
    if (e.level != current) {
      edges.push_back(e);
      current = e.level;
    }
  }
  return edges;
}

double quantize(double v, double step) {
  if (step <= 0.0) return v;
  return std::round(v / step) * step;
}

// First-order lag with time constant tau, exact for a piecewise-linear input.
PowerTrace lag_filter(const PowerTrace& in, double tau) {
  const auto s = in.samples();
  std::vector<PowerSample> out;
  out.reserve(s.size());
  double y = s.front().p;
  out.push_back({s.front().t, y});
  for (std::size_t i = 1; i < s.size(); ++i) {
    const double dt = s[i].t - s[i - 1].t;
    const double slope = (s[i].p - s[i - 1].p) / dt;
    const double decay = std::exp(-dt / tau);
    y = s[i].p - slope * tau + (y - s[i - 1].p + slope * tau) * decay;
    out.push_back({s[i].t, std::max(0.0, y)});
  }
  return PowerTrace(in.source(), std::move(out), in.nominal_period());
}

}  // namespace

void GroundTruthModel::validate() const {
  load.validate();
  if (!(idle_power >= 0.0)) throw Error("invalid model: idle_power must be >= 0");
  if (!(transition_tau >= 0.0)) throw Error("invalid model: transition_tau must be >= 0");
  if (!(noise_std >= 0.0)) throw Error("invalid model: noise_std must be >= 0");
}

void SensorConfig::validate() const {
  chars.validate();
  if (!(quant_step >= 0.0)) throw Error("invalid sensor: quant_step must be >= 0");
  if (!(update_jitter_std >= 0.0) || !(chars.update_period + update_jitter > 0.0))
    throw Error("invalid sensor: jitter leaves no positive update interval");
  if (!(latency >= 0.0)) throw Error("invalid sensor: latency must be >= 0");
}

void PmdConfig::validate() const {
  if (!(sample_rate > 0.0)) throw Error("invalid pmd: sample_rate must be > 0");
  if (!(volt_quantum > 0.0) || !(amp_quantum > 0.0))
    throw Error("invalid pmd: quanta must be > 0");
  if (!(bus_voltage > 0.0)) throw Error("invalid pmd: bus_voltage must be > 0");
  if (!(noise_std >= 0.0)) throw Error("invalid pmd: noise_std must be >= 0");
}

std::vector<LoadSegment> square_wave_segments(const LoadProfile& load) {
  load.validate();
  std::vector<LoadSegment> out;
  out.reserve(static_cast<std::size_t>(load.cycles) * 2);
  for (int c = 0; c < load.cycles; ++c) {
    const double begin = load.t_start + c * load.period;
    const double flip = begin + load.duty * load.period;
    const double end = load.t_start + (c + 1) * load.period;
    out.push_back({begin, flip, load.p_high});
    if (end > flip) out.push_back({flip, end, load.p_low});
  }
  return out;
}

PowerTrace gen_ground_truth(const GroundTruthModel& model, double duration,
                            double rate) {
  model.validate();
  const auto segments = square_wave_segments(model.load);
  return gen_ground_truth(segments, model, duration, rate);
}

PowerTrace gen_ground_truth(std::span<const LoadSegment> segments,
                            const GroundTruthModel& model, double duration,
                            double rate) {
  if (!(duration > 0.0) || !(rate > 0.0))
    throw Error("invalid ground truth request: duration and rate must be > 0");
  if (!(model.idle_power >= 0.0) || !(model.transition_tau >= 0.0) ||
      !(model.noise_std >= 0.0))
    throw Error("invalid model: negative idle power, tau or noise");

  const auto edges = schedule_edges(segments);
  const auto count = static_cast<std::size_t>(std::floor(duration * rate + 1e-9)) + 1;
  const double tau = model.transition_tau;

  std::mt19937_64 rng(model.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  std::vector<PowerSample> out;
  out.reserve(count);

  std::size_t next = 0;
  double target = 0.0;
  while (next < edges.size() && edges[next].t <= 0.0) target = edges[next++].level;
  double y = target;  // settled at the start
  double t_cur = 0.0;

  auto advance = [&](double to) {
    if (tau > 0.0) {
      y = target + (y - target) * std::exp(-(to - t_cur) / tau);
    } else {
      y = target;
    }
    t_cur = to;
  };

  for (std::size_t i = 0; i < count; ++i) {
    const double t = static_cast<double>(i) / rate;
    while (next < edges.size() && edges[next].t <= t) {
      advance(edges[next].t);
      target = edges[next++].level;
      if (tau == 0.0) y = target;
    }
    advance(t);
    double p = model.idle_power + y;
    if (model.noise_std > 0.0) p += model.noise_std * noise(rng);
    out.push_back({t, std::max(0.0, p)});
  }
  return PowerTrace(Source::GroundTruth, std::move(out), 1.0 / rate);
}

PowerTrace sample_sensor(const PowerTrace& truth, const SensorConfig& cfg) {
  cfg.validate();
  if (truth.size() < 2) throw Error("insufficient samples: truth trace too short");
  const auto& chars = cfg.chars;
  const double w = chars.effective_window();
  const TimeWindow span = truth.span();
  if (w > span.duration()) throw Error("window longer than truth span");
  if (chars.update_period > span.duration())
    throw Error("truth shorter than one update period");

  const PowerTrace signal = chars.transient_class == TransientClass::LogGrowth
                                ? lag_filter(truth, chars.log_tau)
                                : truth;
  const EnergyIndex index(signal.with_source(Source::GroundTruth));

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> spread(0.0, 1.0);

  std::vector<PowerSample> out;
  double t = span.start + chars.phase;
  while (t <= span.end) {
    const double window_end = std::max(span.start, t - cfg.latency);
    const double m = index.trailing_mean(window_end, w);
    const double reading = std::max(0.0, chars.gain * m + chars.offset);
    out.push_back({t, quantize(reading, cfg.quant_step)});
    double step = chars.update_period + cfg.update_jitter;
    if (cfg.update_jitter_std > 0.0) step += cfg.update_jitter_std * spread(rng);
    t += std::max(step, 1e-6);
  }
  const Source source = chars.transient_class == TransientClass::LinearRunningAvg
                            ? Source::SmiAverage
                            : Source::SmiInstant;
  return PowerTrace(source, std::move(out), chars.update_period);
}

PowerTrace poll_sensor(const PowerTrace& updates, const QueryConfig& cfg) {
  if (!(cfg.interval > 0.0) || !(cfg.jitter >= 0.0))
    throw Error("invalid query config: interval must be > 0, jitter >= 0");
  if (updates.empty()) throw Error("insufficient samples: no sensor updates");
  const PowerTrace held = updates.with_source(Source::SmiInstant);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> jitter(-cfg.jitter, cfg.jitter);
  std::vector<PowerSample> out;
  const TimeWindow span = updates.span();
  double t = span.start;
  while (t <= span.end) {
    out.push_back({t, value_at(held, t)});
    double step = cfg.interval;
    if (cfg.jitter > 0.0) step += jitter(rng);
    t += std::max(step, 1e-4);
  }
  return PowerTrace(updates.source(), std::move(out), cfg.interval);
}

PmdSampling sample_pmd(const PowerTrace& truth, const PmdConfig& cfg) {
  cfg.validate();
  if (truth.size() < 2) throw Error("insufficient samples: truth trace too short");
  const TimeWindow span = truth.span();
  const PowerTrace dense = truth.with_source(Source::GroundTruth);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  const double v_code = std::clamp(std::round(cfg.bus_voltage / cfg.volt_quantum), 0.0,
                                   double(kAdcLevels - 1));
  const double volts = v_code * cfg.volt_quantum;

  PmdSampling result;
  std::vector<PowerSample> out;
  const auto first = static_cast<long long>(std::ceil(span.start * cfg.sample_rate - 1e-9));
  const auto last = static_cast<long long>(std::floor(span.end * cfg.sample_rate + 1e-9));
  out.reserve(static_cast<std::size_t>(std::max(0LL, last - first + 1)));
  for (long long k = first; k <= last; ++k) {
    const double t = static_cast<double>(k) / cfg.sample_rate;
    const double p = value_at(dense, std::clamp(t, span.start, span.end));
    double i_code = std::round(p / cfg.bus_voltage / cfg.amp_quantum);
    if (i_code > kAdcLevels - 1) {
      i_code = kAdcLevels - 1;
      ++result.clamped;
    }
    double value = volts * (std::max(0.0, i_code) * cfg.amp_quantum);
    if (cfg.noise_std > 0.0) value += cfg.noise_std * noise(rng);
    out.push_back({t, std::max(0.0, value)});
  }
  result.trace = PowerTrace(Source::Pmd, std::move(out), 1.0 / cfg.sample_rate);
  return result;
}

VirtualExperiment run_virtual_experiment(const MeasurementPlan& plan,
                                         double rep_duration,
                                         const GroundTruthModel& model,
                                         const SensorConfig& sensor,
                                         const PmdConfig& pmd,
                                         const ExperimentOptions& options) {
  plan.validate();
  if (!(rep_duration > 0.0)) throw Error("invalid experiment: rep_duration must be > 0");

  std::mt19937_64 rng(model.seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> gap(plan.inter_trial_min, plan.inter_trial_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SensorConfig cfg = sensor;
  if (options.randomize_phase)
    cfg.chars.phase = std::min(unit(rng) * cfg.chars.update_period,
                               std::nextafter(cfg.chars.update_period, 0.0));

  const auto shifts = schedule_shifts(plan.repetitions, plan.shifts, plan.shift_delay);
  const double duty = model.load.duty;

  VirtualExperiment ex;
  std::vector<LoadSegment> segments;
  double t = options.lead_in;
  for (int trial = 0; trial < plan.trials; ++trial) {
    t += gap(rng);
    std::size_t next_shift = 0;
    for (int rep = 1; rep <= plan.repetitions; ++rep) {
      const double flip = t + duty * rep_duration;
      const double end = t + rep_duration;
      segments.push_back({t, flip, model.load.p_high});
      if (end > flip) segments.push_back({flip, end, model.load.p_low});
      ex.markers.rep_spans.push_back({t, end});
      ex.log.add({t, end}, trial);
      t = end;
      if (next_shift < shifts.size() && shifts[next_shift].after_rep == rep) {
        ex.markers.delay_spans.push_back({t, t + shifts[next_shift].delay});
        t += shifts[next_shift].delay;
        ++next_shift;
      }
    }
  }
  const double tail = options.tail >= 0.0
                          ? options.tail
                          : std::max(1.0, cfg.chars.effective_window() +
                                              2.0 * cfg.chars.update_period);
  const double duration = t + tail;

  ex.truth = gen_ground_truth(segments, model, duration, options.truth_rate);
  ex.smi = sample_sensor(ex.truth, cfg);
  ex.pmd = sample_pmd(ex.truth, pmd).trace;
  ex.phase = cfg.chars.phase;
  return ex;
}

std::span<const Preset> presets() { return kPresets; }

std::string preset_names() {
  std::string names;
  for (const auto& p : kPresets) {
    if (!names.empty()) names += ", ";
    names += p.name;
  }
  return names;
}

const Preset& find_preset(std::string_view name) {
  for (const auto& p : kPresets)
    if (p.name == name) return p;
  throw Error("unknown preset '" + std::string(name) + "' (known presets: " +
              preset_names() + ")");
}

}  // namespace smiprobe
