#include "smiprobe/trace.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>

namespace smiprobe {

namespace {

constexpr std::string_view kSourceNames[] = {
    "SMI_INSTANT", "SMI_AVERAGE", "PMD", "GROUND_TRUTH", "EMULATED"};

double lerp_between(const PowerSample& a, const PowerSample& b, double t) {
  if (t <= a.t) return a.p;
  if (t >= b.t) return b.p;
  return a.p + (b.p - a.p) * (t - a.t) / (b.t - a.t);
}

// Integral over [a, b] with both ends inside the interval starting at sample i.
double piece_integral(std::span<const PowerSample> s, std::size_t i, bool hold,
                      double a, double b) {
  if (b <= a) return 0.0;
  if (hold || i + 1 >= s.size()) return s[i].p * (b - a);
  const double va = lerp_between(s[i], s[i + 1], a);
  const double vb = lerp_between(s[i], s[i + 1], b);
  return 0.5 * (va + vb) * (b - a);
}

}  // namespace

std::string_view to_string(Source source) {
  return kSourceNames[static_cast<int>(source)];
}

Source source_from_string(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kSourceNames); ++i) {
    if (kSourceNames[i] == name) return static_cast<Source>(i);
  }
  throw Error("unknown trace source '" + std::string(name) + "'");
}

bool uses_hold(Source source) {
  return source == Source::SmiInstant || source == Source::SmiAverage;
}

TimeWindow make_window(double start, double end) {
  if (!(start <= end)) throw Error("invalid window: start after end");
  return {start, end};
}

PowerTrace::PowerTrace(Source source, std::vector<PowerSample> samples,
                       double nominal_period)
    : source_(source),
      samples_(std::move(samples)),
      nominal_period_(nominal_period) {
  if (!(nominal_period_ >= 0.0) || !std::isfinite(nominal_period_))
    throw Error("invalid trace: nominal period must be >= 0");
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& s = samples_[i];
    if (!std::isfinite(s.t) || !std::isfinite(s.p))
      throw Error("invalid trace: non-finite sample at index " +
                  std::to_string(i));
    if (s.p < 0.0)
      throw Error("invalid trace: negative power at index " +
                  std::to_string(i));
    if (i > 0 && !(s.t > samples_[i - 1].t))
      throw Error("invalid trace: timestamps not strictly increasing at index " +
                  std::to_string(i));
  }
}

TimeWindow PowerTrace::span() const {
  if (samples_.empty()) return {};
  return {samples_.front().t, samples_.back().t};
}

std::vector<double> PowerTrace::times() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.t);
  return out;
}

std::vector<double> PowerTrace::values() const {
  std::vector<double> out;
  out.reserve(samples_.size());
  for (const auto& s : samples_) out.push_back(s.p);
  return out;
}

std::optional<std::size_t> PowerTrace::index_at_or_before(double time) const {
  auto it = std::upper_bound(
      samples_.begin(), samples_.end(), time,
      [](double t, const PowerSample& s) { return t < s.t; });
  if (it == samples_.begin()) return std::nullopt;
  return static_cast<std::size_t>(std::distance(samples_.begin(), it) - 1);
}

PowerTrace PowerTrace::slice(double start, double end) const {
  auto first = std::lower_bound(
      samples_.begin(), samples_.end(), start,
      [](const PowerSample& s, double t) { return s.t < t; });
  auto last = std::upper_bound(
      first, samples_.end(), end,
      [](double t, const PowerSample& s) { return t < s.t; });
  PowerTrace out;
  out.source_ = source_;
  out.nominal_period_ = nominal_period_;
  out.samples_.assign(first, last);
  return out;
}

PowerTrace PowerTrace::with_source(Source source) const {
  PowerTrace out = *this;
  out.source_ = source;
  return out;
}

double value_at(const PowerTrace& trace, double t) {
  if (trace.empty() || !(t >= trace.front().t) || !(t <= trace.back().t))
    throw Error("out of range: t=" + std::to_string(t) +
                " outside trace span");
  const auto s = trace.samples();
  const std::size_t i = *trace.index_at_or_before(t);
  if (uses_hold(trace.source()) || i + 1 >= s.size()) return s[i].p;
  return lerp_between(s[i], s[i + 1], t);
}

double integrate_energy(const PowerTrace& trace, const TimeWindow& win) {
  if (trace.size() < 2) throw Error("insufficient samples: trace too short");
  const double a = std::max(win.start, trace.front().t);
  const double b = std::min(win.end, trace.back().t);
  if (!(b > a)) throw Error("insufficient samples: window does not overlap trace");

  const auto s = trace.samples();
  const bool hold = uses_hold(trace.source());
  std::size_t i = *trace.index_at_or_before(a);
  double energy = 0.0;
  double from = a;
  while (from < b) {
    const double to = (i + 1 < s.size()) ? std::min(b, s[i + 1].t) : b;
    energy += piece_integral(s, i, hold, from, to);
    from = to;
    ++i;
  }
  return energy;
}

double mean_power(const PowerTrace& trace, const TimeWindow& win) {
  const double energy = integrate_energy(trace, win);
  const double a = std::max(win.start, trace.front().t);
  const double b = std::min(win.end, trace.back().t);
  return energy / (b - a);
}

PowerTrace normalize(const PowerTrace& trace) {
  if (trace.empty()) throw Error("degenerate normalization: empty trace");
  const auto [lo, hi] = std::minmax_element(
      trace.samples().begin(), trace.samples().end(),
      [](const PowerSample& x, const PowerSample& y) { return x.p < y.p; });
  const double min = lo->p;
  const double range = hi->p - min;
  if (!(range > 0.0)) throw Error("degenerate normalization: constant trace");
  std::vector<PowerSample> out;
  out.reserve(trace.size());
  for (const auto& s : trace.samples())
    out.push_back({s.t, std::clamp((s.p - min) / range, 0.0, 1.0)});
  return PowerTrace(trace.source(), std::move(out), trace.nominal_period());
}

PowerTrace shift_earlier(const PowerTrace& trace, double dt) {
  if (dt == 0.0) return trace;
  std::vector<PowerSample> out(trace.samples().begin(), trace.samples().end());
  for (auto& s : out) s.t -= dt;
  return PowerTrace(trace.source(), std::move(out), trace.nominal_period());
}

std::vector<Run> run_lengths(const PowerTrace& trace, double epsilon) {
  std::vector<Run> runs;
  const auto s = trace.samples();
  if (s.size() < 2) return runs;
  std::size_t first = 0;
  for (std::size_t i = 1; i < s.size(); ++i) {
    if (std::abs(s[i].p - s[first].p) > epsilon) {
      runs.push_back({s[first].p, s[i].t - s[first].t, false});
      first = i;
    }
  }
  runs.push_back({s[first].p, s.back().t - s[first].t, true});
  return runs;
}

double mse(const PowerTrace& a, const PowerTrace& b) {
  if (a.size() != b.size()) throw Error("timestamp mismatch: sizes differ");
  if (a.empty()) throw Error("insufficient samples: empty traces");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].t != b[i].t)
      throw Error("timestamp mismatch at index " + std::to_string(i));
    const double d = a[i].p - b[i].p;
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

EnergyIndex::EnergyIndex(const PowerTrace& trace)
    : trace_(trace), hold_(uses_hold(trace.source())) {
  if (trace_.size() < 2) throw Error("insufficient samples: trace too short");
  const auto s = trace_.samples();
  prefix_.resize(s.size());
  prefix_[0] = 0.0;
  for (std::size_t i = 1; i < s.size(); ++i)
    prefix_[i] = prefix_[i - 1] + piece_integral(s, i - 1, hold_, s[i - 1].t, s[i].t);
}

double EnergyIndex::cumulative_at(double t) const {
  const auto s = trace_.samples();
  const std::size_t i = *trace_.index_at_or_before(t);
  return prefix_[i] + piece_integral(s, i, hold_, s[i].t, t);
}

double EnergyIndex::integral(double a, double b) const {
  a = std::max(a, trace_.front().t);
  b = std::min(b, trace_.back().t);
  if (!(b > a)) return 0.0;
  const std::size_t ia = *trace_.index_at_or_before(a);
  const std::size_t ib = *trace_.index_at_or_before(b);
  if (ia == ib) return piece_integral(trace_.samples(), ia, hold_, a, b);
  return cumulative_at(b) - cumulative_at(a);
}

double EnergyIndex::trailing_mean(double t, double w) const {
  const double t0 = trace_.front().t;
  if (t < t0 || t > trace_.back().t)
    throw Error("out of range: window end outside reference span");
  if (!(w > 0.0)) return value_at(trace_, t);
  const double a = t - w;
  double energy = integral(std::max(a, t0), t);
  if (a < t0) energy += trace_.front().p * (t0 - a);
  return energy / w;
}

}  // namespace smiprobe
