#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "smiprobe/trace.hpp"

namespace testing {

using smiprobe::PowerSample;
using smiprobe::PowerTrace;
using smiprobe::Source;

inline PowerTrace make_trace(Source source, const std::vector<double>& t,
                             const std::vector<double>& p) {
  std::vector<PowerSample> s;
  for (std::size_t i = 0; i < t.size(); ++i) s.push_back({t[i], p[i]});
  return PowerTrace(source, std::move(s));
}

// Samples f on a uniform grid over [start, end].
inline PowerTrace sample_fn(Source source, const std::function<double(double)>& f,
                            double start, double end, double rate) {
  std::vector<PowerSample> s;
  const auto n = static_cast<std::size_t>(std::llround((end - start) * rate));
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = start + static_cast<double>(i) / rate;
    s.push_back({t, f(t)});
  }
  return PowerTrace(source, std::move(s));
}

// Midpoint-rule integral of f, independent of the library's integrators.
inline double midpoint_integral(const std::function<double(double)>& f, double a, double b,
                                int steps = 200000) {
  const double h = (b - a) / steps;
  double sum = 0.0;
  for (int i = 0; i < steps; ++i) sum += f(a + (i + 0.5) * h);
  return sum * h;
}

inline double square(double t, double period, double duty, double high, double low) {
  const double phase = t / period - std::floor(t / period);
  return phase < duty ? high : low;
}

}  // namespace testing
