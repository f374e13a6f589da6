#pragma once

#include <span>
#include <vector>

namespace smiprobe {

struct LinearFit {
  double gradient = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;

  double operator()(double x) const { return gradient * x + intercept; }
};

// Ordinary least squares y = gradient * x + intercept.
LinearFit fit_linear(std::span<const double> x, std::span<const double> y);

struct SteadyStatePoint {
  double reference_w = 0.0;
  double sensor_w = 0.0;
};

// sensor = gradient * reference + intercept
LinearFit steady_state_regression(std::span<const SteadyStatePoint> points);

struct CalibrationPoint {
  double iterations = 0.0;
  double duration_s = 0.0;
};

// duration_s = gradient * iterations + intercept
LinearFit fit_load_calibration(std::span<const CalibrationPoint> points);

// Iteration count whose predicted duration equals target_s.
double iterations_for_duration(const LinearFit& calibration, double target_s);

}  // namespace smiprobe
