#include "smiprobe/regression.hpp"

#include <algorithm>
#include <cmath>

#include "smiprobe/error.hpp"

namespace smiprobe {

LinearFit fit_linear(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("invalid regression: x and y lengths differ");
  if (x.size() < 2) throw Error("invalid regression: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (!(sxx > 0.0)) throw Error("invalid regression: all reference values equal");

  LinearFit fit;
  fit.points = x.size();
  fit.gradient = sxy / sxx;
  fit.intercept = my - fit.gradient * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - fit(x[i]);
    ss_res += r * r;
  }
  fit.r_squared = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : 1.0;
  return fit;
}

LinearFit steady_state_regression(std::span<const SteadyStatePoint> points) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    x.push_back(p.reference_w);
    y.push_back(p.sensor_w);
  }
  return fit_linear(x, y);
}

LinearFit fit_load_calibration(std::span<const CalibrationPoint> points) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    x.push_back(p.iterations);
    y.push_back(p.duration_s);
  }
  return fit_linear(x, y);
}

double iterations_for_duration(const LinearFit& calibration, double target_s) {
  if (calibration.gradient == 0.0) throw Error("invalid calibration: zero gradient");
  return (target_s - calibration.intercept) / calibration.gradient;
}

}  // namespace smiprobe
