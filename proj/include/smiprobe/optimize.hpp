#pragma once

#include <functional>
#include <vector>

namespace smiprobe {

struct NelderMeadOptions {
  // Initial simplex: x0 plus one vertex per axis, offset by
  // relative_step * x0[i], or absolute_step where x0[i] == 0.
  double relative_step = 0.05;
  double absolute_step = 0.00025;
  std::vector<double> initial_step;  // overrides the two above when non-empty
  double tolerance = 1e-4;           // simplex diameter
  int max_iterations = 200;
  double reflection = 1.0;
  double expansion = 2.0;
  double contraction = 0.5;
  double shrink = 0.5;
};

struct NelderMeadResult {
  std::vector<double> x;
  double value = 0.0;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
};

using Objective = std::function<double(const std::vector<double>&)>;

// Downhill simplex minimisation. Non-finite objective values rank as +inf.
NelderMeadResult nelder_mead(const Objective& f, std::vector<double> x0,
                             const NelderMeadOptions& opts = {});

}  // namespace smiprobe
