#pragma once

#include <vector>

namespace smiprobe {

double mean_of(const std::vector<double>& v);
// Sample standard deviation (n - 1); zero for fewer than two values.
double stddev_of(const std::vector<double>& v);
double median_of(std::vector<double> v);

}  // namespace smiprobe
