#pragma once

// Minimal static SVG charts for reports. Output depends only on the data, so
// regenerated plots are byte-identical.

#include <string>
#include <vector>

namespace smiprobe {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
  bool steps = false;  // draw as a held (staircase) line
};

struct ChartLabels {
  std::string title;
  std::string x_label;
  std::string y_label;
};

std::string line_chart_svg(const std::vector<Series>& series, const ChartLabels& labels);

struct Bar {
  std::string label;
  double value = 0.0;
  double error = 0.0;  // half-height of the error bar, 0 for none
};

std::string bar_chart_svg(const std::vector<Bar>& bars, const ChartLabels& labels);

// One column of points per group with its median marked.
struct PointGroup {
  std::string label;
  std::vector<double> values;
};

std::string strip_chart_svg(const std::vector<PointGroup>& groups, const ChartLabels& labels);

}  // namespace smiprobe
