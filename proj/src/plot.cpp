#include "smiprobe/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "smiprobe/error.hpp"
#include "smiprobe/stats.hpp"

namespace smiprobe {

namespace {

constexpr double kWidth = 720, kHeight = 420;
constexpr double kLeft = 70, kRight = 20, kTop = 40, kBottom = 50;
constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Range {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();

  void add(double v) {
    if (!std::isfinite(v)) return;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  void finish() {
    if (!(hi >= lo)) lo = 0, hi = 1;
    if (hi == lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
  }
};

class Canvas {
 public:
  Canvas(Range x, Range y) : x_(x), y_(y) {}

  double px(double x) const { return kLeft + (x - x_.lo) / (x_.hi - x_.lo) * (kWidth - kLeft - kRight); }
  double py(double y) const { return kHeight - kBottom - (y - y_.lo) / (y_.hi - y_.lo) * (kHeight - kTop - kBottom); }

  std::string frame(const ChartLabels& labels, bool x_ticks) const {
    std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) +
                    "\" height=\"" + num(kHeight) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + num(kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" +
         escape(labels.title) + "</text>\n";
    s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" +
         num(kWidth - kLeft - kRight) + "\" height=\"" + num(kHeight - kTop - kBottom) +
         "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
      const double yv = y_.lo + (y_.hi - y_.lo) * i / 4.0;
      s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(yv) + 4) +
           "\" text-anchor=\"end\">" + label_num(yv) + "</text>\n";
      if (!x_ticks) continue;
      const double xv = x_.lo + (x_.hi - x_.lo) * i / 4.0;
      s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(kHeight - kBottom + 16) +
           "\" text-anchor=\"middle\">" + label_num(xv) + "</text>\n";
    }
    s += "<text x=\"" + num(kWidth / 2) + "\" y=\"" + num(kHeight - 10) +
         "\" text-anchor=\"middle\">" + escape(labels.x_label) + "</text>\n";
    s += "<text x=\"16\" y=\"" + num(kHeight / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
         num(kHeight / 2) + ")\">" + escape(labels.y_label) + "</text>\n";
    return s;
  }

 private:
  Range x_, y_;
};

}  // namespace

std::string line_chart_svg(const std::vector<Series>& series, const ChartLabels& labels) {
  if (series.empty()) throw Error("nothing to plot: no series");
  Range xr, yr;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw Error("nothing to plot: series '" + s.name + "' has mismatched x/y");
    for (double v : s.x) xr.add(v);
    for (double v : s.y) yr.add(v);
  }
  xr.finish();
  yr.finish();
  const Canvas c(xr, yr);
  std::string out = c.frame(labels, true);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* colour = kPalette[i % std::size(kPalette)];
    std::string points;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (!std::isfinite(s.x[k]) || !std::isfinite(s.y[k])) continue;
      if (s.steps && k > 0) points += num(c.px(s.x[k])) + ',' + num(c.py(s.y[k - 1])) + ' ';
      points += num(c.px(s.x[k])) + ',' + num(c.py(s.y[k])) + ' ';
    }
    out += "<polyline data-series=\"" + escape(s.name) + "\" fill=\"none\" stroke=\"" + colour +
           "\" stroke-width=\"1.2\" points=\"" + points + "\"/>\n";
    out += "<text x=\"" + num(kLeft + 10) + "\" y=\"" + num(kTop + 16 + 15.0 * static_cast<double>(i)) +
           "\" fill=\"" + colour + "\">" + escape(s.name) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string bar_chart_svg(const std::vector<Bar>& bars, const ChartLabels& labels) {
  if (bars.empty()) throw Error("nothing to plot: no bars");
  Range xr{0.0, static_cast<double>(bars.size())};
  Range yr;
  yr.add(0.0);
  for (const auto& b : bars) {
    yr.add(b.value + b.error);
    yr.add(b.value - b.error);
  }
  yr.finish();
  xr.lo = 0.0;
  xr.hi = static_cast<double>(bars.size());
  const Canvas c(xr, yr);
  std::string out = c.frame(labels, false);
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const auto& b = bars[i];
    const double x0 = c.px(static_cast<double>(i) + 0.15), x1 = c.px(static_cast<double>(i) + 0.85);
    const double top = c.py(std::max(b.value, 0.0)), base = c.py(std::min(b.value, 0.0));
    out += "<rect x=\"" + num(x0) + "\" y=\"" + num(top) + "\" width=\"" + num(x1 - x0) +
           "\" height=\"" + num(base - top) + "\" fill=\"" + kPalette[0] + "\"/>\n";
    if (b.error > 0.0) {
      const double xm = (x0 + x1) / 2;
      out += "<line x1=\"" + num(xm) + "\" x2=\"" + num(xm) + "\" y1=\"" + num(c.py(b.value - b.error)) +
             "\" y2=\"" + num(c.py(b.value + b.error)) + "\" stroke=\"black\"/>\n";
    }
    out += "<text x=\"" + num((x0 + x1) / 2) + "\" y=\"" + num(kHeight - kBottom + 16) +
           "\" text-anchor=\"middle\">" + escape(b.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

std::string strip_chart_svg(const std::vector<PointGroup>& groups, const ChartLabels& labels) {
  if (groups.empty()) throw Error("nothing to plot: no groups");
  Range xr{0.0, static_cast<double>(groups.size())};
  Range yr;
  for (const auto& g : groups)
    for (double v : g.values) yr.add(v);
  yr.finish();
  const Canvas c(xr, yr);
  std::string out = c.frame(labels, false);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto& g = groups[i];
    const double centre = static_cast<double>(i) + 0.5;
    for (std::size_t k = 0; k < g.values.size(); ++k) {
      // Deterministic spread so overlapping points stay visible.
      const double dx = 0.3 * (static_cast<double>(k % 7) / 6.0 - 0.5);
      out += "<circle cx=\"" + num(c.px(centre + dx)) + "\" cy=\"" + num(c.py(g.values[k])) +
             "\" r=\"2.5\" fill=\"" + kPalette[i % std::size(kPalette)] + "\" fill-opacity=\"0.6\"/>\n";
    }
    if (!g.values.empty()) {
      const double m = median_of(g.values);
      out += "<line x1=\"" + num(c.px(centre - 0.3)) + "\" x2=\"" + num(c.px(centre + 0.3)) + "\" y1=\"" +
             num(c.py(m)) + "\" y2=\"" + num(c.py(m)) + "\" stroke=\"black\" stroke-width=\"2\"/>\n";
    }
    out += "<text x=\"" + num(c.px(centre)) + "\" y=\"" + num(kHeight - kBottom + 16) +
           "\" text-anchor=\"middle\">" + escape(g.label) + "</text>\n";
  }
  return out + "</svg>\n";
}

}  // namespace smiprobe
