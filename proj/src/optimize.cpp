#include "smiprobe/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "smiprobe/error.hpp"

namespace smiprobe {

namespace {

using Point = std::vector<double>;

Point affine(const Point& base, const Point& toward, double scale) {
  Point p(base.size());
  for (std::size_t i = 0; i < base.size(); ++i)
    p[i] = base[i] + scale * (toward[i] - base[i]);
  return p;
}

double distance(const Point& a, const Point& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

}  // namespace

NelderMeadResult nelder_mead(const Objective& f, std::vector<double> x0,
                             const NelderMeadOptions& opts) {
  const std::size_t n = x0.size();
  if (n == 0) throw Error("invalid optimisation: empty start point");

  NelderMeadResult result;
  auto eval = [&](const Point& x) {
    ++result.evaluations;
    const double v = f(x);
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };

  std::vector<Point> simplex(n + 1, x0);
  for (std::size_t i = 0; i < n; ++i) {
    double step;
    if (!opts.initial_step.empty()) {
      step = opts.initial_step.at(i);
    } else {
      step = x0[i] != 0.0 ? opts.relative_step * x0[i] : opts.absolute_step;
    }
    simplex[i + 1][i] += step;
  }
  std::vector<double> fx(n + 1);
  for (std::size_t i = 0; i <= n; ++i) fx[i] = eval(simplex[i]);
  if (!std::isfinite(fx[0])) throw Error("invalid optimisation: objective not finite at x0");

  std::vector<std::size_t> order(n + 1);
  auto sort_simplex = [&] {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return fx[a] < fx[b]; });
    std::vector<Point> s2;
    std::vector<double> f2;
    for (std::size_t i : order) {
      s2.push_back(simplex[i]);
      f2.push_back(fx[i]);
    }
    simplex.swap(s2);
    fx.swap(f2);
  };

  sort_simplex();
  while (true) {
    double diameter = 0.0;
    for (std::size_t i = 1; i <= n; ++i)
      diameter = std::max(diameter, distance(simplex[0], simplex[i]));
    if (diameter < opts.tolerance) {
      result.converged = true;
      break;
    }
    if (result.iterations >= opts.max_iterations) break;
    ++result.iterations;

    Point centroid(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t d = 0; d < n; ++d) centroid[d] += simplex[i][d] / double(n);

    const Point& worst = simplex[n];
    const Point xr = affine(centroid, worst, -opts.reflection);
    const double fr = eval(xr);

    if (fr < fx[0]) {
      const Point xe = affine(centroid, xr, opts.expansion);
      const double fe = eval(xe);
      if (fe < fr) {
        simplex[n] = xe;
        fx[n] = fe;
      } else {
        simplex[n] = xr;
        fx[n] = fr;
      }
    } else if (fr < fx[n - 1]) {
      simplex[n] = xr;
      fx[n] = fr;
    } else {
      // Contract toward the better of the reflected point and the worst vertex.
      const bool outside = fr < fx[n];
      const Point xc = outside ? affine(centroid, xr, opts.contraction)
                               : affine(centroid, worst, opts.contraction);
      const double fc = eval(xc);
      if (fc < (outside ? fr : fx[n])) {
        simplex[n] = xc;
        fx[n] = fc;
      } else {
        for (std::size_t i = 1; i <= n; ++i) {
          simplex[i] = affine(simplex[0], simplex[i], opts.shrink);
          fx[i] = eval(simplex[i]);
        }
      }
    }
    sort_simplex();
  }
  result.x = simplex[0];
  result.value = fx[0];
  return result;
}

}  // namespace smiprobe
