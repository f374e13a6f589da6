#include <doctest.h>

#include <cmath>
#include <random>

#include "smiprobe/error.hpp"
#include "smiprobe/optimize.hpp"
#include "smiprobe/regression.hpp"
#include "smiprobe/stats.hpp"

using namespace smiprobe;

TEST_CASE("nelder-mead on one-dimensional bowls") {
  const auto quad = nelder_mead([](const std::vector<double>& x) { return (x[0] - 3.0) * (x[0] - 3.0); }, {0.0});
  CHECK(quad.converged);
  CHECK(std::abs(quad.x[0] - 3.0) <= 1e-4);

  const auto vee = nelder_mead([](const std::vector<double>& x) { return std::abs(x[0]); }, {1.0});
  CHECK(vee.converged);
  CHECK(std::abs(vee.x[0]) <= 1e-4);
  CHECK(vee.value == doctest::Approx(std::abs(vee.x[0])));
  CHECK(vee.evaluations >= vee.iterations);
}

TEST_CASE("nelder-mead in two dimensions") {
  NelderMeadOptions opts;
  opts.tolerance = 1e-8;
  opts.max_iterations = 2000;
  const auto r = nelder_mead(
      [](const std::vector<double>& p) {
        const double a = 1.0 - p[0], b = p[1] - p[0] * p[0];
        return a * a + 100.0 * b * b;
      },
      {-1.2, 1.0}, opts);
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-3));
}

TEST_CASE("nelder-mead limits and failures") {
  NelderMeadOptions opts;
  opts.max_iterations = 3;
  const auto capped = nelder_mead([](const std::vector<double>& x) { return (x[0] - 50.0) * (x[0] - 50.0); }, {0.0}, opts);
  CHECK_FALSE(capped.converged);
  CHECK(capped.iterations == 3);

  // Non-finite values rank worst instead of poisoning the simplex.
  const auto walled = nelder_mead(
      [](const std::vector<double>& x) { return x[0] < 0.5 ? NAN : (x[0] - 1.0) * (x[0] - 1.0); }, {2.0});
  CHECK(std::abs(walled.x[0] - 1.0) <= 1e-4);

  CHECK_THROWS_AS(nelder_mead([](const std::vector<double>&) { return NAN; }, {1.0}), Error);
  CHECK_THROWS_AS(nelder_mead([](const std::vector<double>&) { return 0.0; }, {}), Error);
}

TEST_CASE("nelder-mead result never worse than the start") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 50; ++i) {
    const double c = u(rng), s = std::abs(u(rng)) + 0.1, x0 = u(rng);
    auto f = [=](const std::vector<double>& x) { return std::cos(x[0] * s) + 0.1 * (x[0] - c) * (x[0] - c); };
    const auto r = nelder_mead(f, {x0});
    CHECK(r.value <= f({x0}) + 1e-12);
    CHECK(r.value == doctest::Approx(f(r.x)));
  }
}

TEST_CASE("linear fits") {
  const std::vector<double> x = {0, 50, 100, 150, 200, 250, 300};
  SUBCASE("identity") {
    const auto fit = fit_linear(x, x);
    CHECK(fit.gradient == doctest::Approx(1.0));
    CHECK(fit.intercept == doctest::Approx(0.0));
    CHECK(fit.r_squared == doctest::Approx(1.0));
    CHECK(fit.points == x.size());
  }
  SUBCASE("exact affine data recovers gain and offset to machine precision") {
    std::vector<SteadyStatePoint> pts;
    for (double r : x) pts.push_back({r, 0.95 * r + 2.0});
    const auto fit = steady_state_regression(pts);
    CHECK(std::abs(fit.gradient - 0.95) < 1e-12);
    CHECK(std::abs(fit.intercept - 2.0) < 1e-9);
    CHECK(fit.r_squared == doctest::Approx(1.0));
  }
  SUBCASE("1% noise keeps R squared above 0.999") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> noise(0.0, 0.01);
    std::vector<SteadyStatePoint> pts;
    for (int rep = 0; rep < 8; ++rep)
      for (double r : x) pts.push_back({r + 60.0, (0.95 * (r + 60.0) + 2.0) * (1.0 + noise(rng))});
    const auto fit = steady_state_regression(pts);
    CHECK(fit.r_squared >= 0.999);
    CHECK(fit.r_squared < 1.0);
    CHECK(fit.gradient == doctest::Approx(0.95).epsilon(0.01));
  }
  SUBCASE("oracle: closed-form least squares") {
    const std::vector<double> xs = {1, 2, 4, 7}, ys = {2.1, 3.9, 8.2, 13.8};
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < 4; ++i) mx += xs[i] / 4, my += ys[i] / 4;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      sxy += (xs[i] - mx) * (ys[i] - my);
      sxx += (xs[i] - mx) * (xs[i] - mx);
      syy += (ys[i] - my) * (ys[i] - my);
    }
    const auto fit = fit_linear(xs, ys);
    CHECK(fit.gradient == doctest::Approx(sxy / sxx));
    CHECK(fit.intercept == doctest::Approx(my - sxy / sxx * mx));
    CHECK(fit.r_squared == doctest::Approx(sxy * sxy / (sxx * syy)));
    CHECK(fit(10.0) == doctest::Approx(fit.gradient * 10.0 + fit.intercept));
  }
  const std::vector<double> same = {5, 5, 5};
  CHECK_THROWS_WITH_AS(fit_linear(same, std::vector<double>{1, 2, 3}), doctest::Contains("all reference values equal"),
                       Error);
  CHECK_THROWS_AS(fit_linear(std::vector<double>{1}, std::vector<double>{1}), Error);
  CHECK_THROWS_AS(fit_linear(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
}

TEST_CASE("load calibration") {
  std::vector<CalibrationPoint> pts;
  for (double n : {1e4, 2e4, 5e4, 1e5}) pts.push_back({n, 2e-6 * n});
  const auto fit = fit_load_calibration(pts);
  CHECK(fit.gradient == doctest::Approx(2e-6));
  CHECK(std::abs(fit.intercept) < 1e-12);
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK(iterations_for_duration(fit, 0.1) == doctest::Approx(0.1 / 2e-6));

  pts[1].duration_s *= 1.05;
  CHECK(fit_load_calibration(pts).r_squared < 1.0);
  LinearFit zero;
  CHECK_THROWS_AS(iterations_for_duration(zero, 0.1), Error);
}

TEST_CASE("summary statistics") {
  CHECK(mean_of({1, 2, 3, 4}) == 2.5);
  CHECK(stddev_of({2, 4, 4, 4, 5, 5, 7, 9}) == doctest::Approx(std::sqrt(32.0 / 7.0)));
  CHECK(stddev_of({3}) == 0.0);
  CHECK(median_of({5, 1, 3}) == 3);
  CHECK(median_of({4, 1, 3, 2}) == 2.5);
  CHECK_THROWS_AS(median_of({}), Error);
}
