#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include "phasest/metrics.hpp"

using namespace phasest::metrics;

TEST_CASE("time_to_fraction waits for the error to stay down") {
  const std::vector<double> t{0, 1, 2, 3, 4};
  const std::vector<double> e{10, 4, 0.5, 2, 0.5};
  CHECK(time_to_fraction(t, e, 0.1) == 4.0);
  CHECK(time_to_fraction(t, e, 0.5) == 1.0);
  CHECK(std::isinf(time_to_fraction(t, e, 0.01)));
}

TEST_CASE("fit_log_slope recovers an exponential rate") {
  std::vector<double> t, e;
  for (int i = 0; i <= 50; ++i) {
    t.push_back(i);
    e.push_back(3.0 * std::exp(-0.2 * i));
  }
  CHECK(fit_log_slope(t, e, 25.0) == doctest::Approx(-0.2));
  CHECK(std::isnan(fit_log_slope(t, e, 100.0)));
}

TEST_CASE("tail statistics") {
  const std::vector<double> t{0, 1, 2, 3};
  const std::vector<double> v{100, 1, 3, -2};
  CHECK(tail_variance(t, v, 2.0) == doctest::Approx(6.25));
  CHECK(tail_max_abs(t, v, 1.0) == 3.0);
  CHECK(max_overshoot(std::vector<double>{1, 2}, std::vector<double>{1.5, 1.0}) == 0.5);
}
