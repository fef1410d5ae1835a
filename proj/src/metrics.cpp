#include "phasest/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "phasest/numerics.hpp"

namespace phasest::metrics {

double time_to_level(std::span<const double> times, std::span<const double> err, double level) {
  if (times.size() != err.size() || times.empty()) throw InvalidArgument("time_to_level: mismatched series");
  std::size_t first_good = times.size();
  for (std::size_t i = times.size(); i-- > 0;) {
    if (!(std::abs(err[i]) <= level)) break;
    first_good = i;
  }
  if (first_good == times.size()) return std::numeric_limits<double>::infinity();
  return times[first_good];
}

double time_to_fraction(std::span<const double> times, std::span<const double> err, double fraction) {
  if (err.empty()) throw InvalidArgument("time_to_fraction: empty series");
  return time_to_level(times, err, fraction * std::abs(err[0]));
}

double fit_log_slope(std::span<const double> times, std::span<const double> err, double from_time, double floor) {
  if (times.size() != err.size()) throw InvalidArgument("fit_log_slope: mismatched series");
  double n = 0.0, st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < from_time || !(std::abs(err[i]) > floor)) continue;
    const double y = std::log(std::abs(err[i]));
    n += 1.0;
    st += times[i];
    sy += y;
    stt += times[i] * times[i];
    sty += times[i] * y;
  }
  const double den = n * stt - st * st;
  if (n < 2.0 || den <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (n * sty - st * sy) / den;
}

double tail_variance(std::span<const double> times, std::span<const double> values, double from_time) {
  double n = 0.0, mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] < from_time) continue;
    n += 1.0;
    const double d = values[i] - mean;
    mean += d / n;
    m2 += d * (values[i] - mean);
  }
  return n > 0.0 ? m2 / n : std::numeric_limits<double>::quiet_NaN();
}

double tail_max_abs(std::span<const double> times, std::span<const double> values, double from_time) {
  double m = 0.0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (times[i] >= from_time) m = std::max(m, std::abs(values[i]));
  }
  return m;
}

double max_overshoot(std::span<const double> truth, std::span<const double> estimate) {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(truth.size(), estimate.size()); ++i) m = std::max(m, estimate[i] - truth[i]);
  return m;
}

}  // namespace phasest::metrics
