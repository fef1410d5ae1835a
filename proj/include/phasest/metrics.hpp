#pragma once

#include <span>
#include <vector>

namespace phasest::metrics {

// Earliest time after which |err| stays at or below fraction * |err[0]|.
// Returns +inf when the threshold is never reached for good.
double time_to_fraction(std::span<const double> times, std::span<const double> err, double fraction);

// Same, with an explicit reference level instead of |err[0]|.
double time_to_level(std::span<const double> times, std::span<const double> err, double level);

// Least-squares slope of log(err) over samples with time >= from_time.
// Samples at or below `floor` are skipped.
double fit_log_slope(std::span<const double> times, std::span<const double> err, double from_time,
                     double floor = 0.0);

// Population variance of values with time >= from_time.
double tail_variance(std::span<const double> times, std::span<const double> values, double from_time);

// Max of |values| with time >= from_time.
double tail_max_abs(std::span<const double> times, std::span<const double> values, double from_time);

// Max of (estimate - truth) clipped at zero.
double max_overshoot(std::span<const double> truth, std::span<const double> estimate);

}  // namespace phasest::metrics
