#ifndef ATRADIFF_STATS_HPP_
#define ATRADIFF_STATS_HPP_

#include <span>
#include <vector>

namespace atradiff {

// Percentile q in [0, 100] with linear interpolation between order
// statistics (position q/100 * (n - 1)). Throws on empty input.
double percentile(std::vector<double> values, double q);
double median(std::vector<double> values);

// Trapezoid area under y(x); x must be nondecreasing. Zero for fewer than
// two points.
double trapezoid_auc(std::span<const double> x, std::span<const double> y);

}  // namespace atradiff

#endif  // ATRADIFF_STATS_HPP_
