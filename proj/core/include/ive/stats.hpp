// Small statistics helpers used for seed-batch comparisons.

#pragma once

#include <cstddef>
#include <span>

namespace ive {

double mean(std::span<const double> values);
/// Median of a non-empty sample (average of the middle pair for even sizes).
double median(std::span<const double> values);

struct SignTest {
  std::size_t positive = 0;  // pairs where a > b
  std::size_t negative = 0;  // pairs where a < b
  std::size_t ties = 0;
  /// One-sided exact binomial p-value for "a > b" (ties dropped).
  double p_value = 1.0;
};

/// Paired sign test of the hypothesis that `a` tends to exceed `b`.
SignTest sign_test_greater(std::span<const double> a, std::span<const double> b);

/// P(X >= k) for X ~ Binomial(n, 1/2).
double binomial_upper_tail(std::size_t k, std::size_t n);

}  // namespace ive
