#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "pedscan/common.hpp"

namespace pedscan {

// Upper tail P(X > x) for chi-square with df degrees of freedom.
inline double chisq_upper_p(double x, int df) {
  if (x <= 0.0) return 1.0;
  boost::math::chi_squared dist(static_cast<double>(df));
  return boost::math::cdf(boost::math::complement(dist, x));
}

// Lower quantile: x with P(X <= x) = prob.
inline double chisq_quantile(double prob, int df) {
  boost::math::chi_squared dist(static_cast<double>(df));
  return boost::math::quantile(dist, prob);
}

// Upper-tail quantile: x with P(X > x) = p. Stays accurate for tiny p where
// 1 - p would round to 1.
inline double chisq_quantile_from_upper_p(double p, int df) {
  boost::math::chi_squared dist(static_cast<double>(df));
  return boost::math::quantile(boost::math::complement(dist, p));
}

// Median of the chi-square(1) distribution, used as the lambda_GC denominator.
inline double chisq1_median() {
  static const double m = chisq_quantile(0.5, 1);
  return m;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw data_error("median of empty set");
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.begin() + mid);
  return 0.5 * (v[mid - 1] + hi);
}

// Benjamini-Hochberg: the cutoff is the largest p_(i) with p_(i) <= i*q/m;
// 0 when nothing qualifies.
inline double bh_threshold(std::vector<double> pvals, double q) {
  if (pvals.empty()) return 0.0;
  std::sort(pvals.begin(), pvals.end());
  const double m = static_cast<double>(pvals.size());
  double thr = 0.0;
  for (size_t i = 0; i < pvals.size(); ++i) {
    if (pvals[i] <= (static_cast<double>(i) + 1.0) * q / m) thr = pvals[i];
  }
  return thr;
}

}  // namespace pedscan
