#include "aptmle/stats.hpp"

#include "aptmle/error.hpp"

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>

namespace aptmle {

double normal_critical(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::InvalidArgument, "alpha must lie in (0,1)");
  const boost::math::normal standard;
  return boost::math::quantile(boost::math::complement(standard, alpha / 2.0));
}

double correlation_p_value(double r, std::size_t n) {
  if (n < 3) return 1.0;
  const double r2 = std::min(r * r, 1.0);
  if (r2 >= 1.0) return 0.0;
  const double df = static_cast<double>(n - 2);
  const double t = std::abs(r) * std::sqrt(df / (1.0 - r2));
  const boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

double pearson_correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
  const Eigen::ArrayXd dx = x.array() - x.mean();
  const Eigen::ArrayXd dy = y.array() - y.mean();
  const double sxx = (dx * dx).sum();
  const double syy = (dy * dy).sum();
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return (dx * dy).sum() / std::sqrt(sxx * syy);
}

std::pair<double, double> clopper_pearson(std::size_t successes, std::size_t trials,
                                          double alpha) {
  if (trials == 0) fail(ErrorCode::InvalidArgument, "binomial interval needs at least one trial");
  const auto x = static_cast<double>(successes);
  const auto n = static_cast<double>(trials);
  double lo = 0.0;
  double hi = 1.0;
  if (successes > 0) {
    lo = boost::math::quantile(boost::math::beta_distribution<>(x, n - x + 1.0), alpha / 2.0);
  }
  if (successes < trials) {
    hi = boost::math::quantile(boost::math::beta_distribution<>(x + 1.0, n - x), 1.0 - alpha / 2.0);
  }
  return {lo, hi};
}

std::pair<double, double> binomial_acceptance_band(std::size_t trials, double p, double alpha) {
  const boost::math::binomial dist(static_cast<double>(trials), p);
  const auto n = static_cast<double>(trials);
  // Smallest k with P(X <= k) >= alpha/2, largest k with P(X >= k) >= alpha/2.
  double lo_count = 0.0;
  while (lo_count < n && boost::math::cdf(dist, lo_count) < alpha / 2.0) lo_count += 1.0;
  double hi_count = n;
  while (hi_count > 0.0 && boost::math::cdf(boost::math::complement(dist, hi_count - 1.0)) < alpha / 2.0) {
    hi_count -= 1.0;
  }
  return {lo_count / n, hi_count / n};
}

double sample_variance(const Eigen::VectorXd& values) {
  const auto n = values.size();
  if (n < 2) fail(ErrorCode::InvalidArgument, "sample variance needs at least two values");
  const double mean = values.mean();
  return (values.array() - mean).square().sum() / static_cast<double>(n - 1);
}

}  // namespace aptmle
