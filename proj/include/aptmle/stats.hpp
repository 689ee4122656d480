#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <utility>

namespace aptmle {

/// Two-sided standard-normal critical value z_{1-alpha/2}.
double normal_critical(double alpha);

/// Two-sided p-value of a Pearson correlation r computed from n pairs
/// (Student t with n-2 degrees of freedom).
double correlation_p_value(double r, std::size_t n);

double pearson_correlation(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

/// Exact (Clopper-Pearson) two-sided confidence interval for a binomial
/// proportion with `successes` out of `trials`.
std::pair<double, double> clopper_pearson(std::size_t successes, std::size_t trials,
                                          double alpha = 0.05);

/// Central acceptance region [lo, hi] of Binomial(trials, p) holding at least
/// 1 - alpha of the mass, expressed as proportions.
std::pair<double, double> binomial_acceptance_band(std::size_t trials, double p,
                                                   double alpha = 0.05);

/// Sample variance with the (n-1) denominator.
double sample_variance(const Eigen::VectorXd& values);

inline double logit(double p) { return std::log(p / (1.0 - p)); }

inline double expit(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

}  // namespace aptmle
