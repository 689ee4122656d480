#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace aptmle {

struct DesignMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> column_names;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

struct GlmOptions {
  // Empty vectors mean "no offset" and "unit weights".
  Eigen::VectorXd offset;
  Eigen::VectorXd weights;
  bool intercept = true;

  double score_tolerance = 1e-8;
  double deviance_tolerance = 1e-10;
  int max_iterations = 100;
};

// Coefficients follow the design columns, preceded by the intercept when
// one was requested. Aliased columns keep a coefficient of exactly zero.
struct GlmFit {
  Eigen::VectorXd coefficients;
  bool intercept = true;
  bool converged = false;
  bool rank_deficient = false;
  std::vector<bool> aliased;
  int iterations = 0;
  double deviance = 0.0;
  // Deviance after each accepted iteration, starting from the initial value.
  std::vector<double> deviance_trace;
};

/// Binomial (quasi-binomial for fractional y) logistic regression by IRLS.
/// Converges when max |score| < score_tolerance or the relative deviance
/// change drops below deviance_tolerance; halves the step whenever the
/// deviance would increase. Separation is reported as converged = false.
GlmFit fit_logistic(const DesignMatrix& x, const Eigen::VectorXd& y, const GlmOptions& options = {});

/// expit(offset + X beta), clipped to [kPredictionClip, 1 - kPredictionClip].
Eigen::VectorXd predict_response(const GlmFit& fit, const DesignMatrix& x,
                                 const Eigen::VectorXd& offset = {});

/// Linear predictor X beta (without offset).
Eigen::VectorXd linear_predictor(const GlmFit& fit, const Eigen::MatrixXd& x);

inline constexpr double kPredictionClip = 1e-6;

/// Binomial deviance of fractional responses; 0 log 0 is taken as 0.
double binomial_deviance(const Eigen::VectorXd& y, const Eigen::VectorXd& mu,
                         const Eigen::VectorXd& weights = {});

/// Columns of x (in order) that are linearly dependent on earlier columns.
std::vector<bool> find_aliased_columns(const Eigen::MatrixXd& x, double tolerance = 1e-7);

}  // namespace aptmle
