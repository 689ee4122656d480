#pragma once

#include "aptmle/data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace aptmle {

enum class LearnerKind { Unadjusted, Glm, GlmMainTerms, Stepwise, Lasso, Mars };
enum class LearnerRole { OutcomeRegression, PropensityScore };

/// Declarative candidate estimator. Text forms: `unadjusted`, `glm(W1)`,
/// `glm(main_terms)`, `stepwise`, `stepwise_int`, `lasso`, `mars`,
/// `mars_screen`.
struct LearnerSpec {
  LearnerKind kind = LearnerKind::Unadjusted;
  LearnerRole role = LearnerRole::OutcomeRegression;
  std::string covariate;      // Glm only
  bool interactions = false;  // Stepwise only
  bool screening = false;     // Mars only

  static LearnerSpec unadjusted(LearnerRole role) { return {LearnerKind::Unadjusted, role, {}, false, false}; }
  static LearnerSpec glm(std::string covariate, LearnerRole role) {
    return {LearnerKind::Glm, role, std::move(covariate), false, false};
  }
  static LearnerSpec parse(const std::string& text, LearnerRole role);

  std::string to_string() const;
  bool is_unadjusted() const { return kind == LearnerKind::Unadjusted; }
  bool operator==(const LearnerSpec&) const = default;
};

// Fixed hyperparameters of the learner library; echoed in every report.
struct LearnerSettings {
  double screen_p = 0.10;
  int mars_max_terms = 21;
  double mars_penalty = 2.0;
  int mars_max_knots = 30;
  double mars_min_r2_gain = 1e-3;
  int lasso_path_length = 50;
  double lasso_min_ratio = 1e-3;
  int lasso_folds = 5;

  bool operator==(const LearnerSettings&) const = default;
};

inline constexpr double kPscoreClipLow = 0.01;
inline constexpr double kPscoreClipHigh = 0.99;

// A basis term evaluated on (arm, covariate row).
struct Term {
  enum class Type { Intercept, Arm, Treated, Control, Main, Product, Hinge };
  Type type = Type::Intercept;
  std::size_t first = 0;
  std::size_t second = 0;
  double knot = 0.0;
  int direction = 1;  // Hinge: +1 -> max(0, x - knot), -1 -> max(0, knot - x)

  double evaluate(double arm, const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  std::string describe(const std::vector<std::string>& names) const;
  bool operator==(const Term&) const = default;
};

enum class Link { Logit, Identity };

Eigen::MatrixXd term_matrix(const std::vector<Term>& terms, const Eigen::VectorXd& arm,
                            const Eigen::MatrixXd& covariates);

class FittedLearner {
 public:
  FittedLearner() = default;
  FittedLearner(LearnerSpec spec, std::vector<Term> terms, Eigen::VectorXd coefficients, Link link);

  const LearnerSpec& spec() const { return spec_; }
  const std::vector<Term>& terms() const { return terms_; }
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  Link link() const { return link_; }

  /// Set when the requested estimator failed and the Unadjusted fit stands in.
  bool fallback() const { return fallback_; }
  const std::string& note() const { return note_; }
  void mark_fallback(std::string note);
  void set_note(std::string note) { note_ = std::move(note); }

  /// E(Y | A, W), clipped to [1e-6, 1 - 1e-6].
  Eigen::VectorXd predict_outcome(const Eigen::VectorXd& arm, const Eigen::MatrixXd& covariates) const;
  double predict_outcome(int arm, const Eigen::Ref<const Eigen::RowVectorXd>& row) const;

  /// P(A = 1 | W), clipped to [0.01, 0.99].
  Eigen::VectorXd predict_pscore(const Eigen::MatrixXd& covariates) const;

  std::vector<std::string> describe_terms(const std::vector<std::string>& names) const;

 private:
  Eigen::VectorXd raw_predict(const Eigen::VectorXd& arm, const Eigen::MatrixXd& covariates) const;

  LearnerSpec spec_;
  std::vector<Term> terms_;
  Eigen::VectorXd coefficients_;
  Link link_ = Link::Identity;
  bool fallback_ = false;
  std::string note_;
};

/// Fits E(Y | A, W) on scaled outcomes. The arm is always in the model.
/// Never throws on numerical trouble: non-convergence yields the flagged
/// Unadjusted fallback.
FittedLearner fit_outcome_learner(const LearnerSpec& spec, const TrialDataset& data, std::uint64_t seed,
                                  const LearnerSettings& settings = {});

/// Fits P(A = 1 | W); predictions are clipped to [0.01, 0.99].
FittedLearner fit_pscore_learner(const LearnerSpec& spec, const TrialDataset& data, std::uint64_t seed,
                                 const LearnerSettings& settings = {});

/// Forward stepwise selection on AIC from the mandatory base model.
FittedLearner stepwise_fit(const TrialDataset& data, LearnerRole role, bool interactions);

/// L1-penalized logistic regression, lambda chosen by internal K-fold CV.
FittedLearner lasso_fit(const TrialDataset& data, LearnerRole role, std::uint64_t seed,
                        const LearnerSettings& settings = {});

/// Degree-1 MARS fitted by least squares, pruned by GCV.
FittedLearner mars_fit(const TrialDataset& data, LearnerRole role, bool screening,
                       const LearnerSettings& settings = {});

/// Covariate columns whose Pearson correlation with `response` has a
/// two-sided p-value below `threshold`.
std::vector<std::size_t> screen_covariates(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& response,
                                           double threshold);

namespace lasso {

inline double soft_threshold(double z, double lambda) {
  if (z > lambda) return z - lambda;
  if (z < -lambda) return z + lambda;
  return 0.0;
}

/// Cyclic coordinate descent for
///   (1/2) sum_i w_i (z_i - U_i gamma - X_i beta)^2 + lambda * |beta|_1.
/// `gamma` and `beta` are warm starts and hold the solution on return.
/// Returns the number of full sweeps.
int coordinate_descent(const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized,
                       const Eigen::VectorXd& z, const Eigen::VectorXd& w, double lambda,
                       Eigen::VectorXd& gamma, Eigen::VectorXd& beta, double tolerance = 1e-10,
                       int max_sweeps = 10000);

struct PathFit {
  Eigen::VectorXd gamma;  // unpenalized coefficients
  Eigen::VectorXd beta;   // penalized coefficients (standardized scale)
  bool converged = true;
};

/// Penalized logistic regression (objective: deviance / (2n) + lambda |beta|_1)
/// along a decreasing lambda sequence with warm starts.
std::vector<PathFit> logistic_path(const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized,
                                   const Eigen::VectorXd& y, const std::vector<double>& lambdas);

/// Smallest lambda at which all penalized coefficients are zero, given
/// standardized penalized columns.
double lambda_max(const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized,
                  const Eigen::VectorXd& y);

}  // namespace lasso

}  // namespace aptmle
