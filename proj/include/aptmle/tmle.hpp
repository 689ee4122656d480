#pragma once

#include "aptmle/data.hpp"
#include "aptmle/learners.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <utility>

namespace aptmle {

// Inverse-propensity indicators used as regressors in the fluctuation.
struct CleverCovariates {
  Eigen::VectorXd h1;  // 1{A=1} / g
  Eigen::VectorXd h0;  // 1{A=0} / (1 - g)
  Eigen::VectorXd pscore;

  static CleverCovariates from(const Eigen::VectorXd& arm, const Eigen::VectorXd& pscore);
};

struct Fluctuation {
  double eps0 = 0.0;
  double eps1 = 0.0;
  bool converged = true;
};

struct InitialPredictions {
  Eigen::VectorXd observed;  // under the arm actually received
  Eigen::VectorXd treated;   // everyone set to A=1
  Eigen::VectorXd control;   // everyone set to A=0
};

struct TargetedPredictions {
  Fluctuation fluctuation;
  Eigen::VectorXd treated;
  Eigen::VectorXd control;
};

struct TargetedEstimate {
  Estimand estimand = Estimand::ATE;
  double psi1 = 0.0;
  double psi0 = 0.0;
  double effect_abs = 0.0;
  double effect_rel = 0.0;
  // Effect on the estimand's own scale (difference for ATE, ratio for RR).
  double estimate = 0.0;
  // For RR the standard error is on the log scale.
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  Eigen::VectorXd ic;
  std::optional<Eigen::VectorXd> ic_cluster;
  std::size_t n_independent_units = 0;

  Fluctuation fluctuation;
  bool or_fallback = false;
  bool ps_fallback = false;

  double variance() const { return se * se; }
  bool excludes(double null_value) const { return null_value < ci_lo || null_value > ci_hi; }
};

InitialPredictions initial_predictions(const FittedLearner& outcome_learner,
                                       const TrialDataset& data);

/// Logistic fluctuation of Y on (h0, h1) without intercept, offset
/// logit(observed prediction). Falls back to eps = (0, 0) when the
/// fluctuation fit does not converge.
TargetedPredictions target(const InitialPredictions& initial, const Eigen::VectorXd& pscore,
                           const TrialDataset& data);

/// Applies a fitted fluctuation to new predictions.
std::pair<Eigen::VectorXd, Eigen::VectorXd> apply_fluctuation(const Fluctuation& fluctuation,
                                                               const InitialPredictions& initial,
                                                               const Eigen::VectorXd& pscore);

struct PointEstimates {
  double psi1 = 0.0;
  double psi0 = 0.0;
  double effect = 0.0;
};

PointEstimates point_estimates(const Eigen::VectorXd& treated, const Eigen::VectorXd& control,
                               Estimand estimand);

/// Per-unit influence curve of the estimand: ic1 - ic0 for ATE, and
/// ic1/psi1 - ic0/psi0 (log scale) for RR.
Eigen::VectorXd influence_curve(const Eigen::VectorXd& arm, const Eigen::VectorXd& outcome,
                                const Eigen::VectorXd& treated, const Eigen::VectorXd& control,
                                const Eigen::VectorXd& pscore, double psi1, double psi0,
                                Estimand estimand);

/// Cluster-level influence curve: (J/n) * sum of member ICs for each cluster.
Eigen::VectorXd cluster_aggregate(const Eigen::VectorXd& ic, const TrialDataset& data);

struct WaldResult {
  double estimate = 0.0;
  double se = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

/// se = sqrt(var(ic) / n_units) with the (n-1) sample variance. With
/// `relative`, psi is a log effect and the estimate and interval are
/// exponentiated back (se stays on the log scale).
WaldResult wald_inference(double psi, const Eigen::VectorXd& ic, std::size_t n_units, double alpha,
                          bool relative);

/// Inference from an influence curve, aggregating to clusters when needed.
/// Returns the effective IC (cluster-level when clustered) alongside.
struct IcInference {
  WaldResult wald;
  Eigen::VectorXd effective_ic;
  std::size_t n_units = 0;
};
IcInference infer_from_ic(double effect, const Eigen::VectorXd& ic, const TrialDataset& data,
                          double alpha, Estimand estimand);

struct TmleOptions {
  Estimand estimand = Estimand::ATE;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  LearnerSettings learner_settings;
};

/// TMLE on scaled data for one (outcome regression, propensity) pair. The
/// result stays on the scaled outcome; callers unscale.
TargetedEstimate run_tmle_scaled(const LearnerSpec& or_spec, const LearnerSpec& ps_spec,
                                 const TmleOptions& options, const TrialDataset& scaled);

/// Full composition: scale, fit, target, infer, unscale.
TargetedEstimate run_tmle(const LearnerSpec& or_spec, const LearnerSpec& ps_spec,
                          const TmleOptions& options, const TrialDataset& data,
                          const std::optional<std::pair<double, double>>& bounds = std::nullopt);

}  // namespace aptmle
