#include "aptmle/tmle.hpp"

#include "aptmle/error.hpp"
#include "aptmle/glm.hpp"
#include "aptmle/stats.hpp"

#include <cmath>

namespace aptmle {

CleverCovariates CleverCovariates::from(const Eigen::VectorXd& arm, const Eigen::VectorXd& pscore) {
  if (arm.size() != pscore.size()) fail(ErrorCode::InvalidArgument, "arm and propensity lengths differ");
  CleverCovariates h;
  h.pscore = pscore;
  h.h1.resize(arm.size());
  h.h0.resize(arm.size());
  for (Eigen::Index i = 0; i < arm.size(); ++i) {
    const bool treated = arm(i) == 1.0;
    h.h1(i) = treated ? 1.0 / pscore(i) : 0.0;
    h.h0(i) = treated ? 0.0 : 1.0 / (1.0 - pscore(i));
  }
  return h;
}

InitialPredictions initial_predictions(const FittedLearner& outcome_learner, const TrialDataset& data) {
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  InitialPredictions out;
  out.treated = outcome_learner.predict_outcome(Eigen::VectorXd::Ones(n), data.covariates());
  out.control = outcome_learner.predict_outcome(Eigen::VectorXd::Zero(n), data.covariates());
  out.observed.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.observed(i) = data.arm()(i) == 1.0 ? out.treated(i) : out.control(i);
  }
  return out;
}

namespace {

Eigen::VectorXd shift(const Eigen::VectorXd& prediction, double eps, const Eigen::VectorXd& divisor) {
  if (eps == 0.0) return prediction;
  Eigen::VectorXd out(prediction.size());
  for (Eigen::Index i = 0; i < prediction.size(); ++i) {
    out(i) = expit(logit(prediction(i)) + eps / divisor(i));
  }
  return out;
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::VectorXd> apply_fluctuation(const Fluctuation& fluctuation,
                                                               const InitialPredictions& initial,
                                                               const Eigen::VectorXd& pscore) {
  const Eigen::VectorXd control_prob = Eigen::VectorXd::Ones(pscore.size()) - pscore;
  return {shift(initial.treated, fluctuation.eps1, pscore), shift(initial.control, fluctuation.eps0, control_prob)};
}

TargetedPredictions target(const InitialPredictions& initial, const Eigen::VectorXd& pscore,
                           const TrialDataset& data) {
  const Eigen::Index n = static_cast<Eigen::Index>(data.size());
  if (initial.observed.size() != n || initial.treated.size() != n || initial.control.size() != n ||
      pscore.size() != n) {
    fail(ErrorCode::InvalidArgument, "targeting inputs must all have one entry per unit");
  }
  const CleverCovariates h = CleverCovariates::from(data.arm(), pscore);
  DesignMatrix design;
  design.values.resize(n, 2);
  design.values.col(0) = h.h0;
  design.values.col(1) = h.h1;
  design.column_names = {"h0", "h1"};
  GlmOptions options;
  options.intercept = false;
  options.offset.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) options.offset(i) = logit(initial.observed(i));

  const GlmFit fit = fit_logistic(design, data.outcome(), options);
  TargetedPredictions out;
  if (fit.converged) {
    out.fluctuation = {fit.coefficients(0), fit.coefficients(1), true};
  } else {
    out.fluctuation = {0.0, 0.0, false};
  }
  std::tie(out.treated, out.control) = apply_fluctuation(out.fluctuation, initial, pscore);
  return out;
}

PointEstimates point_estimates(const Eigen::VectorXd& treated, const Eigen::VectorXd& control, Estimand estimand) {
  if (treated.size() != control.size() || treated.size() == 0) {
    fail(ErrorCode::InvalidArgument, "targeted prediction vectors must be non-empty and equal length");
  }
  PointEstimates out;
  out.psi1 = treated.mean();
  out.psi0 = control.mean();
  if (estimand == Estimand::ATE) {
    out.effect = out.psi1 - out.psi0;
  } else {
    if (out.psi0 < 1e-12) fail(ErrorCode::Numeric, "relative effect undefined");
    out.effect = out.psi1 / out.psi0;
  }
  return out;
}

Eigen::VectorXd influence_curve(const Eigen::VectorXd& arm, const Eigen::VectorXd& outcome,
                                const Eigen::VectorXd& treated, const Eigen::VectorXd& control,
                                const Eigen::VectorXd& pscore, double psi1, double psi0, Estimand estimand) {
  const Eigen::Index n = arm.size();
  if (outcome.size() != n || treated.size() != n || control.size() != n || pscore.size() != n) {
    fail(ErrorCode::InvalidArgument, "influence curve inputs must all have one entry per unit");
  }
  if (estimand == Estimand::RR && (psi1 <= 0.0 || psi0 <= 0.0)) {
    fail(ErrorCode::Numeric, "relative effect needs positive arm means");
  }
  const CleverCovariates h = CleverCovariates::from(arm, pscore);
  Eigen::VectorXd ic(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ic1 = h.h1(i) * (outcome(i) - treated(i)) + treated(i) - psi1;
    const double ic0 = h.h0(i) * (outcome(i) - control(i)) + control(i) - psi0;
    ic(i) = estimand == Estimand::ATE ? ic1 - ic0 : ic1 / psi1 - ic0 / psi0;
  }
  return ic;
}

Eigen::VectorXd cluster_aggregate(const Eigen::VectorXd& ic, const TrialDataset& data) {
  if (!data.has_clusters()) fail(ErrorCode::InvalidArgument, "cluster aggregation needs cluster ids");
  if (ic.size() != static_cast<Eigen::Index>(data.size())) {
    fail(ErrorCode::InvalidArgument, "influence curve length does not match the data");
  }
  const std::size_t clusters = data.num_clusters();
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(clusters));
  for (std::size_t i = 0; i < data.size(); ++i) {
    sums(static_cast<Eigen::Index>(data.independent_unit_of(i))) += ic(static_cast<Eigen::Index>(i));
  }
  const double weight = static_cast<double>(clusters) / static_cast<double>(data.size());
  return weight == 1.0 ? sums : Eigen::VectorXd(sums * weight);
}

WaldResult wald_inference(double psi, const Eigen::VectorXd& ic, std::size_t n_units, double alpha, bool relative) {
  if (n_units < 2) fail(ErrorCode::InvalidArgument, "inference needs at least two independent units");
  if (static_cast<std::size_t>(ic.size()) != n_units) {
    fail(ErrorCode::InvalidArgument, "influence curve length must equal the number of independent units");
  }
  const double se = std::sqrt(sample_variance(ic) / static_cast<double>(n_units));
  const double z = normal_critical(alpha);
  WaldResult out;
  out.se = se;
  out.estimate = psi;
  out.ci_lo = psi - z * se;
  out.ci_hi = psi + z * se;
  if (relative) {
    out.estimate = std::exp(psi);
    out.ci_lo = std::exp(out.ci_lo);
    out.ci_hi = std::exp(out.ci_hi);
  }
  return out;
}

IcInference infer_from_ic(double effect, const Eigen::VectorXd& ic, const TrialDataset& data, double alpha,
                          Estimand estimand) {
  IcInference out;
  if (data.has_clusters()) {
    out.effective_ic = cluster_aggregate(ic, data);
  } else {
    out.effective_ic = ic;
  }
  out.n_units = static_cast<std::size_t>(out.effective_ic.size());
  const bool relative = estimand == Estimand::RR;
  out.wald = wald_inference(relative ? std::log(effect) : effect, out.effective_ic, out.n_units, alpha, relative);
  if (relative) out.wald.estimate = effect;
  return out;
}

TargetedEstimate run_tmle_scaled(const LearnerSpec& or_spec, const LearnerSpec& ps_spec, const TmleOptions& options,
                                 const TrialDataset& scaled) {
  const FittedLearner outcome = fit_outcome_learner(or_spec, scaled, options.seed, options.learner_settings);
  const InitialPredictions initial = initial_predictions(outcome, scaled);
  const FittedLearner propensity = fit_pscore_learner(ps_spec, scaled, options.seed, options.learner_settings);
  const Eigen::VectorXd pscore = propensity.predict_pscore(scaled.covariates());
  const TargetedPredictions targeted = target(initial, pscore, scaled);
  const PointEstimates point = point_estimates(targeted.treated, targeted.control, options.estimand);

  TargetedEstimate est;
  est.estimand = options.estimand;
  est.psi1 = point.psi1;
  est.psi0 = point.psi0;
  est.effect_abs = point.psi1 - point.psi0;
  est.effect_rel = point.psi0 > 0.0 ? point.psi1 / point.psi0 : std::nan("");
  est.ic = influence_curve(scaled.arm(), scaled.outcome(), targeted.treated, targeted.control, pscore, point.psi1,
                           point.psi0, options.estimand);
  const IcInference inference = infer_from_ic(point.effect, est.ic, scaled, options.alpha, options.estimand);
  if (scaled.has_clusters()) est.ic_cluster = inference.effective_ic;
  est.n_independent_units = inference.n_units;
  est.estimate = inference.wald.estimate;
  est.se = inference.wald.se;
  est.ci_lo = inference.wald.ci_lo;
  est.ci_hi = inference.wald.ci_hi;
  est.fluctuation = targeted.fluctuation;
  est.or_fallback = outcome.fallback();
  est.ps_fallback = propensity.fallback();
  return est;
}

TargetedEstimate run_tmle(const LearnerSpec& or_spec, const LearnerSpec& ps_spec, const TmleOptions& options,
                          const TrialDataset& data, const std::optional<std::pair<double, double>>& bounds) {
  const auto [scaled, scale] = scale_outcome(data, bounds);
  return unscale_effect(run_tmle_scaled(or_spec, ps_spec, options, scaled), scale, options.estimand);
}

}  // namespace aptmle
