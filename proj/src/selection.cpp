#include "aptmle/selection.hpp"

#include "aptmle/error.hpp"
#include "aptmle/rng.hpp"
#include "aptmle/stats.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <limits>

namespace aptmle {

std::size_t FoldAssignment::fold_of_row(const TrialDataset& data, std::size_t row) const {
  return fold_of_unit[cluster_level ? data.independent_unit_of(row) : row];
}

std::vector<std::size_t> FoldAssignment::validation_rows(const TrialDataset& data, std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (fold_of_row(data, i) == fold) rows.push_back(i);
  }
  return rows;
}

std::vector<std::size_t> FoldAssignment::training_rows(const TrialDataset& data, std::size_t fold) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (fold_of_row(data, i) != fold) rows.push_back(i);
  }
  return rows;
}

FoldAssignment make_folds(const TrialDataset& data, const ResolvedCv& cv, std::uint64_t seed) {
  FoldAssignment out;
  out.cluster_level = cv.cluster_level;
  const std::size_t units = cv.cluster_level ? data.num_clusters() : data.size();

  // Arm of each unit; a cluster spanning both arms gets -1 and forms its own stratum.
  std::vector<int> unit_arm(units, -2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t u = cv.cluster_level ? data.independent_unit_of(i) : i;
    const int a = static_cast<int>(data.arm()(static_cast<Eigen::Index>(i)));
    unit_arm[u] = unit_arm[u] == -2 || unit_arm[u] == a ? a : -1;
  }

  if (cv.kind == CvKind::LeaveOneUnitOut) {
    out.folds = units;
    out.fold_of_unit.resize(units);
    for (std::size_t u = 0; u < units; ++u) out.fold_of_unit[u] = u;
  } else {
    if (cv.folds < 2) fail(ErrorCode::Config, "at least two folds are required");
    if (cv.folds > units) fail(ErrorCode::Config, "more folds than independent units");
    out.folds = cv.folds;
    out.fold_of_unit.assign(units, 0);
    Rng rng(seed);
    std::vector<std::vector<std::size_t>> strata;
    if (cv.stratify_by_arm) {
      strata.resize(3);
      for (std::size_t u = 0; u < units; ++u) {
        strata[unit_arm[u] == 1 ? 0 : unit_arm[u] == 0 ? 1 : 2].push_back(u);
      }
    } else {
      strata.resize(1);
      for (std::size_t u = 0; u < units; ++u) strata[0].push_back(u);
    }
    std::size_t slot = 0;
    for (auto& stratum : strata) {
      rng.shuffle(stratum);
      for (std::size_t u : stratum) out.fold_of_unit[u] = slot++ % out.folds;
    }
  }

  // Every training split needs both arms.
  std::vector<std::array<std::size_t, 2>> per_fold(out.folds, {0, 0});
  std::array<std::size_t, 2> total{0, 0};
  for (std::size_t i = 0; i < data.size(); ++i) {
    const int a = static_cast<int>(data.arm()(static_cast<Eigen::Index>(i)));
    ++per_fold[out.fold_of_row(data, i)][a];
    ++total[a];
  }
  for (std::size_t v = 0; v < out.folds; ++v) {
    if (total[0] - per_fold[v][0] < 2 || total[1] - per_fold[v][1] < 2) {
      fail(ErrorCode::Data, "fold lacks arm support: fold " + std::to_string(v) +
                                " leaves a training split with fewer than two units in an arm; reduce V");
    }
  }
  return out;
}

namespace {

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  return out;
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

}  // namespace

CandidateScore cv_score(const LearnerSpec& or_spec, const LearnerSpec& ps_spec, const TrialDataset& scaled,
                        const FoldAssignment& folds, const SelectionOptions& options) {
  CandidateScore score;
  const Eigen::Index n = static_cast<Eigen::Index>(scaled.size());
  score.row_ic = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());

  for (std::size_t v = 0; v < folds.folds; ++v) {
    const std::vector<std::size_t> valid = folds.validation_rows(scaled, v);
    if (valid.empty()) continue;
    const TrialDataset train = scaled.subset(folds.training_rows(scaled, v));

    const FittedLearner outcome = fit_outcome_learner(or_spec, train, options.seed, options.learner_settings);
    const FittedLearner propensity = fit_pscore_learner(ps_spec, train, options.seed, options.learner_settings);
    if (outcome.fallback() || propensity.fallback()) ++score.fallback_folds;

    const InitialPredictions train_initial = initial_predictions(outcome, train);
    const Eigen::VectorXd train_pscore = propensity.predict_pscore(train.covariates());
    const TargetedPredictions targeted = target(train_initial, train_pscore, train);
    const PointEstimates psi = point_estimates(targeted.treated, targeted.control, options.estimand);

    const Eigen::VectorXd arm = gather(scaled.arm(), valid);
    const Eigen::VectorXd y = gather(scaled.outcome(), valid);
    const Eigen::MatrixXd w = gather_rows(scaled.covariates(), valid);
    const Eigen::Index m = arm.size();
    InitialPredictions valid_initial;
    valid_initial.treated = outcome.predict_outcome(Eigen::VectorXd::Ones(m), w);
    valid_initial.control = outcome.predict_outcome(Eigen::VectorXd::Zero(m), w);
    valid_initial.observed = (arm.array() == 1.0).select(valid_initial.treated, valid_initial.control);
    const Eigen::VectorXd valid_pscore = propensity.predict_pscore(w);
    const auto [treated, control] = apply_fluctuation(targeted.fluctuation, valid_initial, valid_pscore);

    const Eigen::VectorXd ic =
        influence_curve(arm, y, treated, control, valid_pscore, psi.psi1, psi.psi0, options.estimand);
    for (std::size_t k = 0; k < valid.size(); ++k) {
      score.row_ic(static_cast<Eigen::Index>(valid[k])) = ic(static_cast<Eigen::Index>(k));
    }
  }

  score.unit_ic = scaled.has_clusters() ? cluster_aggregate(score.row_ic, scaled) : score.row_ic;
  score.cv_variance = score.unit_ic.squaredNorm() / static_cast<double>(score.unit_ic.size());
  return score;
}

std::size_t select_best(const std::vector<CandidateScore>& scores) {
  if (scores.empty()) fail(ErrorCode::InvalidArgument, "no candidates to select from");
  const auto key = [&](std::size_t i) {
    const double s = scores[i].cv_variance;
    return std::isfinite(s) ? s : std::numeric_limits<double>::infinity();
  };
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scores.size(); ++i) lowest = std::min(lowest, key(i));
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (key(i) != lowest) continue;
    if (scores[i].spec.is_unadjusted()) return i;
    if (!best) best = i;
  }
  return *best;
}

double precision_gain(const TargetedEstimate& unadjusted, const TargetedEstimate& selected) {
  const double denominator = selected.variance();
  if (!(denominator > 0.0)) fail(ErrorCode::Numeric, "precision gain undefined: selected variance is zero");
  return unadjusted.variance() / denominator;
}

namespace {

// Replaces standard-error based inference with the cross-validated IC.
void apply_cv_variance(TargetedEstimate& est, const CandidateScore& score, double alpha) {
  const double units = static_cast<double>(score.unit_ic.size());
  est.se = std::sqrt(score.cv_variance / units);
  const double z = normal_critical(alpha);
  if (est.estimand == Estimand::RR) {
    const double log_effect = std::log(est.estimate);
    est.ci_lo = std::exp(log_effect - z * est.se);
    est.ci_hi = std::exp(log_effect + z * est.se);
  } else {
    est.ci_lo = est.estimate - z * est.se;
    est.ci_hi = est.estimate + z * est.se;
  }
}

}  // namespace

Selection run_adaptive_prespec(const SapConfig& config, const TrialDataset& data) {
  config.validate();
  for (const auto* list : {&config.or_candidates, &config.ps_candidates}) {
    for (const auto& spec : *list) {
      if (spec.kind == LearnerKind::Glm && !data.find_covariate(spec.covariate)) {
        fail(ErrorCode::Config, "unknown covariate '" + spec.covariate + "' in candidate " + spec.to_string());
      }
    }
  }

  Selection out;
  const auto [scaled, scale] = scale_outcome(data, effective_bounds(config, data));
  out.scale = scale;
  out.cv = resolve_cv(config.cv, scaled);
  out.variance_kind = config.variance_kind;

  const SelectionOptions options{config.estimand, config.seed, config.learners};
  const LearnerSpec unadjusted_ps = LearnerSpec::unadjusted(LearnerRole::PropensityScore);
  const LearnerSpec unadjusted_or = LearnerSpec::unadjusted(LearnerRole::OutcomeRegression);

  // With nothing to choose and no cross-validated variance requested, the
  // folds would only produce unused scores; tiny trials may not even admit them.
  const auto only_unadjusted = [](const std::vector<LearnerSpec>& list) {
    return std::all_of(list.begin(), list.end(), [](const LearnerSpec& s) { return s.is_unadjusted(); });
  };
  const bool needs_cv = !only_unadjusted(config.or_candidates) || !only_unadjusted(config.ps_candidates) ||
                        config.variance_kind == VarianceKind::CrossValidated;
  if (needs_cv) out.folds = make_folds(scaled, out.cv, config.seed);

  for (const auto& spec : config.or_candidates) {
    CandidateScore s;
    if (needs_cv) {
      s = cv_score(spec, unadjusted_ps, scaled, out.folds, options);
    } else {
      s.cv_variance = std::numeric_limits<double>::quiet_NaN();
    }
    s.spec = spec;
    out.or_scores.push_back(std::move(s));
  }
  const std::size_t or_best = select_best(out.or_scores);
  out.or_spec = out.or_scores[or_best].spec;

  for (const auto& spec : config.ps_candidates) {
    CandidateScore s;
    if (spec.is_unadjusted()) {
      s = out.or_scores[or_best];
    } else {
      s = cv_score(out.or_spec, spec, scaled, out.folds, options);
    }
    s.spec = spec;
    out.ps_scores.push_back(std::move(s));
  }
  const std::size_t ps_best = select_best(out.ps_scores);
  out.ps_spec = out.ps_scores[ps_best].spec;

  const TmleOptions tmle_options{config.estimand, config.alpha, config.seed, config.learners};
  TargetedEstimate selected = run_tmle_scaled(out.or_spec, out.ps_spec, tmle_options, scaled);
  TargetedEstimate unadjusted = run_tmle_scaled(unadjusted_or, unadjusted_ps, tmle_options, scaled);

  if (config.variance_kind == VarianceKind::CrossValidated) {
    apply_cv_variance(selected, out.ps_scores[ps_best], config.alpha);
    const CandidateScore* baseline = nullptr;
    for (const auto& s : out.or_scores) {
      if (s.spec.is_unadjusted()) baseline = &s;
    }
    apply_cv_variance(unadjusted, *baseline, config.alpha);
  }

  out.selected = unscale_effect(selected, scale, config.estimand);
  out.unadjusted = unscale_effect(unadjusted, scale, config.estimand);
  out.precision_gain = precision_gain(out.unadjusted, out.selected);
  return out;
}

}  // namespace aptmle
