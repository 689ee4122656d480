#pragma once

#include "aptmle/config.hpp"
#include "aptmle/data.hpp"
#include "aptmle/learners.hpp"
#include "aptmle/tmle.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace aptmle {

/// Assignment of independent units to validation folds.
struct FoldAssignment {
  std::size_t folds = 0;
  bool cluster_level = false;
  std::vector<std::size_t> fold_of_unit;  // indexed by cluster or by row

  std::size_t fold_of_row(const TrialDataset& data, std::size_t row) const;
  std::vector<std::size_t> validation_rows(const TrialDataset& data, std::size_t fold) const;
  std::vector<std::size_t> training_rows(const TrialDataset& data, std::size_t fold) const;
};

/// Stratified (by arm) or plain V-fold assignment; leave-one-unit-out puts
/// each independent unit in its own fold. Each stratum is shuffled with the
/// seed and dealt round robin, treated units first. Fails with "fold lacks
/// arm support" when some training split misses an arm.
FoldAssignment make_folds(const TrialDataset& data, const ResolvedCv& cv, std::uint64_t seed);

struct CandidateScore {
  LearnerSpec spec;
  double cv_variance = 0.0;
  Eigen::VectorXd row_ic;    // validation IC of each row
  Eigen::VectorXd unit_ic;   // aggregated to independent units
  std::size_t fallback_folds = 0;
};

struct SelectionOptions {
  Estimand estimand = Estimand::ATE;
  std::uint64_t seed = 0;
  LearnerSettings learner_settings;
};

/// Cross-validated variance of the TMLE built from one (outcome, propensity)
/// pair: each training split fits, targets and estimates; the held-out
/// split contributes its influence curve values. The score is the mean
/// squared validation IC over independent units.
CandidateScore cv_score(const LearnerSpec& or_spec, const LearnerSpec& ps_spec, const TrialDataset& scaled,
                        const FoldAssignment& folds, const SelectionOptions& options);

/// Index of the lowest score. Ties favour the unadjusted candidate, then
/// list order. Non-finite scores never win against finite ones.
std::size_t select_best(const std::vector<CandidateScore>& scores);

struct Selection {
  LearnerSpec or_spec;
  LearnerSpec ps_spec;
  std::vector<CandidateScore> or_scores;
  std::vector<CandidateScore> ps_scores;
  ResolvedCv cv;
  FoldAssignment folds;
  VarianceKind variance_kind = VarianceKind::Standard;
  TargetedEstimate selected;    // natural scale
  TargetedEstimate unadjusted;  // natural scale, same variance kind
  double precision_gain = 0.0;
  OutcomeScale scale;
};

/// Two-stage selection: the outcome regression is chosen with an unadjusted
/// propensity score, then the propensity score is chosen with that outcome
/// regression fixed. The final TMLE refits the winners on all data.
Selection run_adaptive_prespec(const SapConfig& config, const TrialDataset& data);

/// var(unadjusted) / var(selected). Throws when the selected variance is 0.
double precision_gain(const TargetedEstimate& unadjusted, const TargetedEstimate& selected);

}  // namespace aptmle
