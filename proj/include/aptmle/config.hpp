#pragma once

#include "aptmle/data.hpp"
#include "aptmle/learners.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace aptmle {

enum class CvKind { Auto, VFold, LeaveOneUnitOut };
enum class CvUnit { Auto, Individual, Cluster };
enum class VarianceKind { Standard, CrossValidated };

std::string to_string(CvKind kind);
std::string to_string(CvUnit unit);
std::string to_string(VarianceKind kind);

struct CvScheme {
  CvKind kind = CvKind::Auto;
  int folds = 10;
  bool stratify_by_arm = true;
  CvUnit unit = CvUnit::Auto;

  bool operator==(const CvScheme&) const = default;
};

// Auto resolution: leave-one-unit-out at or below this many independent
// units, otherwise 10-fold.
inline constexpr std::size_t kLeaveOneOutMaxUnits = 40;

/// The locked Statistical Analysis Plan.
///
/// Text format: one `key = value` per line, `#` starts a comment, list
/// values are comma separated. Keys:
///
///   estimand          ATE | RR
///   or_candidates     learner list, must contain `unadjusted`
///   ps_candidates     learner list, must contain `unadjusted`
///   cv                auto | loo | vfold
///   cv_folds          integer >= 2 (vfold)
///   cv_stratify       true | false
///   cv_unit           auto | individual | cluster
///   variance          standard | cross_validated
///   seed              unsigned 64-bit integer
///   outcome_bounds    lower, upper     (optional)
///   alpha             in (0, 1)
///   id_column, arm_column, outcome_column, cluster_column
///   covariates        column list
///   categorical       subset of covariates to one-hot encode
///   screen_p, mars_max_terms, mars_penalty, mars_max_knots,
///   mars_min_r2_gain, lasso_path_length, lasso_min_ratio, lasso_folds
struct SapConfig {
  Estimand estimand = Estimand::ATE;
  std::vector<LearnerSpec> or_candidates{LearnerSpec::unadjusted(LearnerRole::OutcomeRegression)};
  std::vector<LearnerSpec> ps_candidates{LearnerSpec::unadjusted(LearnerRole::PropensityScore)};
  CvScheme cv;
  VarianceKind variance_kind = VarianceKind::Standard;
  std::uint64_t seed = 1;
  std::optional<std::pair<double, double>> outcome_bounds;
  double alpha = 0.05;
  CsvSchema schema;
  LearnerSettings learners;

  /// Throws Error(Config) naming the violated requirement.
  void validate() const;

  static SapConfig parse(const std::string& text);
  static SapConfig load(const std::string& path);
  /// Canonical text form; parse(to_text()) reproduces the config exactly.
  std::string to_text() const;

  bool operator==(const SapConfig&) const = default;
};

/// Bounds used for outcome scaling. For RR on a continuous outcome without
/// declared bounds the lower bound is pinned at 0.
std::optional<std::pair<double, double>> effective_bounds(const SapConfig& config, const TrialDataset& data);

struct ResolvedCv {
  CvKind kind = CvKind::VFold;  // never Auto
  std::size_t folds = 10;
  bool stratify_by_arm = true;
  bool cluster_level = false;
};

ResolvedCv resolve_cv(const CvScheme& scheme, const TrialDataset& data);

/// Shared key/value reader used by the SAP and simulation files.
struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};
std::vector<KeyValue> read_key_values(const std::string& text);
std::vector<std::string> split_list(const std::string& value);
std::string read_text_file(const std::string& path);
std::string format_double(double value);

}  // namespace aptmle
