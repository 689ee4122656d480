#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace aptmle {

enum class Estimand { ATE, RR };

std::string to_string(Estimand estimand);

// One trial participant. Covariates follow the dataset's covariate_names.
struct Unit {
  std::string id;
  std::optional<std::string> cluster_id;
  int arm = 0;
  double outcome = 0.0;
  std::vector<double> covariates;
};

// Columns produced from one declared covariate. A numeric covariate maps to
// a single column; a categorical one to its non-reference indicator columns.
struct CovariateGroup {
  std::string name;
  std::vector<std::size_t> columns;
};

struct CsvSchema {
  std::string id_column = "id";
  std::string arm_column = "A";
  std::string outcome_column = "Y";
  std::optional<std::string> cluster_column;
  std::vector<std::string> covariates;
  std::vector<std::string> categorical;

  bool operator==(const CsvSchema&) const = default;
};

class TrialDataset {
 public:
  TrialDataset() = default;

  /// Validates and builds a dataset. Requires at least two units per arm,
  /// binary arms, finite values, unique ids, and either all or no cluster ids.
  static TrialDataset from_units(const std::vector<Unit>& units,
                                 std::vector<std::string> covariate_names,
                                 std::vector<CovariateGroup> groups = {});

  std::size_t size() const { return ids_.size(); }
  std::size_t num_covariates() const { return static_cast<std::size_t>(covariates_.cols()); }

  const std::vector<std::string>& ids() const { return ids_; }
  const Eigen::VectorXd& arm() const { return arm_; }
  const Eigen::VectorXd& outcome() const { return outcome_; }
  const Eigen::MatrixXd& covariates() const { return covariates_; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }
  const std::vector<CovariateGroup>& covariate_groups() const { return groups_; }

  /// Column indices matching a group name or a single expanded column name.
  std::optional<std::vector<std::size_t>> find_covariate(const std::string& name) const;

  bool has_clusters() const { return has_clusters_; }
  /// True when every cluster lies entirely within one arm.
  bool cluster_randomized() const { return cluster_randomized_; }
  const std::vector<std::string>& cluster_ids() const { return cluster_ids_; }
  std::size_t num_clusters() const { return cluster_ids_.size(); }

  /// Independent units are clusters when clustered, otherwise rows. Indices
  /// follow first appearance in row order.
  std::size_t num_independent_units() const;
  std::size_t independent_unit_of(std::size_t row) const;

  std::size_t arm_count(int arm) const;

  Unit unit(std::size_t row) const;

  /// Rows in the given order; cluster indices are renumbered by first appearance.
  TrialDataset subset(const std::vector<std::size_t>& rows) const;
  TrialDataset with_outcome(Eigen::VectorXd outcome) const;
  TrialDataset with_arm(const Eigen::VectorXd& arm) const;
  TrialDataset without_clusters() const;

  /// SHA-256 of the source file when loaded from disk, empty otherwise.
  const std::string& fingerprint() const { return fingerprint_; }
  void set_fingerprint(std::string fingerprint) { fingerprint_ = std::move(fingerprint); }

 private:
  void index_clusters(const std::vector<std::string>& row_cluster_ids);

  std::vector<std::string> ids_;
  Eigen::VectorXd arm_;
  Eigen::VectorXd outcome_;
  Eigen::MatrixXd covariates_;
  std::vector<std::string> covariate_names_;
  std::vector<CovariateGroup> groups_;

  bool has_clusters_ = false;
  bool cluster_randomized_ = false;
  std::vector<std::string> cluster_ids_;
  std::vector<std::size_t> cluster_of_;

  std::string fingerprint_;
};

/// Reads a header-bearing CSV. Categorical covariates are expanded into
/// indicator columns named "var=level", levels sorted lexicographically with
/// the first dropped as reference. Missing values are rejected.
TrialDataset load_csv(const std::string& path, const CsvSchema& schema);
TrialDataset parse_csv(const std::string& text, const CsvSchema& schema);

enum class OutcomeKind { Binary, BoundedContinuous };

struct OutcomeScale {
  double lower = 0.0;
  double upper = 1.0;
  OutcomeKind kind = OutcomeKind::Binary;

  double range() const { return upper - lower; }
  double to_unit(double y) const { return (y - lower) / (upper - lower); }
  double from_unit(double y) const { return lower + y * (upper - lower); }
};

/// Scaled continuous outcomes are clipped into [kOutcomeClip, 1 - kOutcomeClip].
inline constexpr double kOutcomeClip = 1e-6;

/// Maps outcomes onto [0,1]. Binary 0/1 outcomes pass through untouched.
/// Without bounds, the observed range of the pooled sample is used.
std::pair<TrialDataset, OutcomeScale> scale_outcome(
    const TrialDataset& data, const std::optional<std::pair<double, double>>& bounds);

struct TargetedEstimate;

/// Moves an estimate computed on scaled outcomes back to the natural scale.
TargetedEstimate unscale_effect(const TargetedEstimate& estimate, const OutcomeScale& scale,
                                Estimand estimand);

std::string sha256_hex(const std::string& bytes);

}  // namespace aptmle
