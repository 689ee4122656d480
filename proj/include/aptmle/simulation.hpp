#pragma once

#include "aptmle/config.hpp"
#include "aptmle/data.hpp"
#include "aptmle/rng.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace aptmle {

struct CovariateGenerator {
  enum class Family { Normal, Uniform, Bernoulli };
  std::string name;
  Family family = Family::Normal;
  double a = 0.0;  // normal mean, uniform lower, bernoulli p
  double b = 1.0;  // normal sd, uniform upper

  double draw(Rng& rng) const;
  double mean() const;
  double second_moment() const;
  std::string to_string() const;
  bool operator==(const CovariateGenerator&) const = default;
};

// Coefficient on a main effect ("W1", "A") or a pairwise product ("A*W1", "W1*W2").
struct LinearTerm {
  std::string first;
  std::optional<std::string> second;
  double coefficient = 0.0;
  bool operator==(const LinearTerm&) const = default;
};

enum class OutcomeFamily { Binary, Continuous };

/// Parametric data-generating process. Text format follows the SAP config:
///
///   n             = 200
///   clusters      = 0          # >0: cluster-randomized with equal sizes
///   cluster_sd    = 0          # sd of a normal cluster effect on the linear predictor
///   treat_prob    = 0.5        # share of (clusters or units) treated, exact
///   outcome       = binary | continuous
///   noise         = 1          # continuous: uniform(-noise, noise) error
///   covariates    = W1:normal(0,1), W2:uniform(0,1), W3:bernoulli(0.3)
///   intercept     = 0
///   terms         = A:0.5, W1:1, A*W1:0.2
///   true_effect   = auto | <number>
///   oracle_draws  = 10000000
struct DgpSpec {
  std::size_t n = 200;
  std::size_t clusters = 0;
  double cluster_sd = 0.0;
  double treat_prob = 0.5;
  OutcomeFamily outcome = OutcomeFamily::Binary;
  double noise = 1.0;
  std::vector<CovariateGenerator> covariates;
  double intercept = 0.0;
  std::vector<LinearTerm> terms;
  std::optional<double> declared_true_effect;
  std::size_t oracle_draws = 10'000'000;

  static DgpSpec parse(const std::string& text);
  static DgpSpec load(const std::string& path);
  std::string to_text() const;
  void validate() const;

  /// Linear predictor for one unit given its arm, covariates and cluster effect.
  double linear_predictor(int arm, const std::vector<double>& w, double cluster_effect) const;

  bool operator==(const DgpSpec&) const = default;
};

struct TrueEffect {
  double value = 0.0;
  double psi1 = 0.0;
  double psi0 = 0.0;
  std::string method;  // "declared", "analytic" or "monte_carlo"
};

/// Counterfactual arm means and the estimand contrast. Continuous outcomes
/// are exact; binary outcomes average expit over oracle_draws draws.
TrueEffect true_effect(const DgpSpec& dgp, Estimand estimand, std::uint64_t seed);

TrialDataset generate_trial(const DgpSpec& dgp, std::uint64_t seed);

struct EstimatorSummary {
  std::string name;
  std::size_t replicates = 0;
  double mean_estimate = 0.0;
  double bias = 0.0;
  double empirical_variance = 0.0;  // 1/R denominator
  double mean_estimated_variance = 0.0;
  double mse = 0.0;
  double coverage = 0.0;
  double rejection_rate = 0.0;
  double rejection_ci_lo = 0.0;
  double rejection_ci_hi = 0.0;
};

struct ReplicateRecord {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  std::string or_spec;
  std::string ps_spec;
  double adaptive_estimate = 0.0;
  double adaptive_se = 0.0;
  bool adaptive_rejects = false;
  bool adaptive_covers = false;
  double unadjusted_estimate = 0.0;
  double unadjusted_se = 0.0;
  bool unadjusted_rejects = false;
  bool unadjusted_covers = false;
  double precision_gain = 0.0;
};

struct SimResult {
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::uint64_t seed = 0;
  Estimand estimand = Estimand::ATE;
  double alpha = 0.05;
  TrueEffect truth;
  EstimatorSummary adaptive;
  EstimatorSummary unadjusted;
  double relative_precision = 0.0;    // MSE(unadjusted) / MSE(adaptive)
  double mean_precision_gain = 0.0;   // average of per-replicate estimated gains
  double sample_size_savings = 0.0;
  std::map<std::string, std::size_t> or_selections;
  std::map<std::string, std::size_t> ps_selections;
  std::vector<ReplicateRecord> records;
};

/// Replicate r draws its data and folds from child_seed(seed, r).
SimResult run_parametric_sim(const DgpSpec& dgp, const SapConfig& config, std::size_t reps, std::uint64_t seed);

struct PermutationResult {
  std::size_t reps_requested = 0;
  std::size_t replicates = 0;
  std::size_t failures = 0;
  std::size_t rejections = 0;
  bool exhaustive = false;
  bool cluster_level = false;
  std::size_t independent_units = 0;
  std::size_t treated_units = 0;
  double rate = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 1.0;
  std::vector<double> estimates;
};

/// Treatment-blind check: arm labels are permuted across independent units
/// (clusters as blocks), preserving the number treated, and the full adaptive
/// analysis is rerun. When the number of distinct assignments does not exceed
/// reps, every assignment is enumerated once instead.
PermutationResult run_permutation_check(const TrialDataset& data, const SapConfig& config, std::size_t reps,
                                        std::uint64_t seed);

/// 1 - mse_adjusted / mse_unadjusted.
double sample_size_savings(double mse_adjusted, double mse_unadjusted);

/// Number of ways to choose k of n, saturating at `cap`.
std::uint64_t count_assignments(std::size_t n, std::size_t k, std::uint64_t cap);

}  // namespace aptmle
