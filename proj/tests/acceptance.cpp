// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion names as
// arguments to run a subset.
#include "aptmle/config.hpp"
#include "aptmle/data.hpp"
#include "aptmle/error.hpp"
#include "aptmle/glm.hpp"
#include "aptmle/learners.hpp"
#include "aptmle/rng.hpp"
#include "aptmle/selection.hpp"
#include "aptmle/simulation.hpp"
#include "aptmle/stats.hpp"
#include "aptmle/tmle.hpp"

#include "helpers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace aptmle;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double value, int digits = 4) {
  std::ostringstream out;
  out.precision(digits);
  out << value;
  return out.str();
}

const LearnerSpec kUnadjOr = LearnerSpec::unadjusted(LearnerRole::OutcomeRegression);
const LearnerSpec kUnadjPs = LearnerSpec::unadjusted(LearnerRole::PropensityScore);

double arm_mean(const TrialDataset& data, int arm) {
  double sum = 0.0;
  double count = 0.0;
  for (Eigen::Index i = 0; i < data.arm().size(); ++i) {
    if (data.arm()(i) == arm) {
      sum += data.outcome()(i);
      count += 1.0;
    }
  }
  return sum / count;
}

// Random trial with varied size, arm balance and outcome type.
TrialDataset fuzz_trial(std::uint64_t seed, bool binary) {
  Rng rng(child_seed(seed, 1));
  testing::SyntheticTrial spec;
  spec.n = 30 + rng.below(171);
  spec.covariates = 1 + rng.below(4);
  spec.binary = binary;
  spec.arm_effect = rng.uniform(-0.5, 0.5);
  spec.signal = rng.uniform(0.0, 1.5);
  spec.treated_share = rng.uniform(0.35, 0.65);
  const TrialDataset data = testing::make_trial(spec, seed);
  if (binary) return data;
  // Strictly positive continuous outcomes keep the ratio estimand defined.
  return data.with_outcome((data.outcome().array() - data.outcome().minCoeff() + 0.5).matrix());
}

// Bounds strictly wider than the data, so the outcome clip never binds.
std::pair<double, double> loose_bounds(const TrialDataset& data) {
  return {0.0, data.outcome().maxCoeff() + 1.0};
}

// ---------------------------------------------------------------------------

Outcome unadjusted_reduction() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const bool binary = k % 2 == 0;
    const TrialDataset data = fuzz_trial(1000 + k, binary);
    SapConfig config;
    config.seed = k;
    if (!binary) config.outcome_bounds = loose_bounds(data);
    const double m1 = arm_mean(data, 1);
    const double m0 = arm_mean(data, 0);
    config.estimand = Estimand::ATE;
    worst = std::max(worst, std::abs(run_adaptive_prespec(config, data).selected.estimate - (m1 - m0)));
    config.estimand = Estimand::RR;
    worst = std::max(worst, std::abs(run_adaptive_prespec(config, data).selected.estimate - m1 / m0));
  }
  return {worst <= 1e-12, "50 datasets, max |difference| = " + fmt(worst)};
}

Outcome no_update_condition() {
  double worst_eps = 0.0;
  double worst_point = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const bool binary = k % 2 == 0;
    TrialDataset data = fuzz_trial(2000 + k, binary);
    if (!binary) data = scale_outcome(data, loose_bounds(data)).first;
    const GlmFit fit = fit_logistic(DesignMatrix{data.arm(), {"A"}}, data.outcome());
    if (!fit.converged) return {false, "arm-only logistic fit did not converge"};
    const FittedLearner outcome(kUnadjOr, {Term{Term::Type::Intercept}, Term{Term::Type::Arm}}, fit.coefficients,
                                Link::Logit);
    const Eigen::VectorXd g = fit_pscore_learner(kUnadjPs, data, 0).predict_pscore(data.covariates());
    const TargetedPredictions t = target(initial_predictions(outcome, data), g, data);
    worst_eps = std::max({worst_eps, std::abs(t.fluctuation.eps0), std::abs(t.fluctuation.eps1)});
    const PointEstimates p = point_estimates(t.treated, t.control, Estimand::ATE);
    worst_point = std::max(worst_point, std::abs(p.effect - (arm_mean(data, 1) - arm_mean(data, 0))));
  }
  return {worst_eps < 1e-6 && worst_point < 1e-8,
          "max |eps| = " + fmt(worst_eps) + ", max |TMLE - unadjusted| = " + fmt(worst_point)};
}

Outcome eic_solved() {
  const std::vector<std::string> outcome_learners{"glm(W1)", "glm(main_terms)", "stepwise", "stepwise_int",
                                                  "lasso", "mars", "mars_screen", "unadjusted"};
  const std::vector<std::string> pscore_learners{"unadjusted", "glm(W1)", "glm(main_terms)", "lasso"};
  double worst_mean = 0.0;
  double worst_score = 0.0;
  std::size_t targeted = 0;
  std::size_t skipped = 0;
  for (std::uint64_t k = 0; k < 200; ++k) {
    const bool binary = k % 3 != 0;
    TrialDataset data = fuzz_trial(3000 + k, binary);
    data = scale_outcome(data, std::nullopt).first;
    const auto or_spec = LearnerSpec::parse(outcome_learners[k % outcome_learners.size()],
                                            LearnerRole::OutcomeRegression);
    const auto ps_spec = LearnerSpec::parse(pscore_learners[(k / 2) % pscore_learners.size()],
                                            LearnerRole::PropensityScore);
    const FittedLearner outcome = fit_outcome_learner(or_spec, data, k);
    const Eigen::VectorXd g = fit_pscore_learner(ps_spec, data, k).predict_pscore(data.covariates());
    const TargetedPredictions t = target(initial_predictions(outcome, data), g, data);
    if (!t.fluctuation.converged) {
      ++skipped;
      continue;
    }
    ++targeted;
    const CleverCovariates h = CleverCovariates::from(data.arm(), g);
    Eigen::VectorXd fitted(data.arm().size());
    for (Eigen::Index i = 0; i < fitted.size(); ++i) fitted(i) = data.arm()(i) == 1.0 ? t.treated(i) : t.control(i);
    const Eigen::VectorXd residual = data.outcome() - fitted;
    worst_score = std::max({worst_score, std::abs(h.h1.dot(residual)), std::abs(h.h0.dot(residual))});
    const PointEstimates p = point_estimates(t.treated, t.control, Estimand::ATE);
    for (Estimand estimand : {Estimand::ATE, Estimand::RR}) {
      const Eigen::VectorXd ic =
          influence_curve(data.arm(), data.outcome(), t.treated, t.control, g, p.psi1, p.psi0, estimand);
      worst_mean = std::max(worst_mean, std::abs(ic.mean()));
    }
  }
  return {worst_mean < 1e-8 && worst_score < 1e-6 && targeted > 0,
          std::to_string(targeted) + " targeted fits (" + std::to_string(skipped) + " non-converged), max |mean IC| = " +
              fmt(worst_mean) + ", max |score| = " + fmt(worst_score)};
}

// Grid search followed by Newton steps on the offset binomial likelihood in
// (eps0, eps1).
Eigen::Vector2d brute_force_fluctuation(const Eigen::VectorXd& y, const Eigen::VectorXd& offset,
                                        const Eigen::VectorXd& h0, const Eigen::VectorXd& h1) {
  auto loglik = [&](const Eigen::Vector2d& e) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double p = expit(offset(i) + e(0) * h0(i) + e(1) * h1(i));
      ll += y(i) * std::log(p) + (1.0 - y(i)) * std::log(1.0 - p);
    }
    return ll;
  };
  Eigen::Vector2d best(0.0, 0.0);
  double best_ll = loglik(best);
  for (double e0 = -10.0; e0 <= 10.0; e0 += 0.05) {
    for (double e1 = -10.0; e1 <= 10.0; e1 += 0.05) {
      const Eigen::Vector2d e(e0, e1);
      const double ll = loglik(e);
      if (ll > best_ll) {
        best_ll = ll;
        best = e;
      }
    }
  }
  // Newton with step halving; the log-likelihood is concave.
  for (int iter = 0; iter < 200; ++iter) {
    Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    Eigen::Matrix2d hess = Eigen::Matrix2d::Zero();
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const Eigen::Vector2d x(h0(i), h1(i));
      const double p = expit(offset(i) + best.dot(x));
      grad += (y(i) - p) * x;
      hess -= p * (1.0 - p) * x * x.transpose();
    }
    Eigen::Vector2d step = hess.ldlt().solve(grad);
    while (step.norm() > 1e-300 && loglik(best - step) < best_ll) step /= 2.0;
    best -= step;
    best_ll = loglik(best);
    if (step.norm() < 1e-14) break;
  }
  return best;
}

Outcome fluctuation_oracle() {
  double worst = 0.0;
  std::size_t done = 0;
  for (std::uint64_t k = 0; done < 20 && k < 200; ++k) {
    Rng rng(child_seed(4000, k));
    const std::size_t n = 6 + rng.below(7);
    std::vector<Unit> units;
    const bool binary = k % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int arm = i < n / 2 ? 1 : 0;
      const double y = binary ? (rng.bernoulli(0.5) ? 1.0 : 0.0) : rng.uniform(0.05, 0.95);
      units.push_back(testing::unit("u" + std::to_string(i), arm, y, {rng.normal()}));
    }
    TrialDataset data;
    try {
      data = TrialDataset::from_units(units, {"W1"});
    } catch (const Error&) {
      continue;
    }
    // A binary arm without both outcome values has no finite maximizer.
    bool identifiable = true;
    for (int arm : {0, 1}) {
      double lo = 1.0;
      double hi = 0.0;
      for (Eigen::Index i = 0; i < data.arm().size(); ++i) {
        if (data.arm()(i) != arm) continue;
        lo = std::min(lo, data.outcome()(i));
        hi = std::max(hi, data.outcome()(i));
      }
      identifiable = identifiable && lo < 1.0 && hi > 0.0;
    }
    if (!identifiable) continue;
    InitialPredictions initial;
    initial.treated.resize(static_cast<Eigen::Index>(n));
    initial.control.resize(static_cast<Eigen::Index>(n));
    initial.observed.resize(static_cast<Eigen::Index>(n));
    Eigen::VectorXd g(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(n); ++i) {
      initial.treated(i) = rng.uniform(0.15, 0.85);
      initial.control(i) = rng.uniform(0.15, 0.85);
      initial.observed(i) = data.arm()(i) == 1.0 ? initial.treated(i) : initial.control(i);
      g(i) = rng.uniform(0.3, 0.7);
    }
    const TargetedPredictions t = target(initial, g, data);
    if (!t.fluctuation.converged) return {false, "fluctuation fit failed on an identifiable dataset"};
    const CleverCovariates h = CleverCovariates::from(data.arm(), g);
    Eigen::VectorXd offset(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < offset.size(); ++i) offset(i) = logit(initial.observed(i));
    const Eigen::Vector2d oracle = brute_force_fluctuation(data.outcome(), offset, h.h0, h.h1);
    worst = std::max({worst, std::abs(oracle(0) - t.fluctuation.eps0), std::abs(oracle(1) - t.fluctuation.eps1)});
    ++done;
  }
  return {done == 20 && worst < 1e-6, std::to_string(done) + " datasets, max |eps - oracle| = " + fmt(worst)};
}

Outcome variance_oracle() {
  double worst = 0.0;
  for (std::uint64_t k = 0; k < 50; ++k) {
    const bool binary = k % 2 == 0;
    const TrialDataset data = fuzz_trial(5000 + k, binary);
    std::optional<std::pair<double, double>> bounds;
    if (!binary) bounds = loose_bounds(data);
    const TargetedEstimate est = run_tmle(kUnadjOr, kUnadjPs, TmleOptions{}, data, bounds);
    // s_a^2 with the n_a denominator, inflated by n / (n - 1) to match the
    // (n - 1) variance of the influence curve.
    double oracle = 0.0;
    for (int arm : {0, 1}) {
      const double mean = arm_mean(data, arm);
      const double count = static_cast<double>(data.arm_count(arm));
      double ss = 0.0;
      for (Eigen::Index i = 0; i < data.arm().size(); ++i) {
        if (data.arm()(i) == arm) ss += (data.outcome()(i) - mean) * (data.outcome()(i) - mean);
      }
      oracle += (ss / count) / count;
    }
    const double n = static_cast<double>(data.size());
    oracle *= n / (n - 1.0);
    worst = std::max(worst, std::abs(est.variance() - oracle));
  }
  return {worst < 1e-10, "50 datasets, max |variance - two-sample formula| = " + fmt(worst)};
}

Outcome argmin_guarantee() {
  std::size_t violations = 0;
  std::size_t runs = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    const bool binary = k % 2 == 0;
    const TrialDataset data = fuzz_trial(6000 + k, binary);
    std::string covariates = "W1";
    for (std::size_t j = 1; j < data.num_covariates(); ++j) covariates += ", W" + std::to_string(j + 1);
    SapConfig config = SapConfig::parse(
        "or_candidates = unadjusted, glm(W1), glm(main_terms), stepwise, mars\n"
        "ps_candidates = unadjusted, glm(W1), glm(main_terms)\n"
        "covariates = " + covariates + "\n");
    config.seed = child_seed(6000, k);
    config.estimand = k % 4 == 1 ? Estimand::RR : Estimand::ATE;
    Selection sel;
    try {
      sel = run_adaptive_prespec(config, data);
    } catch (const Error& e) {
      return {false, std::string("analysis failed: ") + e.what()};
    }
    ++runs;
    double selected_or = 0.0;
    double unadjusted_or = 0.0;
    double selected_pair = 0.0;
    for (const auto& s : sel.or_scores) {
      if (s.spec == sel.or_spec) selected_or = s.cv_variance;
      if (s.spec.is_unadjusted()) unadjusted_or = s.cv_variance;
    }
    for (const auto& s : sel.ps_scores) {
      if (s.spec == sel.ps_spec) selected_pair = s.cv_variance;
    }
    if (!(selected_or <= unadjusted_or)) ++violations;
    if (!(selected_pair <= selected_or)) ++violations;
  }
  return {violations == 0, std::to_string(runs) + " analyses, " + std::to_string(violations) + " violations"};
}

Outcome selector_power() {
  // Y = 0.3 A + W1 + U(-sqrt(3), sqrt(3)): W1 explains half of the variance.
  const DgpSpec dgp = DgpSpec::parse(
      "n = 500\noutcome = continuous\nnoise = 1.7320508075688772\n"
      "covariates = W1:normal(0,1), W2:normal(0,1), W3:bernoulli(0.5)\n"
      "terms = A:0.3, W1:1\n");
  const SapConfig config = SapConfig::parse(
      "or_candidates = unadjusted, glm(W1), glm(W2), glm(W3), glm(main_terms), stepwise\n"
      "ps_candidates = unadjusted, glm(W1), glm(W2)\n"
      "covariates = W1, W2, W3\n");
  const SimResult result = run_parametric_sim(dgp, config, 200, 7000);
  std::size_t nesting = 0;
  for (const auto& [spec, count] : result.or_selections) {
    if (spec == "glm(W1)" || spec == "glm(main_terms)" || spec == "stepwise") nesting += count;
  }
  const std::size_t ok = result.reps - result.failures;
  const double share = static_cast<double>(nesting) / static_cast<double>(ok);
  return {share >= 0.90 && result.mean_precision_gain > 1.2 && result.relative_precision > 1.2,
          "W1-nesting learner chosen in " + fmt(100.0 * share, 3) + "% of " + std::to_string(ok) +
              " seeds, mean precision gain " + fmt(result.mean_precision_gain) + ", MSE ratio " +
              fmt(result.relative_precision)};
}

const char* kBinaryCovariates = "covariates = W1:normal(0,1), W2:uniform(0,1), W3:bernoulli(0.4)\n";
const char* kSimCandidates =
    "or_candidates = unadjusted, glm(W1), glm(W2), glm(W3), glm(main_terms), stepwise\n"
    "ps_candidates = unadjusted, glm(W1), glm(W2)\n"
    "covariates = W1, W2, W3\n";

Outcome type_one_error() {
  const DgpSpec dgp = DgpSpec::parse(std::string("n = 200\noutcome = binary\n") + kBinaryCovariates +
                                     "intercept = -0.3\nterms = A:0, W1:0.8, W3:0.5\n");
  const SapConfig config = SapConfig::parse(kSimCandidates);
  const SimResult result = run_parametric_sim(dgp, config, 1000, 8000);
  const std::size_t ok = result.reps - result.failures;
  const auto [lo, hi] = binomial_acceptance_band(ok, 0.05);
  const double rate = result.adaptive.rejection_rate;
  const bool sim_pass = result.failures == 0 && rate >= lo && rate <= hi;

  const TrialDataset data = generate_trial(dgp, child_seed(8001, 0));
  SapConfig perm_config = config;
  perm_config.seed = 8001;
  const PermutationResult perm = run_permutation_check(data, perm_config, 500, 8002);
  const bool perm_pass = perm.failures == 0 && perm.ci_lo <= 0.05;
  return {sim_pass && perm_pass,
          "rejection rate " + fmt(rate) + " over " + std::to_string(ok) + " replicates (band [" + fmt(lo) + ", " +
              fmt(hi) + "]); permutation rate " + fmt(perm.rate) + " [" + fmt(perm.ci_lo) + ", " + fmt(perm.ci_hi) +
              "] over " + std::to_string(perm.replicates)};
}

Outcome coverage() {
  const DgpSpec dgp = DgpSpec::parse(std::string("n = 200\noutcome = binary\n") + kBinaryCovariates +
                                     "intercept = -0.3\nterms = A:0.6, W1:0.8, W3:0.5, A*W1:0.3\n"
                                     "oracle_draws = 10000000\n");
  const SapConfig config = SapConfig::parse(kSimCandidates);
  const SimResult result = run_parametric_sim(dgp, config, 1000, 9000);
  const double cov = result.adaptive.coverage;
  return {result.failures == 0 && cov >= 0.93 && cov <= 0.975,
          "true ATE " + fmt(result.truth.value, 6) + " (" + result.truth.method + "), coverage " + fmt(cov) +
              " over " + std::to_string(result.reps - result.failures) + " replicates, power " +
              fmt(result.adaptive.rejection_rate) + " vs unadjusted " + fmt(result.unadjusted.rejection_rate)};
}

Outcome cluster_handling() {
  testing::SyntheticTrial spec;
  spec.n = 96;
  spec.clusters = 16;
  spec.binary = false;
  const TrialDataset data = testing::make_trial(spec, 10);
  SapConfig config = SapConfig::parse(
      "or_candidates = unadjusted, glm(W1), glm(main_terms)\nps_candidates = unadjusted, glm(W2)\n"
      "covariates = W1, W2, W3\ncv = loo\n");
  const Selection sel = run_adaptive_prespec(config, data);
  bool whole = sel.folds.cluster_level && sel.folds.folds == 16;
  std::vector<std::set<std::size_t>> folds_of_cluster(data.num_clusters());
  for (std::size_t i = 0; i < data.size(); ++i) {
    folds_of_cluster[data.independent_unit_of(i)].insert(sel.folds.fold_of_row(data, i));
  }
  for (const auto& f : folds_of_cluster) whole = whole && f.size() == 1;
  const bool sixteen = sel.selected.n_independent_units == 16 && sel.selected.ic_cluster &&
                       sel.selected.ic_cluster->size() == 16 &&
                       std::abs(sel.selected.se - std::sqrt(sample_variance(*sel.selected.ic_cluster) / 16.0)) <
                           1e-12 * std::max(1.0, sel.selected.se);

  // Singleton clusters versus the same trial analysed individually.
  testing::SyntheticTrial flat;
  flat.n = 120;
  flat.binary = false;
  const TrialDataset individual = testing::make_trial(flat, 11);
  std::vector<Unit> units;
  for (std::size_t i = 0; i < individual.size(); ++i) {
    Unit u = individual.unit(i);
    u.cluster_id = "k" + std::to_string(i);
    units.push_back(u);
  }
  const TrialDataset singletons = TrialDataset::from_units(units, individual.covariate_names());
  SapConfig vfold = config;
  vfold.cv = CvScheme{};
  bool identical = true;
  for (const SapConfig& c : {config, vfold}) {
    const Selection a = run_adaptive_prespec(c, individual);
    const Selection b = run_adaptive_prespec(c, singletons);
    identical = identical && a.selected.estimate == b.selected.estimate && a.selected.se == b.selected.se &&
                a.or_spec == b.or_spec && a.ps_spec == b.ps_spec && a.unadjusted.se == b.unadjusted.se;
  }
  return {whole && sixteen && identical, std::string("clusters kept whole: ") + (whole ? "yes" : "no") +
                                             ", 16 cluster-level ICs: " + (sixteen ? "yes" : "no") +
                                             ", singleton clusters identical: " + (identical ? "yes" : "no")};
}

Outcome learner_oracles() {
  // LASSO: orthonormal design, no unpenalized block, unit weights.
  Rng rng(11000);
  const Eigen::Index n = 40;
  const Eigen::Index p = 5;
  Eigen::MatrixXd raw(n, p);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < p; ++j) raw(i, j) = rng.normal();
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(raw).householderQ() * Eigen::MatrixXd::Identity(n, p);
  Eigen::VectorXd z(n);
  for (Eigen::Index i = 0; i < n; ++i) z(i) = rng.normal();
  double lasso_worst = 0.0;
  for (double lambda : {0.0, 0.1, 0.5, 1.0, 3.0}) {
    Eigen::VectorXd gamma(0);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
    lasso::coordinate_descent(Eigen::MatrixXd(n, 0), q, z, Eigen::VectorXd::Ones(n), lambda, gamma, beta);
    for (Eigen::Index j = 0; j < p; ++j) {
      lasso_worst = std::max(lasso_worst, std::abs(beta(j) - lasso::soft_threshold(q.col(j).dot(z), lambda)));
    }
  }

  // Stepwise: first addition against an exhaustive single-term AIC search.
  std::size_t step_checked = 0;
  std::size_t step_agree = 0;
  for (std::uint64_t k = 0; k < 10; ++k) {
    testing::SyntheticTrial spec;
    spec.n = 150;
    spec.covariates = 3;
    spec.signal = 0.3 + 0.1 * static_cast<double>(k);
    const TrialDataset data = testing::make_trial(spec, 11100 + k);
    const FittedLearner stepped = stepwise_fit(data, LearnerRole::OutcomeRegression, true);
    const auto aic_of = [&](const Eigen::MatrixXd& columns) {
      Eigen::MatrixXd x(data.size(), 1 + columns.cols());
      x.col(0) = data.arm();
      x.rightCols(columns.cols()) = columns;
      const GlmFit fit = fit_logistic(DesignMatrix{x, {}}, data.outcome());
      return fit.deviance + 2.0 * static_cast<double>(std::count(fit.aliased.begin(), fit.aliased.end(), false));
    };
    double best = aic_of(Eigen::MatrixXd(data.size(), 0));
    int best_index = -1;
    for (Eigen::Index j = 0; j < data.covariates().cols(); ++j) {
      const double value = aic_of(data.covariates().col(j));
      if (value < best) {
        best = value;
        best_index = static_cast<int>(j);
      }
    }
    ++step_checked;
    const bool added = stepped.terms().size() > 2;
    if (best_index < 0) {
      step_agree += !added;
    } else if (added) {
      const Term& first = stepped.terms()[2];
      step_agree += first.type == Term::Type::Main && first.first == static_cast<std::size_t>(best_index);
    }
  }

  // MARS on a noiseless linear truth.
  std::vector<Unit> units;
  Rng mars_rng(11200);
  for (int i = 0; i < 100; ++i) {
    const double w1 = mars_rng.uniform();
    units.push_back(testing::unit(std::to_string(i), i % 2, 0.3 + 0.2 * w1, {w1, mars_rng.normal()}));
  }
  const TrialDataset linear = TrialDataset::from_units(units, {"W1", "W2"});
  const FittedLearner mars = mars_fit(linear, LearnerRole::OutcomeRegression, false);
  const double mars_worst =
      (mars.predict_outcome(linear.arm(), linear.covariates()) - linear.outcome()).cwiseAbs().maxCoeff();

  return {lasso_worst < 1e-8 && step_agree == step_checked && mars_worst < 1e-6,
          "lasso max |beta - soft threshold| = " + fmt(lasso_worst) + "; stepwise first step agrees " +
              std::to_string(step_agree) + "/" + std::to_string(step_checked) + "; MARS max |fit - truth| = " +
              fmt(mars_worst)};
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::string without_timestamps(const std::string& text) {
  static const std::regex iso(R"(\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}(\.\d+)?Z)");
  return std::regex_replace(text, iso, "<timestamp>");
}

Outcome reproducible_reports() {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / ("aptmle_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const DgpSpec dgp = DgpSpec::parse(std::string("n = 150\nclusters = 30\ncluster_sd = 0.3\n") + kBinaryCovariates +
                                     "terms = A:0.4, W1:0.8\n");
  const TrialDataset data = generate_trial(dgp, 12000);
  {
    std::ofstream csv(dir / "trial.csv");
    csv.precision(17);
    csv << "id,A,Y,village,W1,W2,W3\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Unit u = data.unit(i);
      csv << u.id << "," << u.arm << "," << u.outcome << "," << u.cluster_id.value_or("") << ","
          << u.covariates[0] << "," << u.covariates[1] << "," << u.covariates[2] << "\n";
    }
    std::ofstream sap(dir / "sap.txt");
    sap << kSimCandidates << "cluster_column = village\nseed = 2024\n";
  }
  std::vector<std::string> bodies;
  for (const char* run : {"first", "second"}) {
    const fs::path out = dir / run;
    const std::string command = std::string("\"") + APTMLE_CLI_PATH + "\" analyze -c \"" +
                                (dir / "sap.txt").string() + "\" -d \"" + (dir / "trial.csv").string() + "\" -o \"" +
                                out.string() + "\" 2>/dev/null";
    if (std::system(command.c_str()) != 0) return {false, "cli run failed: " + command};
    bodies.push_back(read_file(out.string() + ".json") + read_file(out.string() + ".txt"));
  }
  const bool stamped = bodies[0].find("\"timestamp\"") != std::string::npos;
  const bool same = without_timestamps(bodies[0]) == without_timestamps(bodies[1]);
  fs::remove_all(dir);
  return {stamped && same, std::string("two CLI runs ") + (same ? "byte-identical" : "differ") +
                               " outside the timestamp (" + std::to_string(bodies[0].size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"unadjusted_reduction", unadjusted_reduction},
      {"no_update_condition", no_update_condition},
      {"eic_solved", eic_solved},
      {"fluctuation_oracle", fluctuation_oracle},
      {"variance_oracle", variance_oracle},
      {"argmin_guarantee", argmin_guarantee},
      {"selector_power", selector_power},
      {"type_one_error", type_one_error},
      {"coverage", coverage},
      {"cluster_handling", cluster_handling},
      {"learner_oracles", learner_oracles},
      {"reproducible_reports", reproducible_reports},
  };
  const std::set<std::string> wanted(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome result;
    try {
      result = check();
    } catch (const std::exception& e) {
      result = {false, std::string("threw: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (result.pass ? "PASS " : "FAIL ") << name << ": " << result.detail << " [" << fmt(seconds, 3)
              << " s]" << std::endl;
    failures += !result.pass;
  }
  return failures == 0 ? 0 : 1;
}
