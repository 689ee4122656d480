#include "aptmle/report.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <sstream>

namespace aptmle {

using Json = nlohmann::ordered_json;

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buffer[32];
  std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buffer;
}

namespace {

Json number(double value) { return std::isfinite(value) ? Json(value) : Json(nullptr); }

std::string stamp(const ReportMeta& meta) { return meta.timestamp.empty() ? utc_timestamp() : meta.timestamp; }

Json settings_json(const LearnerSettings& s) {
  return Json{{"screen_p", s.screen_p},
              {"mars_max_terms", s.mars_max_terms},
              {"mars_penalty", s.mars_penalty},
              {"mars_max_knots", s.mars_max_knots},
              {"mars_min_r2_gain", s.mars_min_r2_gain},
              {"lasso_path_length", s.lasso_path_length},
              {"lasso_min_ratio", s.lasso_min_ratio},
              {"lasso_folds", s.lasso_folds}};
}

Json config_json(const SapConfig& c) {
  Json or_list = Json::array();
  Json ps_list = Json::array();
  for (const auto& s : c.or_candidates) or_list.push_back(s.to_string());
  for (const auto& s : c.ps_candidates) ps_list.push_back(s.to_string());
  Json j{{"estimand", to_string(c.estimand)},
         {"or_candidates", or_list},
         {"ps_candidates", ps_list},
         {"cv", to_string(c.cv.kind)},
         {"cv_folds", c.cv.folds},
         {"cv_stratify", c.cv.stratify_by_arm},
         {"cv_unit", to_string(c.cv.unit)},
         {"variance", to_string(c.variance_kind)},
         {"seed", c.seed},
         {"alpha", c.alpha}};
  j["outcome_bounds"] = c.outcome_bounds ? Json::array({c.outcome_bounds->first, c.outcome_bounds->second}) : Json(nullptr);
  j["schema"] = Json{{"id_column", c.schema.id_column},
                     {"arm_column", c.schema.arm_column},
                     {"outcome_column", c.schema.outcome_column},
                     {"cluster_column", c.schema.cluster_column ? Json(*c.schema.cluster_column) : Json(nullptr)},
                     {"covariates", c.schema.covariates},
                     {"categorical", c.schema.categorical}};
  j["learner_settings"] = settings_json(c.learners);
  return j;
}

Json estimate_json(const TargetedEstimate& e) {
  return Json{{"estimand", to_string(e.estimand)},
              {"estimate", number(e.estimate)},
              {"se", number(e.se)},
              {"se_scale", e.estimand == Estimand::RR ? "log" : "natural"},
              {"variance", number(e.variance())},
              {"ci_lower", number(e.ci_lo)},
              {"ci_upper", number(e.ci_hi)},
              {"psi1", number(e.psi1)},
              {"psi0", number(e.psi0)},
              {"risk_difference", number(e.effect_abs)},
              {"risk_ratio", number(e.effect_rel)},
              {"independent_units", e.n_independent_units},
              {"eps0", number(e.fluctuation.eps0)},
              {"eps1", number(e.fluctuation.eps1)},
              {"fluctuation_converged", e.fluctuation.converged},
              {"or_fallback", e.or_fallback},
              {"ps_fallback", e.ps_fallback}};
}

Json scores_json(const std::vector<CandidateScore>& scores) {
  Json out = Json::array();
  for (const auto& s : scores) {
    out.push_back(Json{{"candidate", s.spec.to_string()},
                       {"cv_variance", number(s.cv_variance)},
                       {"fallback_folds", s.fallback_folds}});
  }
  return out;
}

Json data_json(const TrialDataset& data) {
  return Json{{"fingerprint_sha256", data.fingerprint()},
              {"rows", data.size()},
              {"treated", data.arm_count(1)},
              {"control", data.arm_count(0)},
              {"clusters", data.has_clusters() ? Json(data.num_clusters()) : Json(nullptr)},
              {"cluster_randomized", data.cluster_randomized()},
              {"independent_units", data.num_independent_units()},
              {"covariate_columns", data.covariate_names()}};
}

std::string fixed(double value, int digits = 4) {
  if (!std::isfinite(value)) return "NA";
  char buffer[64];
  std::snprintf(buffer, sizeof buffer, "%.*f", digits, value);
  return buffer;
}

std::string percent(double value) { return fixed(100.0 * value, 1) + "%"; }

}  // namespace

std::string analysis_report_json(const Selection& sel, const SapConfig& config, const TrialDataset& data,
                                 const ReportMeta& meta) {
  Json j;
  j["report"] = "analysis";
  j["timestamp"] = stamp(meta);
  j["tool_version"] = kToolVersion;
  j["seed"] = config.seed;
  j["seed_override"] = meta.seed_override;
  j["config_text"] = config.to_text();
  j["config"] = config_json(config);
  j["data"] = data_json(data);
  j["outcome_scale"] = Json{{"kind", sel.scale.kind == OutcomeKind::Binary ? "binary" : "bounded_continuous"},
                            {"lower", sel.scale.lower},
                            {"upper", sel.scale.upper}};
  Json folds = Json::array();
  for (std::size_t f : sel.folds.fold_of_unit) folds.push_back(f);
  j["cross_validation"] = Json{{"scheme", to_string(sel.cv.kind)},
                               {"folds", sel.cv.folds},
                               {"stratified_by_arm", sel.cv.stratify_by_arm},
                               {"unit", sel.cv.cluster_level ? "cluster" : "individual"},
                               {"performed", sel.folds.folds > 0},
                               {"fold_of_unit", folds}};
  j["selection"] = Json{{"stage1_propensity", "unadjusted"},
                        {"outcome_regression", sel.or_spec.to_string()},
                        {"propensity_score", sel.ps_spec.to_string()},
                        {"or_scores", scores_json(sel.or_scores)},
                        {"ps_scores", scores_json(sel.ps_scores)}};
  j["variance_kind"] = to_string(sel.variance_kind);
  j["estimate"] = estimate_json(sel.selected);
  j["unadjusted"] = estimate_json(sel.unadjusted);
  j["precision_gain"] = number(sel.precision_gain);
  return j.dump(2) + "\n";
}

std::string analysis_summary(const Selection& sel, const SapConfig& config, const TrialDataset& data,
                             const ReportMeta& meta) {
  const TargetedEstimate& e = sel.selected;
  const TargetedEstimate& u = sel.unadjusted;
  const int level = static_cast<int>(std::lround(100.0 * (1.0 - config.alpha)));
  std::ostringstream out;
  out << "Adaptive pre-specification TMLE analysis\n";
  out << "Generated " << stamp(meta) << " by " << kToolVersion << ", seed " << config.seed
      << (meta.seed_override ? " (overridden on the command line)" : "") << "\n";
  out << "Data SHA-256: " << (data.fingerprint().empty() ? "n/a" : data.fingerprint()) << "\n\n";
  out << data.size() << " participants (" << data.arm_count(1) << " intervention, " << data.arm_count(0)
      << " control)";
  if (data.has_clusters()) out << " in " << data.num_clusters() << " clusters";
  out << ".\n";
  std::string scheme;
  if (sel.cv.kind == CvKind::LeaveOneUnitOut) {
    scheme = sel.cv.cluster_level ? "leave-one-cluster-out" : "leave-one-out";
  } else {
    scheme = std::to_string(sel.cv.folds) + "-fold" + (sel.cv.cluster_level ? " with clusters kept whole" : "");
  }
  if (sel.folds.folds == 0) scheme = "not needed (unadjusted candidates only)";
  out << "Cross-validation: " << scheme << ".\n\n";
  out << "Outcome regression candidates (cross-validated variance):\n";
  for (const auto& s : sel.or_scores) {
    out << "  " << (s.spec == sel.or_spec ? "* " : "  ") << s.spec.to_string() << "  " << fixed(s.cv_variance, 6) << "\n";
  }
  out << "Propensity score candidates, with the selected outcome regression:\n";
  for (const auto& s : sel.ps_scores) {
    out << "  " << (s.spec == sel.ps_spec ? "* " : "  ") << s.spec.to_string() << "  " << fixed(s.cv_variance, 6) << "\n";
  }
  out << "\nSelected outcome regression: " << sel.or_spec.to_string() << "\n";
  out << "Selected propensity score: " << sel.ps_spec.to_string() << "\n";
  const std::string name = e.estimand == Estimand::ATE ? "Risk difference" : "Risk ratio";
  out << name << " (TMLE): " << fixed(e.estimate) << " (" << level << "% CI " << fixed(e.ci_lo) << " to "
      << fixed(e.ci_hi) << ")\n";
  out << name << " (unadjusted): " << fixed(u.estimate) << " (" << level << "% CI " << fixed(u.ci_lo) << " to "
      << fixed(u.ci_hi) << ")\n";
  out << "Arm means (TMLE): intervention " << fixed(e.psi1) << ", control " << fixed(e.psi0) << "\n";
  out << "Variance estimation: " << to_string(sel.variance_kind) << "\n";
  out << "Precision gain over the unadjusted estimator: " << fixed(sel.precision_gain, 2) << "\n";
  if (e.or_fallback || e.ps_fallback || !e.fluctuation.converged) {
    out << "Warnings:";
    if (e.or_fallback) out << " outcome regression fell back to unadjusted;";
    if (e.ps_fallback) out << " propensity score fell back to unadjusted;";
    if (!e.fluctuation.converged) out << " targeting step did not converge;";
    out << "\n";
  }
  return out.str();
}

std::string simulation_report_json(const SimResult& r, const DgpSpec& dgp, const SapConfig& config,
                                   const ReportMeta& meta) {
  const auto summary = [](const EstimatorSummary& s) {
    return Json{{"estimator", s.name},
                {"replicates", s.replicates},
                {"mean_estimate", number(s.mean_estimate)},
                {"bias", number(s.bias)},
                {"empirical_variance", number(s.empirical_variance)},
                {"mean_estimated_variance", number(s.mean_estimated_variance)},
                {"mse", number(s.mse)},
                {"coverage", number(s.coverage)},
                {"rejection_rate", number(s.rejection_rate)},
                {"rejection_ci", Json::array({number(s.rejection_ci_lo), number(s.rejection_ci_hi)})}};
  };
  Json j;
  j["report"] = "simulation";
  j["timestamp"] = stamp(meta);
  j["tool_version"] = kToolVersion;
  j["seed"] = r.seed;
  j["seed_override"] = meta.seed_override;
  j["seed_derivation"] = "replicate r uses child_seed(seed, r) for data, folds and learners";
  j["dgp_text"] = dgp.to_text();
  j["config_text"] = config.to_text();
  j["config"] = config_json(config);
  j["reps"] = r.reps;
  j["failures"] = r.failures;
  j["true_effect"] = Json{{"value", number(r.truth.value)},
                          {"psi1", number(r.truth.psi1)},
                          {"psi0", number(r.truth.psi0)},
                          {"method", r.truth.method}};
  j["adaptive"] = summary(r.adaptive);
  j["unadjusted"] = summary(r.unadjusted);
  j["relative_precision"] = number(r.relative_precision);
  j["mean_precision_gain"] = number(r.mean_precision_gain);
  j["sample_size_savings"] = number(r.sample_size_savings);
  j["or_selections"] = r.or_selections;
  j["ps_selections"] = r.ps_selections;
  Json records = Json::array();
  for (const auto& rec : r.records) {
    Json row{{"replicate", rec.index}, {"seed", rec.seed}, {"failed", rec.failed}};
    if (rec.failed) {
      row["error"] = rec.error;
    } else {
      row["or_spec"] = rec.or_spec;
      row["ps_spec"] = rec.ps_spec;
      row["adaptive_estimate"] = number(rec.adaptive_estimate);
      row["adaptive_se"] = number(rec.adaptive_se);
      row["adaptive_rejects"] = rec.adaptive_rejects;
      row["adaptive_covers"] = rec.adaptive_covers;
      row["unadjusted_estimate"] = number(rec.unadjusted_estimate);
      row["unadjusted_se"] = number(rec.unadjusted_se);
      row["precision_gain"] = number(rec.precision_gain);
    }
    records.push_back(row);
  }
  j["replicates"] = records;
  return j.dump(2) + "\n";
}

std::string simulation_summary(const SimResult& r, const ReportMeta& meta) {
  std::ostringstream out;
  out << "Parametric simulation, " << r.reps << " replicates (" << r.failures << " failed)\n";
  out << "Generated " << stamp(meta) << " by " << kToolVersion << ", seed " << r.seed
      << (meta.seed_override ? " (overridden on the command line)" : "") << "\n\n";
  out << "True " << to_string(r.estimand) << ": " << fixed(r.truth.value, 6) << " (" << r.truth.method << ")\n\n";
  for (const EstimatorSummary* s : {&r.adaptive, &r.unadjusted}) {
    out << s->name << ": bias " << fixed(s->bias, 5) << ", empirical variance " << fixed(s->empirical_variance, 6)
        << ", mean estimated variance " << fixed(s->mean_estimated_variance, 6) << ", MSE " << fixed(s->mse, 6)
        << ", coverage " << percent(s->coverage) << ", rejection " << percent(s->rejection_rate) << " (95% CI "
        << percent(s->rejection_ci_lo) << " to " << percent(s->rejection_ci_hi) << ")\n";
  }
  out << "\nRelative precision (MSE unadjusted / MSE adaptive): " << fixed(r.relative_precision, 3) << "\n";
  out << "Mean estimated precision gain: " << fixed(r.mean_precision_gain, 3) << "\n";
  out << "Sample size savings: " << percent(r.sample_size_savings) << "\n";
  out << "Selected outcome regressions:";
  for (const auto& [spec, n] : r.or_selections) out << " " << spec << " (" << n << ")";
  out << "\nSelected propensity scores:";
  for (const auto& [spec, n] : r.ps_selections) out << " " << spec << " (" << n << ")";
  out << "\n";
  return out.str();
}

std::string permutation_report_json(const PermutationResult& r, const SapConfig& config, const TrialDataset& data,
                                    const ReportMeta& meta) {
  Json j;
  j["report"] = "permutation";
  j["timestamp"] = stamp(meta);
  j["tool_version"] = kToolVersion;
  j["seed"] = config.seed;
  j["seed_override"] = meta.seed_override;
  j["config_text"] = config.to_text();
  j["config"] = config_json(config);
  j["data"] = data_json(data);
  j["mode"] = r.exhaustive ? "exhaustive" : "random";
  j["permutation_unit"] = r.cluster_level ? "cluster" : "individual";
  j["independent_units"] = r.independent_units;
  j["treated_units"] = r.treated_units;
  j["reps_requested"] = r.reps_requested;
  j["replicates"] = r.replicates;
  j["failures"] = r.failures;
  j["rejections"] = r.rejections;
  j["rejection_rate"] = number(r.rate);
  j["rejection_ci"] = Json::array({number(r.ci_lo), number(r.ci_hi)});
  Json estimates = Json::array();
  for (double e : r.estimates) estimates.push_back(number(e));
  j["estimates"] = estimates;
  return j.dump(2) + "\n";
}

std::string permutation_summary(const PermutationResult& r, const ReportMeta& meta) {
  std::ostringstream out;
  out << "Treatment-blind permutation check\n";
  out << "Generated " << stamp(meta) << " by " << kToolVersion << "\n\n";
  out << "Arm labels permuted across " << r.independent_units << (r.cluster_level ? " clusters" : " participants")
      << " (" << r.treated_units << " treated), "
      << (r.exhaustive ? "all distinct assignments enumerated" : "random permutations") << ".\n";
  out << r.replicates << " analyses (" << r.failures << " failed), " << r.rejections << " rejected the null.\n";
  out << "Rejection rate " << percent(r.rate) << " (95% CI " << percent(r.ci_lo) << " to " << percent(r.ci_hi) << ")\n";
  return out.str();
}

}  // namespace aptmle
