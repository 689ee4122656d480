#include "aptmle/learners.hpp"

#include "aptmle/error.hpp"
#include "aptmle/glm.hpp"
#include "aptmle/rng.hpp"
#include "aptmle/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

namespace aptmle {

namespace {

std::string trim_text(const std::string& text) {
  const auto first = text.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  const auto last = text.find_last_not_of(" \t");
  return text.substr(first, last - first + 1);
}

std::string format_knot(double value) {
  std::ostringstream out;
  out.precision(6);
  out << value;
  return out.str();
}

std::vector<Term> base_terms(LearnerRole role) {
  std::vector<Term> terms{Term{Term::Type::Intercept}};
  if (role == LearnerRole::OutcomeRegression) terms.push_back(Term{Term::Type::Arm});
  return terms;
}

const Eigen::VectorXd& response_for(LearnerRole role, const TrialDataset& data) {
  return role == LearnerRole::OutcomeRegression ? data.outcome() : data.arm();
}

Eigen::VectorXd arm_for(LearnerRole role, const TrialDataset& data) {
  // Propensity models never see the arm as a regressor.
  return role == LearnerRole::OutcomeRegression ? data.arm() : Eigen::VectorXd::Zero(data.size());
}

FittedLearner unadjusted_fit(LearnerRole role, const TrialDataset& data) {
  const LearnerSpec spec = LearnerSpec::unadjusted(role);
  if (role == LearnerRole::PropensityScore) {
    Eigen::VectorXd coef(1);
    coef << data.arm().mean();
    return FittedLearner(spec, {Term{Term::Type::Intercept}}, coef, Link::Identity);
  }
  // Logistic regression on intercept + arm is saturated in the arm, so its
  // MLE is the pair of arm means; store them directly.
  double sum1 = 0.0;
  double sum0 = 0.0;
  std::size_t n1 = 0;
  std::size_t n0 = 0;
  for (Eigen::Index i = 0; i < data.outcome().size(); ++i) {
    if (data.arm()(i) == 1.0) {
      sum1 += data.outcome()(i);
      ++n1;
    } else {
      sum0 += data.outcome()(i);
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0) fail(ErrorCode::Data, "outcome regression needs both arms");
  Eigen::VectorXd coef(2);
  coef << sum1 / static_cast<double>(n1), sum0 / static_cast<double>(n0);
  return FittedLearner(spec, {Term{Term::Type::Treated}, Term{Term::Type::Control}}, coef, Link::Identity);
}

FittedLearner fallback_fit(const LearnerSpec& spec, const TrialDataset& data, const std::string& why) {
  FittedLearner fitted = unadjusted_fit(spec.role, data);
  fitted.mark_fallback(spec.to_string() + ": " + why + "; using unadjusted");
  return fitted;
}

struct TermGlm {
  FittedLearner learner;
  double deviance = 0.0;
  int rank = 0;
};

std::optional<TermGlm> fit_terms_logistic(const LearnerSpec& spec, std::vector<Term> terms,
                                          const TrialDataset& data) {
  DesignMatrix design{term_matrix(terms, arm_for(spec.role, data), data.covariates()), {}};
  GlmOptions options;
  options.intercept = false;
  const GlmFit fit = fit_logistic(design, response_for(spec.role, data), options);
  if (!fit.converged) return std::nullopt;
  const auto rank = static_cast<int>(std::count(fit.aliased.begin(), fit.aliased.end(), false));
  return TermGlm{FittedLearner(spec, std::move(terms), fit.coefficients, Link::Logit), fit.deviance, rank};
}

FittedLearner glm_fit(const LearnerSpec& spec, const TrialDataset& data,
                      const std::vector<std::size_t>& columns) {
  std::vector<Term> terms = base_terms(spec.role);
  for (std::size_t j : columns) terms.push_back(Term{Term::Type::Main, j});
  auto fit = fit_terms_logistic(spec, std::move(terms), data);
  if (!fit) return fallback_fit(spec, data, "logistic fit did not converge");
  return std::move(fit->learner);
}

std::vector<std::size_t> all_columns(const TrialDataset& data) {
  std::vector<std::size_t> columns(data.num_covariates());
  for (std::size_t j = 0; j < columns.size(); ++j) columns[j] = j;
  return columns;
}

FittedLearner dispatch(const LearnerSpec& spec, const TrialDataset& data, std::uint64_t seed,
                       const LearnerSettings& settings) {
  switch (spec.kind) {
    case LearnerKind::Unadjusted:
      return unadjusted_fit(spec.role, data);
    case LearnerKind::Glm: {
      const auto columns = data.find_covariate(spec.covariate);
      if (!columns) fail(ErrorCode::Config, "unknown covariate '" + spec.covariate + "' in " + spec.to_string());
      return glm_fit(spec, data, *columns);
    }
    case LearnerKind::GlmMainTerms:
      return glm_fit(spec, data, all_columns(data));
    case LearnerKind::Stepwise:
      return stepwise_fit(data, spec.role, spec.interactions);
    case LearnerKind::Lasso:
      return lasso_fit(data, spec.role, seed, settings);
    case LearnerKind::Mars:
      return mars_fit(data, spec.role, spec.screening, settings);
  }
  fail(ErrorCode::InvalidArgument, "unknown learner kind");
}

FittedLearner fit_any(const LearnerSpec& spec, const TrialDataset& data, std::uint64_t seed,
                      const LearnerSettings& settings) {
  try {
    return dispatch(spec, data, seed, settings);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Config) throw;
    return fallback_fit(spec, data, e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// LearnerSpec

LearnerSpec LearnerSpec::parse(const std::string& text, LearnerRole role) {
  const std::string t = trim_text(text);
  LearnerSpec spec;
  spec.role = role;
  if (t == "unadjusted") {
    spec.kind = LearnerKind::Unadjusted;
  } else if (t == "stepwise") {
    spec.kind = LearnerKind::Stepwise;
  } else if (t == "stepwise_int") {
    spec.kind = LearnerKind::Stepwise;
    spec.interactions = true;
  } else if (t == "lasso") {
    spec.kind = LearnerKind::Lasso;
  } else if (t == "mars") {
    spec.kind = LearnerKind::Mars;
  } else if (t == "mars_screen") {
    spec.kind = LearnerKind::Mars;
    spec.screening = true;
  } else if (t.size() > 5 && t.rfind("glm(", 0) == 0 && t.back() == ')') {
    const std::string inner = trim_text(t.substr(4, t.size() - 5));
    if (inner.empty()) fail(ErrorCode::Parse, "glm() needs a covariate name or main_terms");
    if (inner == "main_terms") {
      spec.kind = LearnerKind::GlmMainTerms;
    } else {
      spec.kind = LearnerKind::Glm;
      spec.covariate = inner;
    }
  } else {
    fail(ErrorCode::Parse, "unknown learner '" + text + "'");
  }
  return spec;
}

std::string LearnerSpec::to_string() const {
  switch (kind) {
    case LearnerKind::Unadjusted:
      return "unadjusted";
    case LearnerKind::Glm:
      return "glm(" + covariate + ")";
    case LearnerKind::GlmMainTerms:
      return "glm(main_terms)";
    case LearnerKind::Stepwise:
      return interactions ? "stepwise_int" : "stepwise";
    case LearnerKind::Lasso:
      return "lasso";
    case LearnerKind::Mars:
      return screening ? "mars_screen" : "mars";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Terms and fitted learners

double Term::evaluate(double arm, const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  switch (type) {
    case Type::Intercept:
      return 1.0;
    case Type::Arm:
      return arm;
    case Type::Treated:
      return arm == 1.0 ? 1.0 : 0.0;
    case Type::Control:
      return arm == 1.0 ? 0.0 : 1.0;
    case Type::Main:
      return row(static_cast<Eigen::Index>(first));
    case Type::Product:
      return row(static_cast<Eigen::Index>(first)) * row(static_cast<Eigen::Index>(second));
    case Type::Hinge: {
      const double d = direction > 0 ? row(static_cast<Eigen::Index>(first)) - knot
                                     : knot - row(static_cast<Eigen::Index>(first));
      return d > 0.0 ? d : 0.0;
    }
  }
  return 0.0;
}

std::string Term::describe(const std::vector<std::string>& names) const {
  switch (type) {
    case Type::Intercept:
      return "(Intercept)";
    case Type::Arm:
      return "A";
    case Type::Treated:
      return "1{A=1}";
    case Type::Control:
      return "1{A=0}";
    case Type::Main:
      return names.at(first);
    case Type::Product:
      return names.at(first) + ":" + names.at(second);
    case Type::Hinge:
      return direction > 0 ? "h(" + names.at(first) + "-" + format_knot(knot) + ")"
                           : "h(" + format_knot(knot) + "-" + names.at(first) + ")";
  }
  return "?";
}

Eigen::MatrixXd term_matrix(const std::vector<Term>& terms, const Eigen::VectorXd& arm,
                            const Eigen::MatrixXd& covariates) {
  const Eigen::Index n = covariates.rows();
  if (arm.size() != n) fail(ErrorCode::InvalidArgument, "arm length does not match covariate rows");
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(terms.size()));
  for (std::size_t t = 0; t < terms.size(); ++t) {
    const auto c = static_cast<Eigen::Index>(t);
    const Term& term = terms[t];
    switch (term.type) {
      case Term::Type::Intercept:
        out.col(c).setOnes();
        break;
      case Term::Type::Arm:
        out.col(c) = arm;
        break;
      case Term::Type::Treated:
        out.col(c) = (arm.array() == 1.0).cast<double>();
        break;
      case Term::Type::Control:
        out.col(c) = (arm.array() != 1.0).cast<double>();
        break;
      case Term::Type::Main:
        if (term.first >= static_cast<std::size_t>(covariates.cols())) {
          fail(ErrorCode::InvalidArgument, "covariate schema mismatch");
        }
        out.col(c) = covariates.col(static_cast<Eigen::Index>(term.first));
        break;
      default:
        for (Eigen::Index i = 0; i < n; ++i) out(i, c) = term.evaluate(arm(i), covariates.row(i));
        break;
    }
  }
  return out;
}

FittedLearner::FittedLearner(LearnerSpec spec, std::vector<Term> terms, Eigen::VectorXd coefficients, Link link)
    : spec_(std::move(spec)), terms_(std::move(terms)), coefficients_(std::move(coefficients)), link_(link) {
  if (static_cast<Eigen::Index>(terms_.size()) != coefficients_.size()) {
    fail(ErrorCode::InvalidArgument, "term and coefficient counts differ");
  }
}

void FittedLearner::mark_fallback(std::string note) {
  fallback_ = true;
  note_ = std::move(note);
}

Eigen::VectorXd FittedLearner::raw_predict(const Eigen::VectorXd& arm, const Eigen::MatrixXd& covariates) const {
  const Eigen::MatrixXd design = term_matrix(terms_, arm, covariates);
  Eigen::VectorXd eta = design * coefficients_;
  if (link_ == Link::Logit) {
    for (Eigen::Index i = 0; i < eta.size(); ++i) eta(i) = expit(eta(i));
  }
  return eta;
}

Eigen::VectorXd FittedLearner::predict_outcome(const Eigen::VectorXd& arm, const Eigen::MatrixXd& covariates) const {
  if (spec_.role != LearnerRole::OutcomeRegression) {
    fail(ErrorCode::InvalidArgument, "predict_outcome called on a propensity learner");
  }
  Eigen::VectorXd out = raw_predict(arm, covariates);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = std::clamp(out(i), kPredictionClip, 1.0 - kPredictionClip);
  return out;
}

double FittedLearner::predict_outcome(int arm, const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  Eigen::VectorXd a(1);
  a << static_cast<double>(arm);
  return predict_outcome(a, Eigen::MatrixXd(row))(0);
}

Eigen::VectorXd FittedLearner::predict_pscore(const Eigen::MatrixXd& covariates) const {
  if (spec_.role != LearnerRole::PropensityScore) {
    fail(ErrorCode::InvalidArgument, "predict_pscore called on an outcome learner");
  }
  Eigen::VectorXd out = raw_predict(Eigen::VectorXd::Zero(covariates.rows()), covariates);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = std::clamp(out(i), kPscoreClipLow, kPscoreClipHigh);
  return out;
}

std::vector<std::string> FittedLearner::describe_terms(const std::vector<std::string>& names) const {
  std::vector<std::string> out;
  for (const auto& t : terms_) out.push_back(t.describe(names));
  return out;
}

FittedLearner fit_outcome_learner(const LearnerSpec& spec, const TrialDataset& data, std::uint64_t seed,
                                  const LearnerSettings& settings) {
  if (spec.role != LearnerRole::OutcomeRegression) {
    fail(ErrorCode::InvalidArgument, spec.to_string() + " is not an outcome-regression spec");
  }
  return fit_any(spec, data, seed, settings);
}

FittedLearner fit_pscore_learner(const LearnerSpec& spec, const TrialDataset& data, std::uint64_t seed,
                                 const LearnerSettings& settings) {
  if (spec.role != LearnerRole::PropensityScore) {
    fail(ErrorCode::InvalidArgument, spec.to_string() + " is not a propensity-score spec");
  }
  return fit_any(spec, data, seed, settings);
}

// ---------------------------------------------------------------------------
// Stepwise

FittedLearner stepwise_fit(const TrialDataset& data, LearnerRole role, bool interactions) {
  LearnerSpec spec{LearnerKind::Stepwise, role, {}, false, false};
  spec.interactions = interactions;

  std::vector<Term> current = base_terms(role);
  auto best = fit_terms_logistic(spec, current, data);
  if (!best) return fallback_fit(spec, data, "base model did not converge");
  auto aic = [](const TermGlm& fit) { return fit.deviance + 2.0 * fit.rank; };
  double current_aic = aic(*best);

  const std::size_t p = data.num_covariates();
  std::vector<Term> pool;
  for (std::size_t j = 0; j < p; ++j) pool.push_back(Term{Term::Type::Main, j});
  if (interactions) {
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = j + 1; k < p; ++k) pool.push_back(Term{Term::Type::Product, j, k});
    }
  }
  auto contains = [&](const Term& t) { return std::find(current.begin(), current.end(), t) != current.end(); };

  while (true) {
    std::optional<TermGlm> step_best;
    std::size_t step_index = pool.size();
    double step_aic = current_aic;
    for (std::size_t c = 0; c < pool.size(); ++c) {
      const Term& term = pool[c];
      if (contains(term)) continue;
      // Interactions enter only after both of their main effects.
      if (term.type == Term::Type::Product &&
          (!contains(Term{Term::Type::Main, term.first}) || !contains(Term{Term::Type::Main, term.second}))) {
        continue;
      }
      std::vector<Term> trial = current;
      trial.push_back(term);
      auto fit = fit_terms_logistic(spec, std::move(trial), data);
      if (!fit) continue;
      const double value = aic(*fit);
      if (value < step_aic) {
        step_aic = value;
        step_best = std::move(fit);
        step_index = c;
      }
    }
    if (!step_best) break;
    current.push_back(pool[step_index]);
    current_aic = step_aic;
    best = std::move(step_best);
  }
  return std::move(best->learner);
}

// ---------------------------------------------------------------------------
// LASSO

namespace lasso {

int coordinate_descent(const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized,
                       const Eigen::VectorXd& z, const Eigen::VectorXd& w, double lambda,
                       Eigen::VectorXd& gamma, Eigen::VectorXd& beta, double tolerance, int max_sweeps) {
  const Eigen::Index q = unpenalized.cols();
  const Eigen::Index p = penalized.cols();
  Eigen::VectorXd residual = z - unpenalized * gamma - penalized * beta;
  Eigen::VectorXd u_scale(q);
  Eigen::VectorXd x_scale(p);
  for (Eigen::Index j = 0; j < q; ++j) u_scale(j) = w.dot(unpenalized.col(j).cwiseAbs2());
  for (Eigen::Index j = 0; j < p; ++j) x_scale(j) = w.dot(penalized.col(j).cwiseAbs2());

  int sweep = 0;
  while (sweep < max_sweeps) {
    ++sweep;
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < q; ++j) {
      if (u_scale(j) <= 0.0) continue;
      const double gradient = (w.array() * unpenalized.col(j).array() * residual.array()).sum();
      const double updated = gamma(j) + gradient / u_scale(j);
      const double delta = updated - gamma(j);
      if (delta != 0.0) {
        residual -= delta * unpenalized.col(j);
        gamma(j) = updated;
        max_change = std::max(max_change, u_scale(j) * delta * delta);
      }
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      if (x_scale(j) <= 0.0) continue;
      const double partial =
          (w.array() * penalized.col(j).array() * residual.array()).sum() + x_scale(j) * beta(j);
      const double updated = soft_threshold(partial, lambda) / x_scale(j);
      const double delta = updated - beta(j);
      if (delta != 0.0) {
        residual -= delta * penalized.col(j);
        beta(j) = updated;
        max_change = std::max(max_change, x_scale(j) * delta * delta);
      }
    }
    if (max_change < tolerance) break;
  }
  return sweep;
}

namespace {

double penalized_objective(const Eigen::VectorXd& y, const Eigen::VectorXd& eta, const Eigen::VectorXd& beta,
                           double lambda) {
  Eigen::VectorXd mu(eta.size());
  for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = std::clamp(expit(eta(i)), 1e-15, 1.0 - 1e-15);
  return binomial_deviance(y, mu) / (2.0 * static_cast<double>(y.size())) + lambda * beta.lpNorm<1>();
}

}  // namespace

std::vector<PathFit> logistic_path(const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized,
                                   const Eigen::VectorXd& y, const std::vector<double>& lambdas) {
  const Eigen::Index n = y.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(unpenalized.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(penalized.cols());
  std::vector<PathFit> path;
  path.reserve(lambdas.size());

  for (double lambda : lambdas) {
    PathFit fit;
    Eigen::VectorXd eta = unpenalized * gamma + penalized * beta;
    double objective = penalized_objective(y, eta, beta, lambda);
    fit.converged = false;
    for (int outer = 0; outer < 100; ++outer) {
      Eigen::VectorXd mu(n);
      Eigen::VectorXd weight(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        mu(i) = std::clamp(expit(eta(i)), 1e-15, 1.0 - 1e-15);
        weight(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-5);
      }
      const Eigen::VectorXd z = eta + (y - mu).cwiseQuotient(weight);
      const Eigen::VectorXd w = weight * inv_n;
      Eigen::VectorXd new_gamma = gamma;
      Eigen::VectorXd new_beta = beta;
      coordinate_descent(unpenalized, penalized, z, w, lambda, new_gamma, new_beta, 1e-12, 1000);

      // Halve the proximal-Newton step if the objective went up.
      double new_objective = penalized_objective(y, unpenalized * new_gamma + penalized * new_beta, new_beta, lambda);
      for (int h = 0; h < 30 && new_objective > objective + 1e-14; ++h) {
        new_gamma = 0.5 * (new_gamma + gamma);
        new_beta = 0.5 * (new_beta + beta);
        new_objective = penalized_objective(y, unpenalized * new_gamma + penalized * new_beta, new_beta, lambda);
      }
      const double change = std::abs(objective - new_objective) / (std::abs(new_objective) + 1e-10);
      gamma = new_gamma;
      beta = new_beta;
      eta = unpenalized * gamma + penalized * beta;
      objective = new_objective;
      if (change < 1e-10) {
        fit.converged = true;
        break;
      }
    }
    fit.converged = fit.converged && gamma.allFinite() && beta.allFinite();
    fit.gamma = gamma;
    fit.beta = beta;
    path.push_back(std::move(fit));
  }
  return path;
}

double lambda_max(const Eigen::MatrixXd& unpenalized, const Eigen::MatrixXd& penalized, const Eigen::VectorXd& y) {
  DesignMatrix base{unpenalized, {}};
  GlmOptions options;
  options.intercept = false;
  const GlmFit fit = fit_logistic(base, y, options);
  Eigen::VectorXd mu(y.size());
  const Eigen::VectorXd eta = unpenalized * fit.coefficients;
  for (Eigen::Index i = 0; i < y.size(); ++i) mu(i) = expit(eta(i));
  const Eigen::VectorXd gradient = penalized.transpose() * (y - mu) / static_cast<double>(y.size());
  // Slack absorbs the difference between this base fit and the path solver's
  // own unpenalized solution.
  return gradient.size() == 0 ? 0.0 : gradient.cwiseAbs().maxCoeff() * (1.0 + 1e-6);
}

}  // namespace lasso

namespace {

struct Standardized {
  Eigen::MatrixXd values;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;  // 0 for constant columns
};

Standardized standardize(const Eigen::MatrixXd& x) {
  Standardized out;
  const double n = static_cast<double>(x.rows());
  out.mean = x.colwise().mean().transpose();
  out.scale.resize(x.cols());
  out.values.resize(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Eigen::ArrayXd centered = x.col(j).array() - out.mean(j);
    const double sd = std::sqrt(centered.square().sum() / n);
    out.scale(j) = sd > 1e-12 ? sd : 0.0;
    if (out.scale(j) > 0.0) {
      out.values.col(j) = (centered / sd).matrix();
    } else {
      out.values.col(j).setZero();
    }
  }
  return out;
}

Eigen::MatrixXd apply_standardization(const Eigen::MatrixXd& x, const Standardized& s) {
  Eigen::MatrixXd out(x.rows(), x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (s.scale(j) > 0.0) {
      out.col(j) = ((x.col(j).array() - s.mean(j)) / s.scale(j)).matrix();
    } else {
      out.col(j).setZero();
    }
  }
  return out;
}

Eigen::MatrixXd unpenalized_design(LearnerRole role, const Eigen::VectorXd& arm) {
  Eigen::MatrixXd u(arm.size(), role == LearnerRole::OutcomeRegression ? 2 : 1);
  u.col(0).setOnes();
  if (role == LearnerRole::OutcomeRegression) u.col(1) = arm;
  return u;
}

std::vector<std::vector<std::size_t>> stratified_folds(const Eigen::VectorXd& arm, int folds, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
  std::size_t slot = 0;
  for (int a : {1, 0}) {
    std::vector<std::size_t> rows;
    for (Eigen::Index i = 0; i < arm.size(); ++i) {
      if (static_cast<int>(arm(i)) == a) rows.push_back(static_cast<std::size_t>(i));
    }
    rng.shuffle(rows);
    for (std::size_t r : rows) out[slot++ % out.size()].push_back(r);
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(static_cast<Eigen::Index>(rows[k]));
  return out;
}

Eigen::VectorXd take(const Eigen::VectorXd& v, const std::vector<std::size_t>& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(static_cast<Eigen::Index>(rows[k]));
  return out;
}

}  // namespace

FittedLearner lasso_fit(const TrialDataset& data, LearnerRole role, std::uint64_t seed,
                        const LearnerSettings& settings) {
  const LearnerSpec spec{LearnerKind::Lasso, role, {}, false, false};
  if (data.num_covariates() == 0) return fallback_fit(spec, data, "no covariates");

  const Eigen::VectorXd& y = response_for(role, data);
  const Eigen::VectorXd& arm = data.arm();
  const Standardized full = standardize(data.covariates());
  const Eigen::MatrixXd u_full = unpenalized_design(role, arm);

  const double top = lasso::lambda_max(u_full, full.values, y);
  if (!(top > 0.0) || !std::isfinite(top)) {
    auto fit = fit_terms_logistic(spec, base_terms(role), data);
    if (!fit) return fallback_fit(spec, data, "base model did not converge");
    fit->learner.set_note("no penalized covariate carries signal");
    return std::move(fit->learner);
  }
  const int steps = std::max(settings.lasso_path_length, 2);
  std::vector<double> lambdas(static_cast<std::size_t>(steps));
  for (int k = 0; k < steps; ++k) {
    const double frac = static_cast<double>(k) / static_cast<double>(steps - 1);
    lambdas[static_cast<std::size_t>(k)] = top * std::pow(settings.lasso_min_ratio, frac);
  }

  // Internal K-fold CV on held-out deviance.
  const int folds = std::max(2, std::min(settings.lasso_folds, static_cast<int>(data.size() / 2)));
  const auto fold_rows = stratified_folds(arm, folds, child_seed(seed, 0x1A550));
  std::vector<double> cv_deviance(lambdas.size(), 0.0);
  for (const auto& held_out : fold_rows) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!std::binary_search(held_out.begin(), held_out.end(), i)) train.push_back(i);
    }
    const Standardized s = standardize(take_rows(data.covariates(), train));
    const Eigen::MatrixXd u_train = unpenalized_design(role, take(arm, train));
    const auto path = lasso::logistic_path(u_train, s.values, take(y, train), lambdas);
    const Eigen::MatrixXd x_valid = apply_standardization(take_rows(data.covariates(), held_out), s);
    const Eigen::MatrixXd u_valid = unpenalized_design(role, take(arm, held_out));
    const Eigen::VectorXd y_valid = take(y, held_out);
    for (std::size_t k = 0; k < path.size(); ++k) {
      const Eigen::VectorXd eta = u_valid * path[k].gamma + x_valid * path[k].beta;
      Eigen::VectorXd mu(eta.size());
      for (Eigen::Index i = 0; i < eta.size(); ++i) mu(i) = std::clamp(expit(eta(i)), 1e-10, 1.0 - 1e-10);
      const double dev = binomial_deviance(y_valid, mu);
      cv_deviance[k] += std::isfinite(dev) ? dev : std::numeric_limits<double>::infinity();
    }
  }
  const auto best = static_cast<std::size_t>(
      std::min_element(cv_deviance.begin(), cv_deviance.end()) - cv_deviance.begin());

  const std::vector<double> refit_lambdas(lambdas.begin(), lambdas.begin() + static_cast<std::ptrdiff_t>(best) + 1);
  const auto path = lasso::logistic_path(u_full, full.values, y, refit_lambdas);
  const lasso::PathFit& chosen = path.back();
  if (!chosen.converged) return fallback_fit(spec, data, "penalized fit did not converge");

  std::vector<Term> terms = base_terms(role);
  std::vector<double> coef(chosen.gamma.data(), chosen.gamma.data() + chosen.gamma.size());
  for (Eigen::Index j = 0; j < chosen.beta.size(); ++j) {
    if (chosen.beta(j) == 0.0 || full.scale(j) == 0.0) continue;
    const double original = chosen.beta(j) / full.scale(j);
    coef[0] -= original * full.mean(j);
    terms.push_back(Term{Term::Type::Main, static_cast<std::size_t>(j)});
    coef.push_back(original);
  }
  FittedLearner fitted(spec, std::move(terms), Eigen::Map<Eigen::VectorXd>(coef.data(), static_cast<Eigen::Index>(coef.size())),
                       Link::Logit);
  std::ostringstream note;
  note << "lambda_min=" << lambdas[best] << " (" << best + 1 << "/" << lambdas.size() << ")";
  fitted.set_note(note.str());
  return fitted;
}

// ---------------------------------------------------------------------------
// Screening and MARS

std::vector<std::size_t> screen_covariates(const Eigen::MatrixXd& covariates, const Eigen::VectorXd& response,
                                           double threshold) {
  std::vector<std::size_t> kept;
  for (Eigen::Index j = 0; j < covariates.cols(); ++j) {
    const Eigen::VectorXd col = covariates.col(j);
    if (col.maxCoeff() == col.minCoeff()) continue;
    const double r = pearson_correlation(col, response);
    if (correlation_p_value(r, static_cast<std::size_t>(response.size())) < threshold) {
      kept.push_back(static_cast<std::size_t>(j));
    }
  }
  return kept;
}

namespace {

std::vector<double> candidate_knots(const Eigen::VectorXd& x, int max_knots) {
  std::vector<double> values(x.data(), x.data() + x.size());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  if (values.size() < 2) return {};
  values.pop_back();  // a knot at the maximum yields an all-zero hinge
  if (max_knots <= 0 || values.size() <= static_cast<std::size_t>(max_knots)) return values;
  std::vector<double> thinned;
  const double step = static_cast<double>(values.size() - 1) / static_cast<double>(max_knots - 1);
  for (int k = 0; k < max_knots; ++k) {
    const auto idx = static_cast<std::size_t>(std::llround(step * k));
    if (thinned.empty() || thinned.back() != values[idx]) thinned.push_back(values[idx]);
  }
  return thinned;
}

// Orthogonalizes v against the columns of `basis` and returns the residual.
Eigen::VectorXd orthogonalize(Eigen::VectorXd v, const std::vector<Eigen::VectorXd>& basis, int passes = 1) {
  for (int pass = 0; pass < passes; ++pass) {
    for (const auto& q : basis) v -= q.dot(v) * q;
  }
  return v;
}

double least_squares_rss(const Eigen::MatrixXd& design, const Eigen::VectorXd& y, Eigen::VectorXd* coef = nullptr) {
  const auto qr = design.colPivHouseholderQr();
  const Eigen::VectorXd b = qr.solve(y);
  if (coef) *coef = b;
  return (y - design * b).squaredNorm();
}

double gcv(double rss, std::size_t terms, std::size_t n, double penalty) {
  const double m = static_cast<double>(terms);
  const double effective = m + penalty * (m - 1.0) / 2.0;
  const double nn = static_cast<double>(n);
  if (effective >= nn) return std::numeric_limits<double>::infinity();
  const double denom = 1.0 - effective / nn;
  return rss / nn / (denom * denom);
}

}  // namespace

FittedLearner mars_fit(const TrialDataset& data, LearnerRole role, bool screening, const LearnerSettings& settings) {
  LearnerSpec spec{LearnerKind::Mars, role, {}, false, false};
  spec.screening = screening;
  const Eigen::VectorXd& y = response_for(role, data);
  const Eigen::VectorXd arm = arm_for(role, data);
  const Eigen::MatrixXd& x = data.covariates();
  const std::size_t n = data.size();

  std::vector<std::size_t> variables;
  if (screening) {
    variables = screen_covariates(x, y, settings.screen_p);
  } else {
    for (std::size_t j = 0; j < data.num_covariates(); ++j) variables.push_back(j);
  }

  std::vector<Term> terms = base_terms(role);
  const std::size_t mandatory = terms.size();
  std::vector<Eigen::VectorXd> basis;
  {
    const Eigen::MatrixXd b0 = term_matrix(terms, arm, x);
    for (Eigen::Index c = 0; c < b0.cols(); ++c) {
      Eigen::VectorXd v = orthogonalize(b0.col(c), basis, 2);
      const double norm = v.norm();
      if (norm > 1e-10 * std::max(1.0, b0.col(c).norm())) basis.push_back(v / norm);
    }
  }
  Eigen::VectorXd residual = orthogonalize(y, basis, 2);
  const double tss = (y.array() - y.mean()).square().sum();

  // Forward pass: add the reflected hinge pair with the largest RSS drop.
  while (tss > 0.0 && static_cast<int>(terms.size()) + 1 <= settings.mars_max_terms) {
    double best_gain = 0.0;
    std::vector<Term> best_pair;
    std::vector<Eigen::VectorXd> best_vectors;
    for (std::size_t j : variables) {
      const Eigen::VectorXd col = x.col(static_cast<Eigen::Index>(j));
      for (double knot : candidate_knots(col, settings.mars_max_knots)) {
        std::vector<Term> pair;
        std::vector<Eigen::VectorXd> vectors;
        double gain = 0.0;
        for (int direction : {1, -1}) {
          const Term term{Term::Type::Hinge, j, 0, knot, direction};
          Eigen::VectorXd h(static_cast<Eigen::Index>(n));
          for (Eigen::Index i = 0; i < h.size(); ++i) {
            const double d = direction > 0 ? col(i) - knot : knot - col(i);
            h(i) = d > 0.0 ? d : 0.0;
          }
          const double raw_norm = h.norm();
          if (raw_norm == 0.0) continue;
          Eigen::VectorXd v = orthogonalize(h, basis);
          for (const auto& u : vectors) v -= u.dot(v) * u;
          const double norm = v.norm();
          if (norm <= 1e-8 * raw_norm) continue;
          v /= norm;
          const double proj = v.dot(residual);
          gain += proj * proj;
          pair.push_back(term);
          vectors.push_back(std::move(v));
        }
        if (pair.empty()) continue;
        if (static_cast<int>(terms.size() + pair.size()) > settings.mars_max_terms) {
          pair.resize(1);
          vectors.resize(1);
          const double proj = vectors[0].dot(residual);
          gain = proj * proj;
        }
        if (gain > best_gain) {
          best_gain = gain;
          best_pair = std::move(pair);
          best_vectors = std::move(vectors);
        }
      }
    }
    if (best_pair.empty() || best_gain / tss < settings.mars_min_r2_gain) break;
    for (std::size_t k = 0; k < best_pair.size(); ++k) {
      terms.push_back(best_pair[k]);
      // Re-orthogonalize against the full basis for numerical stability.
      Eigen::VectorXd v = orthogonalize(best_vectors[k], basis, 2);
      const double norm = v.norm();
      if (norm > 0.0) basis.push_back(v / norm);
    }
    residual = orthogonalize(y, basis, 2);
  }

  // Backward pass: drop the least useful hinge repeatedly; keep the subset
  // with the smallest GCV.
  const Eigen::MatrixXd design_all = term_matrix(terms, arm, x);
  std::vector<std::size_t> active(terms.size());
  for (std::size_t t = 0; t < active.size(); ++t) active[t] = t;
  auto design_of = [&](const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd d(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t c = 0; c < cols.size(); ++c) {
      d.col(static_cast<Eigen::Index>(c)) = design_all.col(static_cast<Eigen::Index>(cols[c]));
    }
    return d;
  };
  std::vector<std::size_t> best_set = active;
  double best_gcv = gcv(least_squares_rss(design_of(active), y), active.size(), n, settings.mars_penalty);
  while (active.size() > mandatory) {
    double drop_rss = std::numeric_limits<double>::infinity();
    std::size_t drop_pos = active.size();
    for (std::size_t pos = mandatory; pos < active.size(); ++pos) {
      std::vector<std::size_t> trial = active;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(pos));
      const double rss = least_squares_rss(design_of(trial), y);
      if (rss < drop_rss) {
        drop_rss = rss;
        drop_pos = pos;
      }
    }
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(drop_pos));
    const double value = gcv(drop_rss, active.size(), n, settings.mars_penalty);
    if (value < best_gcv) {
      best_gcv = value;
      best_set = active;
    }
  }

  Eigen::VectorXd coef;
  least_squares_rss(design_of(best_set), y, &coef);
  std::vector<Term> final_terms;
  for (std::size_t t : best_set) final_terms.push_back(terms[t]);
  if (!coef.allFinite()) return fallback_fit(spec, data, "least-squares solve failed");
  FittedLearner fitted(spec, std::move(final_terms), coef, Link::Identity);
  if (screening && variables.empty()) fitted.set_note("no covariate passed screening");
  return fitted;
}

}  // namespace aptmle
