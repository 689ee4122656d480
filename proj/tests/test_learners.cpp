#include "aptmle/error.hpp"
#include "aptmle/glm.hpp"
#include "aptmle/learners.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace aptmle;

namespace {

const LearnerRole kOutcome = LearnerRole::OutcomeRegression;
const LearnerRole kPscore = LearnerRole::PropensityScore;

TrialDataset arm_mean_trial() {
  // Arm means 0.6 (treated) and 0.4 (control); 6 of 10 treated.
  std::vector<Unit> units;
  const double treated_y[] = {1, 1, 1, 0, 0, 0.6};
  const double control_y[] = {1, 0, 0, 0.6};
  for (int i = 0; i < 6; ++i) units.push_back(testing::unit("t" + std::to_string(i), 1, treated_y[i], {double(i)}));
  for (int i = 0; i < 4; ++i) units.push_back(testing::unit("c" + std::to_string(i), 0, control_y[i], {double(i)}));
  return TrialDataset::from_units(units, {"W1"});
}

}  // namespace

TEST_CASE("learner grammar round-trips") {
  for (const char* text : {"unadjusted", "glm(W1)", "glm(main_terms)", "stepwise", "stepwise_int", "lasso", "mars",
                           "mars_screen"}) {
    const LearnerSpec spec = LearnerSpec::parse(text, kOutcome);
    CHECK(spec.to_string() == text);
  }
  CHECK(LearnerSpec::parse("glm(W1)", kOutcome).kind == LearnerKind::Glm);
  CHECK(LearnerSpec::parse("glm(main_terms)", kOutcome).kind == LearnerKind::GlmMainTerms);
  CHECK(LearnerSpec::parse("stepwise_int", kOutcome).interactions);
  CHECK(LearnerSpec::parse("mars_screen", kOutcome).screening);
  CHECK_THROWS_AS(LearnerSpec::parse("forest", kOutcome), Error);
  CHECK_THROWS_AS(LearnerSpec::parse("glm()", kOutcome), Error);
}

TEST_CASE("unadjusted learners return arm means and the empirical proportion") {
  const TrialDataset data = arm_mean_trial();
  const FittedLearner outcome = fit_outcome_learner(LearnerSpec::unadjusted(kOutcome), data, 1);
  const Eigen::MatrixXd w = Eigen::MatrixXd::Random(5, 1);
  const Eigen::VectorXd p1 = outcome.predict_outcome(Eigen::VectorXd::Ones(5), w);
  const Eigen::VectorXd p0 = outcome.predict_outcome(Eigen::VectorXd::Zero(5), w);
  for (Eigen::Index i = 0; i < 5; ++i) {
    CHECK(p1(i) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(p0(i) == doctest::Approx(0.4).epsilon(1e-15));
  }
  const FittedLearner ps = fit_pscore_learner(LearnerSpec::unadjusted(kPscore), data, 1);
  const Eigen::VectorXd g = ps.predict_pscore(w);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(g(i) == doctest::Approx(0.6).epsilon(1e-15));
}

TEST_CASE("propensity predictions are clipped to [0.01, 0.99]") {
  Eigen::VectorXd coef(1);
  coef << 0.999;
  const FittedLearner ps(LearnerSpec::unadjusted(kPscore), {Term{Term::Type::Intercept}}, coef, Link::Identity);
  CHECK(ps.predict_pscore(Eigen::MatrixXd::Zero(2, 0))(0) == kPscoreClipHigh);
}

TEST_CASE("role mismatch and unknown covariates are configuration errors") {
  const TrialDataset data = arm_mean_trial();
  CHECK_THROWS_AS(fit_outcome_learner(LearnerSpec::unadjusted(kPscore), data, 1), Error);
  CHECK_THROWS_AS(fit_outcome_learner(LearnerSpec::glm("nope", kOutcome), data, 1), Error);
}

TEST_CASE("one-covariate GLM on a null covariate approaches the arm means") {
  testing::SyntheticTrial spec;
  spec.n = 10000;
  spec.covariates = 1;
  spec.signal = 0.0;
  const TrialDataset data = testing::make_trial(spec, 17);
  const FittedLearner glm = fit_outcome_learner(LearnerSpec::glm("W1", kOutcome), data, 1);
  const FittedLearner unadj = fit_outcome_learner(LearnerSpec::unadjusted(kOutcome), data, 1);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.size()));
  const Eigen::VectorXd diff = glm.predict_outcome(ones, data.covariates()) - unadj.predict_outcome(ones, data.covariates());
  CHECK(diff.cwiseAbs().mean() < 0.02);
}

TEST_CASE("one-covariate propensity model under balanced randomization is near 0.5") {
  testing::SyntheticTrial spec;
  spec.n = 10000;
  spec.covariates = 2;
  const TrialDataset data = testing::make_trial(spec, 8);
  const FittedLearner ps = fit_pscore_learner(LearnerSpec::glm("W2", kPscore), data, 1);
  const Eigen::VectorXd g = ps.predict_pscore(data.covariates());
  CHECK((g.array() - 0.5).abs().maxCoeff() < 0.05);
}

TEST_CASE("counterfactual predictions depend only on arm and covariates") {
  const TrialDataset data = testing::make_trial({}, 21);
  for (const char* text : {"glm(main_terms)", "stepwise_int", "lasso", "mars"}) {
    const FittedLearner f = fit_outcome_learner(LearnerSpec::parse(text, kOutcome), data, 4);
    const Eigen::VectorXd observed = f.predict_outcome(data.arm(), data.covariates());
    const Eigen::VectorXd treated =
        f.predict_outcome(Eigen::VectorXd::Ones(static_cast<Eigen::Index>(data.size())), data.covariates());
    const Eigen::VectorXd control =
        f.predict_outcome(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(data.size())), data.covariates());
    for (Eigen::Index i = 0; i < observed.size(); ++i) {
      CHECK(observed(i) == (data.arm()(i) == 1.0 ? treated(i) : control(i)));
    }
    // Determinism.
    const FittedLearner again = fit_outcome_learner(LearnerSpec::parse(text, kOutcome), data, 4);
    CHECK(again.predict_outcome(data.arm(), data.covariates()) == observed);
  }
}

TEST_CASE("stepwise returns the base model when nothing lowers AIC") {
  testing::SyntheticTrial spec;
  spec.n = 40;
  spec.signal = 0.0;
  spec.covariates = 1;
  // Covariate identical in every row: no addition can help.
  TrialDataset data = testing::make_trial(spec, 1);
  std::vector<Unit> units;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Unit u = data.unit(i);
    u.covariates = {1.0};
    units.push_back(u);
  }
  data = TrialDataset::from_units(units, {"W1"});
  const FittedLearner f = stepwise_fit(data, kOutcome, false);
  CHECK(f.terms().size() == 2);
}

TEST_CASE("stepwise with interactions adds the product after both main effects") {
  Rng rng(3);
  std::vector<Unit> units;
  for (int i = 0; i < 600; ++i) {
    const int a = i % 2;
    const double w1 = rng.normal();
    const double w2 = rng.normal();
    const double w3 = rng.normal();
    const double eta = -0.2 + 0.3 * a + 0.8 * w1 + 0.8 * w2 + 1.0 * w1 * w2;
    units.push_back(testing::unit(std::to_string(i), a, rng.bernoulli(expit(eta)) ? 1.0 : 0.0, {w1, w2, w3}));
  }
  const TrialDataset data = TrialDataset::from_units(units, {"W1", "W2", "W3"});
  const FittedLearner f = stepwise_fit(data, kOutcome, true);
  std::size_t product_pos = 0;
  std::size_t main1 = 0;
  std::size_t main2 = 0;
  for (std::size_t t = 0; t < f.terms().size(); ++t) {
    const Term& term = f.terms()[t];
    if (term.type == Term::Type::Product && term.first == 0 && term.second == 1) product_pos = t;
    if (term.type == Term::Type::Main && term.first == 0) main1 = t;
    if (term.type == Term::Type::Main && term.first == 1) main2 = t;
  }
  INFO(testing::join(f.describe_terms(data.covariate_names())));
  REQUIRE(product_pos > 0);
  CHECK(main1 > 0);
  CHECK(main2 > 0);
  CHECK(product_pos > main1);
  CHECK(product_pos > main2);
}

TEST_CASE("soft threshold") {
  CHECK(lasso::soft_threshold(3.0, 1.0) == 2.0);
  CHECK(lasso::soft_threshold(-3.0, 1.0) == -2.0);
  CHECK(lasso::soft_threshold(0.5, 1.0) == 0.0);
}

TEST_CASE("lambda_max zeroes every penalized coefficient") {
  const TrialDataset data = testing::make_trial({}, 9);
  Eigen::MatrixXd unpenalized(data.size(), 2);
  unpenalized.col(0).setOnes();
  unpenalized.col(1) = data.arm();
  Eigen::MatrixXd x = data.covariates();
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    x.col(j).array() -= x.col(j).mean();
    x.col(j) /= std::sqrt(x.col(j).squaredNorm() / static_cast<double>(x.rows()));
  }
  const double top = lasso::lambda_max(unpenalized, x, data.outcome());
  const auto path = lasso::logistic_path(unpenalized, x, data.outcome(), {top, 0.5 * top});
  CHECK(path[0].beta.cwiseAbs().maxCoeff() == 0.0);
  CHECK(path[1].beta.cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("lasso on pure noise stays close to the base model") {
  testing::SyntheticTrial spec;
  spec.n = 500;
  spec.covariates = 5;
  spec.signal = 0.0;
  int sparse = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const TrialDataset data = testing::make_trial(spec, 100 + seed);
    const FittedLearner f = lasso_fit(data, kOutcome, seed);
    if (f.terms().size() <= 3) ++sparse;
  }
  CHECK(sparse >= 7);
}

TEST_CASE("MARS finds a hinge near the kink") {
  Rng rng(4);
  std::vector<Unit> units;
  for (int i = 0; i < 400; ++i) {
    const double w1 = rng.uniform();
    const double y = 0.2 + std::max(0.0, w1 - 0.5) + rng.uniform(-0.02, 0.02);
    units.push_back(testing::unit(std::to_string(i), i % 2, y, {w1}));
  }
  const TrialDataset data = TrialDataset::from_units(units, {"W1"});
  const FittedLearner mars = mars_fit(data, kOutcome, false);
  bool near = false;
  for (const Term& t : mars.terms()) {
    if (t.type == Term::Type::Hinge && std::abs(t.knot - 0.5) < 0.05) near = true;
  }
  CHECK(near);
  const FittedLearner glm = fit_outcome_learner(LearnerSpec::parse("glm(main_terms)", kOutcome), data, 1);
  const double mse_mars = (mars.predict_outcome(data.arm(), data.covariates()) - data.outcome()).squaredNorm();
  const double mse_glm = (glm.predict_outcome(data.arm(), data.covariates()) - data.outcome()).squaredNorm();
  CHECK(mse_mars < mse_glm);
}

TEST_CASE("MARS screening on pure noise returns the base model") {
  testing::SyntheticTrial spec;
  spec.n = 500;
  spec.covariates = 2;
  spec.signal = 0.0;
  spec.binary = false;
  int base = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    TrialDataset data = testing::make_trial(spec, 300 + seed);
    data = data.with_outcome((data.outcome().array() - 3.0) / 5.0);
    const FittedLearner f = mars_fit(data, kOutcome, true);
    if (f.terms().size() == 2) ++base;
  }
  CHECK(base >= 7);
}

TEST_CASE("a constant covariate contributes no knots") {
  std::vector<Unit> units;
  Rng rng(6);
  for (int i = 0; i < 50; ++i) units.push_back(testing::unit(std::to_string(i), i % 2, rng.uniform(), {3.0}));
  const TrialDataset data = TrialDataset::from_units(units, {"W1"});
  const FittedLearner f = mars_fit(data, kOutcome, false);
  for (const Term& t : f.terms()) CHECK(t.type != Term::Type::Hinge);
}

TEST_CASE("screening keeps correlated covariates only") {
  Rng rng(12);
  Eigen::MatrixXd w(300, 2);
  Eigen::VectorXd y(300);
  for (int i = 0; i < 300; ++i) {
    w(i, 0) = rng.normal();
    w(i, 1) = rng.normal();
    y(i) = w(i, 0) + rng.normal(0.0, 0.5);
  }
  const auto kept = screen_covariates(w, y, 0.10);
  REQUIRE(!kept.empty());
  CHECK(kept.front() == 0);
}

TEST_CASE("failed fits fall back to the flagged unadjusted learner") {
  std::vector<Unit> units;
  for (int i = 0; i < 20; ++i) {
    const double x = i - 9.5;
    units.push_back(testing::unit(std::to_string(i), i % 2, x > 0 ? 1.0 : 0.0, {x}));
  }
  const TrialDataset data = TrialDataset::from_units(units, {"W1"});
  const FittedLearner f = fit_outcome_learner(LearnerSpec::glm("W1", kOutcome), data, 1);
  CHECK(f.fallback());
  CHECK(f.spec().is_unadjusted());
  CHECK(f.note().find("glm(W1)") != std::string::npos);
}
