#include "aptmle/data.hpp"
#include "aptmle/error.hpp"
#include "aptmle/tmle.hpp"

#include "helpers.hpp"

#include <doctest.h>

#include <cmath>

using namespace aptmle;

TEST_CASE("four-row csv loads with two units per arm") {
  const std::string csv = "id,A,Y\n1,1,1\n2,1,0\n3,0,1\n4,0,0\n";
  const TrialDataset data = parse_csv(csv, CsvSchema{});
  CHECK(data.size() == 4);
  CHECK(data.arm_count(1) == 2);
  CHECK(data.arm_count(0) == 2);
  CHECK(data.num_covariates() == 0);
  CHECK(data.fingerprint() == sha256_hex(csv));
}

TEST_CASE("arm outside {0,1} is rejected") {
  const std::string csv = "id,A,Y\n1,1,1\n2,2,0\n3,0,1\n4,0,0\n";
  try {
    parse_csv(csv, CsvSchema{});
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("arm not in {0,1}") != std::string::npos);
    CHECK(e.code() == ErrorCode::Data);
  }
}

TEST_CASE("ingestion errors") {
  CsvSchema schema;
  schema.covariates = {"W1"};
  CHECK_THROWS_AS(parse_csv("id,A,Y\n1,1,1\n2,1,0\n3,0,1\n4,0,0\n", schema), Error);             // missing column
  CHECK_THROWS_AS(parse_csv("id,A,Y,W1\n1,1,x,1\n2,1,0,1\n3,0,1,1\n4,0,0,1\n", schema), Error);  // non-numeric outcome
  CHECK_THROWS_AS(parse_csv("id,A,Y,W1\n1,1,1,1\n2,1,0,1\n3,1,1,1\n4,1,0,1\n", schema), Error);  // empty arm
  CHECK_THROWS_AS(parse_csv("id,A,Y,W1\n1,1,1,1\n1,1,0,1\n3,0,1,1\n4,0,0,1\n", schema), Error);  // duplicate id
  CHECK_THROWS_AS(parse_csv("id,A,Y,W1\n1,1,1,NA\n2,1,0,1\n3,0,1,1\n4,0,0,1\n", schema), Error); // missing value
}

TEST_CASE("categorical covariates are one-hot encoded with the first level dropped") {
  CsvSchema schema;
  schema.covariates = {"age", "country"};
  schema.categorical = {"country"};
  const std::string csv =
      "id,A,Y,age,country\n"
      "a,1,1,30,Uganda\n"
      "b,1,0,41,Kenya\n"
      "c,1,1,25,Uganda\n"
      "d,0,0,33,Kenya\n"
      "e,0,1,52,Uganda\n"
      "f,0,0,47,Kenya\n";
  const TrialDataset data = parse_csv(csv, schema);
  REQUIRE(data.covariate_names() == std::vector<std::string>{"age", "country=Uganda"});
  Eigen::MatrixXd expected(6, 2);
  expected << 30, 1, 41, 0, 25, 1, 33, 0, 52, 1, 47, 0;
  CHECK(data.covariates() == expected);
  const auto group = data.find_covariate("country");
  REQUIRE(group);
  CHECK(*group == std::vector<std::size_t>{1});
}

TEST_CASE("one-hot columns sum to at most one per row") {
  CsvSchema schema;
  schema.covariates = {"site"};
  schema.categorical = {"site"};
  const std::string csv = "id,A,Y,site\n1,1,1,c\n2,1,0,a\n3,0,1,b\n4,0,0,c\n5,1,1,a\n";
  const TrialDataset data = parse_csv(csv, schema);
  CHECK(data.num_covariates() == 2);
  for (Eigen::Index i = 0; i < 5; ++i) CHECK(data.covariates().row(i).sum() <= 1.0);
}

TEST_CASE("cluster column marks cluster-randomized trials") {
  CsvSchema schema;
  schema.cluster_column = "village";
  const std::string csv =
      "id,A,Y,village\n1,1,1,v1\n2,1,0,v1\n3,1,1,v2\n4,0,0,v3\n5,0,1,v4\n6,0,0,v4\n";
  const TrialDataset data = parse_csv(csv, schema);
  CHECK(data.has_clusters());
  CHECK(data.cluster_randomized());
  CHECK(data.num_clusters() == 4);
  CHECK(data.independent_unit_of(5) == 3);
}

TEST_CASE("outcome scaling examples") {
  std::vector<Unit> units{testing::unit("a", 1, 20), testing::unit("b", 1, 30), testing::unit("c", 0, 10),
                          testing::unit("d", 0, 15)};
  const TrialDataset data = TrialDataset::from_units(units, {});
  const auto [scaled, scale] = scale_outcome(data, std::make_pair(10.0, 30.0));
  CHECK(scale.kind == OutcomeKind::BoundedContinuous);
  CHECK(scaled.outcome()(0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(scaled.outcome()(1) == 1.0 - kOutcomeClip);
  CHECK(scaled.outcome()(2) == kOutcomeClip);
  CHECK(scaled.outcome()(3) == doctest::Approx(0.25).epsilon(1e-15));
  for (double y : {12.5, 20.0, 29.0}) CHECK(std::abs(scale.from_unit(scale.to_unit(y)) - y) < 1e-12);
}

TEST_CASE("binary outcomes pass through scaling unchanged") {
  const TrialDataset data = testing::make_trial({}, 3);
  const auto [scaled, scale] = scale_outcome(data, std::nullopt);
  CHECK(scale.kind == OutcomeKind::Binary);
  CHECK(scale.lower == 0.0);
  CHECK(scale.upper == 1.0);
  CHECK(scaled.outcome() == data.outcome());
}

TEST_CASE("constant outcome and bounds that miss the data are rejected") {
  std::vector<Unit> units{testing::unit("a", 1, 2), testing::unit("b", 1, 2), testing::unit("c", 0, 2),
                          testing::unit("d", 0, 2)};
  const TrialDataset data = TrialDataset::from_units(units, {});
  try {
    scale_outcome(data, std::nullopt);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("constant outcome") != std::string::npos);
  }
  CHECK_THROWS_AS(scale_outcome(data, std::make_pair(3.0, 5.0)), Error);
}

TEST_CASE("unscaling effects") {
  TargetedEstimate est;
  est.estimand = Estimand::ATE;
  est.estimate = 0.10;
  est.se = 0.02;
  est.ci_lo = 0.06;
  est.ci_hi = 0.14;
  est.psi1 = 0.6;
  est.psi0 = 0.5;
  est.effect_abs = 0.1;
  est.effect_rel = 1.2;
  est.ic = Eigen::VectorXd::Constant(3, 0.5);

  const OutcomeScale wide{10.0, 30.0, OutcomeKind::BoundedContinuous};
  const TargetedEstimate natural = unscale_effect(est, wide, Estimand::ATE);
  CHECK(natural.estimate == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(natural.se == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(natural.ci_lo == doctest::Approx(1.2).epsilon(1e-14));
  CHECK(natural.psi1 == doctest::Approx(22.0).epsilon(1e-14));
  CHECK(natural.ic(0) == doctest::Approx(10.0).epsilon(1e-14));

  const OutcomeScale binary{};
  const TargetedEstimate same = unscale_effect(est, binary, Estimand::ATE);
  CHECK(same.estimate == est.estimate);
  CHECK(same.se == est.se);

  TargetedEstimate rr = est;
  rr.estimand = Estimand::RR;
  rr.psi1 = 0.5;
  rr.psi0 = 0.25;
  rr.estimate = 2.0;
  const OutcomeScale zero_based{0.0, 40.0, OutcomeKind::BoundedContinuous};
  const TargetedEstimate rr_natural = unscale_effect(rr, zero_based, Estimand::RR);
  CHECK(rr_natural.psi1 == doctest::Approx(20.0));
  CHECK(rr_natural.psi0 == doctest::Approx(10.0));
  CHECK(rr_natural.estimate == 2.0);
  CHECK_THROWS_AS(unscale_effect(rr, wide, Estimand::RR), Error);
}

TEST_CASE("dataset construction invariants") {
  CHECK_THROWS_AS(TrialDataset::from_units({testing::unit("a", 1, 1), testing::unit("b", 0, 1),
                                            testing::unit("c", 0, 0)},
                                           {}),
                  Error);
  CHECK_THROWS_AS(TrialDataset::from_units({testing::unit("a", 1, 1), testing::unit("b", 1, NAN),
                                            testing::unit("c", 0, 0), testing::unit("d", 0, 1)},
                                           {}),
                  Error);
  CHECK_THROWS_AS(TrialDataset::from_units({testing::unit("a", 1, 1, {}, "x"), testing::unit("b", 1, 0),
                                            testing::unit("c", 0, 0, {}, "y"), testing::unit("d", 0, 1, {}, "y")},
                                           {}),
                  Error);
}
