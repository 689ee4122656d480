#pragma once

#include "aptmle/data.hpp"
#include "aptmle/rng.hpp"
#include "aptmle/stats.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace testing {

struct SyntheticTrial {
  std::size_t n = 100;
  std::size_t covariates = 3;
  bool binary = true;
  double arm_effect = 0.4;
  double signal = 1.0;             // coefficient on the first covariate
  std::size_t clusters = 0;        // 0: individually randomized
  std::optional<double> treated_share;
};

// Random trial: normal covariates, logistic (binary) or linear + uniform
// noise (continuous) outcome, complete randomization of units or clusters.
inline aptmle::TrialDataset make_trial(const SyntheticTrial& spec, std::uint64_t seed) {
  aptmle::Rng rng(seed);
  const std::size_t randomized = spec.clusters ? spec.clusters : spec.n;
  const double share = spec.treated_share.value_or(0.5);
  auto treated = static_cast<std::size_t>(std::llround(share * static_cast<double>(randomized)));
  treated = std::clamp<std::size_t>(treated, 2, randomized - 2);
  std::vector<int> assignment(randomized, 0);
  for (std::size_t i = 0; i < treated; ++i) assignment[i] = 1;
  rng.shuffle(assignment);

  std::vector<std::string> names;
  for (std::size_t j = 0; j < spec.covariates; ++j) names.push_back("W" + std::to_string(j + 1));
  std::vector<aptmle::Unit> units;
  for (std::size_t i = 0; i < spec.n; ++i) {
    const std::size_t r = spec.clusters ? i % spec.clusters : i;
    aptmle::Unit u;
    u.id = "u" + std::to_string(i);
    if (spec.clusters) u.cluster_id = "c" + std::to_string(r);
    u.arm = assignment[r];
    double eta = -0.2 + spec.arm_effect * u.arm;
    for (std::size_t j = 0; j < spec.covariates; ++j) {
      u.covariates.push_back(rng.normal());
      if (j == 0) eta += spec.signal * u.covariates.back();
    }
    if (spec.binary) {
      u.outcome = rng.bernoulli(aptmle::expit(eta)) ? 1.0 : 0.0;
    } else {
      u.outcome = 5.0 + eta + rng.uniform(-1.0, 1.0);
    }
    units.push_back(u);
  }
  return aptmle::TrialDataset::from_units(units, names);
}

inline aptmle::Unit unit(std::string id, int arm, double y, std::vector<double> w = {},
                         std::optional<std::string> cluster = std::nullopt) {
  aptmle::Unit u;
  u.id = std::move(id);
  u.arm = arm;
  u.outcome = y;
  u.covariates = std::move(w);
  u.cluster_id = std::move(cluster);
  return u;
}

inline std::string join(const std::vector<std::string>& parts) {
  std::string out;
  for (const auto& p : parts) out += (out.empty() ? "" : ", ") + p;
  return out;
}

}  // namespace testing
