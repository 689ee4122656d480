#include "aptmle/simulation.hpp"

#include "aptmle/error.hpp"
#include "aptmle/rng.hpp"
#include "aptmle/selection.hpp"
#include "aptmle/stats.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <optional>
#include <set>
#include <sstream>

namespace aptmle {

double CovariateGenerator::draw(Rng& rng) const {
  switch (family) {
    case Family::Normal:
      return rng.normal(a, b);
    case Family::Uniform:
      return rng.uniform(a, b);
    case Family::Bernoulli:
      return rng.bernoulli(a) ? 1.0 : 0.0;
  }
  return 0.0;
}

double CovariateGenerator::mean() const {
  switch (family) {
    case Family::Normal:
      return a;
    case Family::Uniform:
      return 0.5 * (a + b);
    case Family::Bernoulli:
      return a;
  }
  return 0.0;
}

double CovariateGenerator::second_moment() const {
  switch (family) {
    case Family::Normal:
      return a * a + b * b;
    case Family::Uniform:
      return (a * a + a * b + b * b) / 3.0;
    case Family::Bernoulli:
      return a;
  }
  return 0.0;
}

std::string CovariateGenerator::to_string() const {
  switch (family) {
    case Family::Normal:
      return name + ":normal(" + format_double(a) + "," + format_double(b) + ")";
    case Family::Uniform:
      return name + ":uniform(" + format_double(a) + "," + format_double(b) + ")";
    case Family::Bernoulli:
      return name + ":bernoulli(" + format_double(a) + ")";
  }
  return name;
}

namespace {

[[noreturn]] void bad_field(const KeyValue& kv, const std::string& why) {
  fail(ErrorCode::Parse, "line " + std::to_string(kv.line) + ": " + kv.key + ": " + why);
}

double number(const KeyValue& kv, std::string text) {
  const auto first = text.find_first_not_of(" \t");
  const auto last = text.find_last_not_of(" \t");
  text = first == std::string::npos ? "" : text.substr(first, last - first + 1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    bad_field(kv, "expected a number, got '" + text + "'");
  }
  return value;
}

std::size_t count(const KeyValue& kv) {
  std::size_t value = 0;
  auto [ptr, ec] = std::from_chars(kv.value.data(), kv.value.data() + kv.value.size(), value);
  if (ec != std::errc() || ptr != kv.value.data() + kv.value.size()) bad_field(kv, "expected a non-negative integer");
  return value;
}

CovariateGenerator parse_generator(const KeyValue& kv, const std::string& item) {
  const auto colon = item.find(':');
  const auto open = item.find('(');
  const auto close = item.rfind(')');
  if (colon == std::string::npos || open == std::string::npos || close == std::string::npos || open < colon ||
      close != item.size() - 1) {
    bad_field(kv, "expected name:family(params), got '" + item + "'");
  }
  CovariateGenerator g;
  g.name = item.substr(0, colon);
  const std::string family = item.substr(colon + 1, open - colon - 1);
  const auto params = split_list(item.substr(open + 1, close - open - 1));
  if (g.name.empty() || g.name == "A") bad_field(kv, "invalid covariate name '" + g.name + "'");
  if (family == "normal" || family == "uniform") {
    if (params.size() != 2) bad_field(kv, family + " takes two parameters");
    g.family = family == "normal" ? CovariateGenerator::Family::Normal : CovariateGenerator::Family::Uniform;
    g.a = number(kv, params[0]);
    g.b = number(kv, params[1]);
    if (family == "normal" && g.b < 0.0) bad_field(kv, "normal sd must be non-negative");
    if (family == "uniform" && !(g.a < g.b)) bad_field(kv, "uniform needs lower < upper");
  } else if (family == "bernoulli") {
    if (params.size() != 1) bad_field(kv, "bernoulli takes one parameter");
    g.family = CovariateGenerator::Family::Bernoulli;
    g.a = number(kv, params[0]);
    if (!(g.a >= 0.0 && g.a <= 1.0)) bad_field(kv, "bernoulli p must lie in [0,1]");
  } else {
    bad_field(kv, "unknown distribution '" + family + "'");
  }
  return g;
}

LinearTerm parse_term(const KeyValue& kv, const std::string& item) {
  const auto colon = item.rfind(':');
  if (colon == std::string::npos) bad_field(kv, "expected term:coefficient, got '" + item + "'");
  LinearTerm t;
  const std::string name = item.substr(0, colon);
  t.coefficient = number(kv, item.substr(colon + 1));
  const auto star = name.find('*');
  if (star == std::string::npos) {
    t.first = name;
  } else {
    t.first = name.substr(0, star);
    t.second = name.substr(star + 1);
  }
  return t;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
  return out;
}

}  // namespace

DgpSpec DgpSpec::parse(const std::string& text) {
  DgpSpec dgp;
  std::set<std::string> seen;
  std::optional<KeyValue> terms_line;
  for (const KeyValue& kv : read_key_values(text)) {
    if (!seen.insert(kv.key).second) bad_field(kv, "duplicate key");
    const std::string& k = kv.key;
    if (k == "n") {
      dgp.n = count(kv);
    } else if (k == "clusters") {
      dgp.clusters = count(kv);
    } else if (k == "cluster_sd") {
      dgp.cluster_sd = number(kv, kv.value);
    } else if (k == "treat_prob") {
      dgp.treat_prob = number(kv, kv.value);
    } else if (k == "outcome") {
      if (kv.value == "binary") {
        dgp.outcome = OutcomeFamily::Binary;
      } else if (kv.value == "continuous") {
        dgp.outcome = OutcomeFamily::Continuous;
      } else {
        bad_field(kv, "expected binary or continuous");
      }
    } else if (k == "noise") {
      dgp.noise = number(kv, kv.value);
    } else if (k == "covariates") {
      dgp.covariates.clear();
      for (const auto& item : split_list(kv.value)) dgp.covariates.push_back(parse_generator(kv, item));
    } else if (k == "intercept") {
      dgp.intercept = number(kv, kv.value);
    } else if (k == "terms") {
      dgp.terms.clear();
      for (const auto& item : split_list(kv.value)) dgp.terms.push_back(parse_term(kv, item));
      terms_line = kv;
    } else if (k == "true_effect") {
      if (kv.value == "auto") {
        dgp.declared_true_effect.reset();
      } else {
        dgp.declared_true_effect = number(kv, kv.value);
      }
    } else if (k == "oracle_draws") {
      dgp.oracle_draws = count(kv);
    } else {
      bad_field(kv, "unknown key");
    }
  }
  // Term names can only be checked once every covariate is known.
  if (terms_line) {
    std::set<std::string> names{"A"};
    for (const auto& g : dgp.covariates) names.insert(g.name);
    for (const auto& t : dgp.terms) {
      for (const auto* name : {&t.first, t.second ? &*t.second : nullptr}) {
        if (name && !names.count(*name)) bad_field(*terms_line, "unknown variable '" + *name + "'");
      }
    }
  }
  dgp.validate();
  return dgp;
}

DgpSpec DgpSpec::load(const std::string& path) { return parse(read_text_file(path)); }

void DgpSpec::validate() const {
  if (!(treat_prob > 0.0 && treat_prob < 1.0)) fail(ErrorCode::Config, "treat_prob must lie in (0,1)");
  if (noise < 0.0) fail(ErrorCode::Config, "noise must be non-negative");
  if (cluster_sd < 0.0) fail(ErrorCode::Config, "cluster_sd must be non-negative");
  if (oracle_draws == 0) fail(ErrorCode::Config, "oracle_draws must be positive");
  const std::size_t units = clusters > 0 ? clusters : n;
  const auto treated = static_cast<std::size_t>(std::llround(treat_prob * static_cast<double>(units)));
  if (treated < 2 || units - treated < 2) fail(ErrorCode::Config, "each arm needs at least two randomized units");
  if (clusters > 0 && n % clusters != 0) fail(ErrorCode::Config, "n must be a multiple of clusters");
  std::set<std::string> names{"A"};
  for (const auto& g : covariates) {
    if (!names.insert(g.name).second) fail(ErrorCode::Config, "duplicate covariate '" + g.name + "'");
  }
  for (const auto& t : terms) {
    if (!names.count(t.first) || (t.second && !names.count(*t.second))) {
      fail(ErrorCode::Config, "term references an unknown variable");
    }
  }
}

std::string DgpSpec::to_text() const {
  std::vector<std::string> gens;
  for (const auto& g : covariates) gens.push_back(g.to_string());
  std::vector<std::string> coefs;
  for (const auto& t : terms) {
    coefs.push_back(t.first + (t.second ? "*" + *t.second : "") + ":" + format_double(t.coefficient));
  }
  std::ostringstream out;
  out << "n = " << n << "\n";
  out << "clusters = " << clusters << "\n";
  out << "cluster_sd = " << format_double(cluster_sd) << "\n";
  out << "treat_prob = " << format_double(treat_prob) << "\n";
  out << "outcome = " << (outcome == OutcomeFamily::Binary ? "binary" : "continuous") << "\n";
  out << "noise = " << format_double(noise) << "\n";
  out << "covariates = " << join(gens) << "\n";
  out << "intercept = " << format_double(intercept) << "\n";
  out << "terms = " << join(coefs) << "\n";
  out << "true_effect = " << (declared_true_effect ? format_double(*declared_true_effect) : "auto") << "\n";
  out << "oracle_draws = " << oracle_draws << "\n";
  return out.str();
}

namespace {

// Index of a variable in (A, covariates...) order: 0 is the arm.
std::size_t variable_index(const DgpSpec& dgp, const std::string& name) {
  if (name == "A") return 0;
  for (std::size_t j = 0; j < dgp.covariates.size(); ++j) {
    if (dgp.covariates[j].name == name) return j + 1;
  }
  fail(ErrorCode::Config, "unknown variable '" + name + "'");
}

double variable_value(std::size_t index, int arm, const std::vector<double>& w) {
  return index == 0 ? static_cast<double>(arm) : w[index - 1];
}

}  // namespace

double DgpSpec::linear_predictor(int arm, const std::vector<double>& w, double cluster_effect) const {
  double eta = intercept + cluster_effect;
  for (const auto& t : terms) {
    double value = variable_value(variable_index(*this, t.first), arm, w);
    if (t.second) value *= variable_value(variable_index(*this, *t.second), arm, w);
    eta += t.coefficient * value;
  }
  return eta;
}

TrueEffect true_effect(const DgpSpec& dgp, Estimand estimand, std::uint64_t seed) {
  TrueEffect out;
  const auto contrast = [&](double psi1, double psi0) { return estimand == Estimand::ATE ? psi1 - psi0 : psi1 / psi0; };

  if (dgp.outcome == OutcomeFamily::Continuous) {
    // E[linear predictor | A = a]; covariates are independent, cluster effects mean zero.
    const auto expected = [&](int arm) {
      double total = dgp.intercept;
      for (const auto& t : dgp.terms) {
        const std::size_t i = variable_index(dgp, t.first);
        const auto moment = [&](std::size_t idx) {
          return idx == 0 ? static_cast<double>(arm) : dgp.covariates[idx - 1].mean();
        };
        double m = moment(i);
        if (t.second) {
          const std::size_t j = variable_index(dgp, *t.second);
          if (i == j && i != 0) {
            m = dgp.covariates[i - 1].second_moment();
          } else {
            m *= moment(j);
          }
        }
        total += t.coefficient * m;
      }
      return total;
    };
    out.psi1 = expected(1);
    out.psi0 = expected(0);
    out.method = "analytic";
  } else {
    Rng rng(child_seed(seed, 0x7E0E));
    std::vector<double> w(dgp.covariates.size());
    double sum1 = 0.0;
    double sum0 = 0.0;
    for (std::size_t d = 0; d < dgp.oracle_draws; ++d) {
      for (std::size_t j = 0; j < w.size(); ++j) w[j] = dgp.covariates[j].draw(rng);
      const double u = dgp.cluster_sd > 0.0 ? rng.normal(0.0, dgp.cluster_sd) : 0.0;
      sum1 += expit(dgp.linear_predictor(1, w, u));
      sum0 += expit(dgp.linear_predictor(0, w, u));
    }
    out.psi1 = sum1 / static_cast<double>(dgp.oracle_draws);
    out.psi0 = sum0 / static_cast<double>(dgp.oracle_draws);
    out.method = "monte_carlo";
  }
  out.value = contrast(out.psi1, out.psi0);
  if (dgp.declared_true_effect) {
    out.value = *dgp.declared_true_effect;
    out.method = "declared";
  }
  return out;
}

TrialDataset generate_trial(const DgpSpec& dgp, std::uint64_t seed) {
  Rng rng(seed);
  const bool clustered = dgp.clusters > 0;
  const std::size_t randomized = clustered ? dgp.clusters : dgp.n;
  const std::size_t cluster_size = clustered ? dgp.n / dgp.clusters : 1;

  // Exactly round(p * units) treated, in shuffled positions.
  const auto treated = static_cast<std::size_t>(std::llround(dgp.treat_prob * static_cast<double>(randomized)));
  std::vector<int> assignment(randomized, 0);
  std::fill(assignment.begin(), assignment.begin() + static_cast<std::ptrdiff_t>(treated), 1);
  rng.shuffle(assignment);

  std::vector<double> cluster_effect(randomized, 0.0);
  if (clustered && dgp.cluster_sd > 0.0) {
    for (auto& u : cluster_effect) u = rng.normal(0.0, dgp.cluster_sd);
  }

  std::vector<std::string> names;
  for (const auto& g : dgp.covariates) names.push_back(g.name);
  std::vector<Unit> units;
  units.reserve(dgp.n);
  for (std::size_t i = 0; i < dgp.n; ++i) {
    const std::size_t r = clustered ? i / cluster_size : i;
    Unit unit;
    unit.id = "u" + std::to_string(i + 1);
    if (clustered) unit.cluster_id = "c" + std::to_string(r + 1);
    unit.arm = assignment[r];
    unit.covariates.resize(dgp.covariates.size());
    for (std::size_t j = 0; j < dgp.covariates.size(); ++j) unit.covariates[j] = dgp.covariates[j].draw(rng);
    const double eta = dgp.linear_predictor(unit.arm, unit.covariates, cluster_effect[r]);
    if (dgp.outcome == OutcomeFamily::Binary) {
      unit.outcome = rng.bernoulli(expit(eta)) ? 1.0 : 0.0;
    } else {
      unit.outcome = eta + (dgp.noise > 0.0 ? rng.uniform(-dgp.noise, dgp.noise) : 0.0);
    }
    units.push_back(std::move(unit));
  }
  return TrialDataset::from_units(units, names);
}

double sample_size_savings(double mse_adjusted, double mse_unadjusted) {
  if (mse_unadjusted == 0.0) fail(ErrorCode::Numeric, "sample size savings undefined: unadjusted MSE is zero");
  if (mse_adjusted < 0.0 || mse_unadjusted < 0.0) fail(ErrorCode::InvalidArgument, "MSE values must be positive");
  return 1.0 - mse_adjusted / mse_unadjusted;
}

namespace {

struct Accumulator {
  std::vector<double> estimates;
  double estimated_variance = 0.0;
  std::size_t covered = 0;
  std::size_t rejected = 0;

  EstimatorSummary summarize(const std::string& name, double truth) const {
    EstimatorSummary s;
    s.name = name;
    s.replicates = estimates.size();
    if (estimates.empty()) return s;
    const double r = static_cast<double>(estimates.size());
    double sum = 0.0;
    for (double e : estimates) sum += e;
    s.mean_estimate = sum / r;
    s.bias = s.mean_estimate - truth;
    double ss = 0.0;
    double se = 0.0;
    for (double e : estimates) {
      ss += (e - s.mean_estimate) * (e - s.mean_estimate);
      se += (e - truth) * (e - truth);
    }
    s.empirical_variance = ss / r;
    s.mse = se / r;
    s.mean_estimated_variance = estimated_variance / r;
    s.coverage = static_cast<double>(covered) / r;
    s.rejection_rate = static_cast<double>(rejected) / r;
    std::tie(s.rejection_ci_lo, s.rejection_ci_hi) = clopper_pearson(rejected, estimates.size());
    return s;
  }
};

double null_value(Estimand estimand) { return estimand == Estimand::ATE ? 0.0 : 1.0; }

}  // namespace

SimResult run_parametric_sim(const DgpSpec& dgp, const SapConfig& config, std::size_t reps, std::uint64_t seed) {
  if (reps < 1) fail(ErrorCode::InvalidArgument, "reps must be at least 1");
  dgp.validate();
  config.validate();

  SimResult out;
  out.reps = reps;
  out.seed = seed;
  out.estimand = config.estimand;
  out.alpha = config.alpha;
  out.truth = true_effect(dgp, config.estimand, seed);
  const double null = null_value(config.estimand);

  Accumulator adaptive;
  Accumulator unadjusted;
  double gain_sum = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    ReplicateRecord rec;
    rec.index = r;
    rec.seed = child_seed(seed, r);
    try {
      const TrialDataset data = generate_trial(dgp, rec.seed);
      SapConfig cfg = config;
      cfg.seed = rec.seed;
      const Selection sel = run_adaptive_prespec(cfg, data);
      rec.or_spec = sel.or_spec.to_string();
      rec.ps_spec = sel.ps_spec.to_string();
      rec.adaptive_estimate = sel.selected.estimate;
      rec.adaptive_se = sel.selected.se;
      rec.adaptive_rejects = sel.selected.excludes(null);
      rec.adaptive_covers = !sel.selected.excludes(out.truth.value);
      rec.unadjusted_estimate = sel.unadjusted.estimate;
      rec.unadjusted_se = sel.unadjusted.se;
      rec.unadjusted_rejects = sel.unadjusted.excludes(null);
      rec.unadjusted_covers = !sel.unadjusted.excludes(out.truth.value);
      rec.precision_gain = sel.precision_gain;

      adaptive.estimates.push_back(rec.adaptive_estimate);
      adaptive.estimated_variance += sel.selected.variance();
      adaptive.covered += rec.adaptive_covers;
      adaptive.rejected += rec.adaptive_rejects;
      unadjusted.estimates.push_back(rec.unadjusted_estimate);
      unadjusted.estimated_variance += sel.unadjusted.variance();
      unadjusted.covered += rec.unadjusted_covers;
      unadjusted.rejected += rec.unadjusted_rejects;
      gain_sum += rec.precision_gain;
      ++out.or_selections[rec.or_spec];
      ++out.ps_selections[rec.ps_spec];
    } catch (const Error& e) {
      rec.failed = true;
      rec.error = e.what();
      ++out.failures;
    }
    out.records.push_back(std::move(rec));
  }

  out.adaptive = adaptive.summarize("adaptive_tmle", out.truth.value);
  out.unadjusted = unadjusted.summarize("unadjusted", out.truth.value);
  const std::size_t ok = adaptive.estimates.size();
  if (ok > 0) {
    out.mean_precision_gain = gain_sum / static_cast<double>(ok);
    out.relative_precision = out.adaptive.mse > 0.0 ? out.unadjusted.mse / out.adaptive.mse : std::nan("");
    out.sample_size_savings =
        out.unadjusted.mse > 0.0 ? sample_size_savings(out.adaptive.mse, out.unadjusted.mse) : std::nan("");
  }
  return out;
}

std::uint64_t count_assignments(std::size_t n, std::size_t k, std::uint64_t cap) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  // Multiplicative form stays exact: each partial product is itself a binomial coefficient.
  unsigned __int128 value = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    value = value * (n - k + i) / i;
    if (value > cap) return cap;
  }
  return static_cast<std::uint64_t>(value);
}

PermutationResult run_permutation_check(const TrialDataset& data, const SapConfig& config, std::size_t reps,
                                        std::uint64_t seed) {
  if (reps < 1) fail(ErrorCode::InvalidArgument, "reps must be at least 1");
  config.validate();

  PermutationResult out;
  out.reps_requested = reps;
  out.cluster_level = data.has_clusters() && data.cluster_randomized();
  const std::size_t units = out.cluster_level ? data.num_clusters() : data.size();
  out.independent_units = units;

  std::vector<int> unit_arm(units, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    unit_arm[out.cluster_level ? data.independent_unit_of(i) : i] =
        static_cast<int>(data.arm()(static_cast<Eigen::Index>(i)));
  }
  out.treated_units = static_cast<std::size_t>(std::count(unit_arm.begin(), unit_arm.end(), 1));

  const auto relabel = [&](const std::vector<int>& assignment) {
    Eigen::VectorXd arm(static_cast<Eigen::Index>(data.size()));
    for (std::size_t i = 0; i < data.size(); ++i) {
      arm(static_cast<Eigen::Index>(i)) = assignment[out.cluster_level ? data.independent_unit_of(i) : i];
    }
    return data.with_arm(arm);
  };

  std::vector<std::vector<int>> assignments;
  const std::uint64_t distinct = count_assignments(units, out.treated_units, reps + 1);
  if (distinct <= reps) {
    out.exhaustive = true;
    // Lexicographic enumeration of treated subsets.
    std::vector<int> mask(units, 0);
    std::fill(mask.end() - static_cast<std::ptrdiff_t>(out.treated_units), mask.end(), 1);
    do {
      assignments.push_back(mask);
    } while (std::next_permutation(mask.begin(), mask.end()));
  } else {
    for (std::size_t r = 0; r < reps; ++r) {
      std::vector<int> permuted = unit_arm;
      Rng rng(child_seed(seed, r));
      rng.shuffle(permuted);
      assignments.push_back(std::move(permuted));
    }
  }

  const double null = null_value(config.estimand);
  for (std::size_t r = 0; r < assignments.size(); ++r) {
    try {
      SapConfig cfg = config;
      cfg.seed = child_seed(seed, r);
      const Selection sel = run_adaptive_prespec(cfg, relabel(assignments[r]));
      out.estimates.push_back(sel.selected.estimate);
      out.rejections += sel.selected.excludes(null);
    } catch (const Error&) {
      ++out.failures;
    }
  }
  out.replicates = out.estimates.size();
  if (out.replicates > 0) {
    out.rate = static_cast<double>(out.rejections) / static_cast<double>(out.replicates);
    std::tie(out.ci_lo, out.ci_hi) = clopper_pearson(out.rejections, out.replicates);
  }
  return out;
}

}  // namespace aptmle
