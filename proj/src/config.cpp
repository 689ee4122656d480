#include "aptmle/config.hpp"

#include "aptmle/error.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace aptmle {

std::string to_string(CvKind kind) {
  switch (kind) {
    case CvKind::Auto:
      return "auto";
    case CvKind::VFold:
      return "vfold";
    case CvKind::LeaveOneUnitOut:
      return "loo";
  }
  return "?";
}

std::string to_string(CvUnit unit) {
  switch (unit) {
    case CvUnit::Auto:
      return "auto";
    case CvUnit::Individual:
      return "individual";
    case CvUnit::Cluster:
      return "cluster";
  }
  return "?";
}

std::string to_string(VarianceKind kind) {
  return kind == VarianceKind::Standard ? "standard" : "cross_validated";
}

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const KeyValue& kv, const std::string& why) {
  fail(ErrorCode::Parse, "line " + std::to_string(kv.line) + ": " + kv.key + ": " + why);
}

double parse_double(const KeyValue& kv, const std::string& text) {
  double value = 0.0;
  const std::string t = trim(text);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(value)) {
    bad_value(kv, "expected a number, got '" + text + "'");
  }
  return value;
}

std::uint64_t parse_u64(const KeyValue& kv) {
  std::uint64_t value = 0;
  const std::string t = trim(kv.value);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) bad_value(kv, "expected an unsigned integer");
  return value;
}

int parse_int(const KeyValue& kv) {
  int value = 0;
  const std::string t = trim(kv.value);
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size()) bad_value(kv, "expected an integer");
  return value;
}

bool parse_bool(const KeyValue& kv) {
  if (kv.value == "true" || kv.value == "yes" || kv.value == "1") return true;
  if (kv.value == "false" || kv.value == "no" || kv.value == "0") return false;
  bad_value(kv, "expected true or false");
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ", ";
    out += items[i];
  }
  return out;
}

std::vector<LearnerSpec> parse_learners(const KeyValue& kv, LearnerRole role) {
  std::vector<LearnerSpec> out;
  for (const auto& item : split_list(kv.value)) {
    try {
      out.push_back(LearnerSpec::parse(item, role));
    } catch (const Error& e) {
      bad_value(kv, e.what());
    }
  }
  if (out.empty()) bad_value(kv, "empty candidate list");
  return out;
}

}  // namespace

std::string format_double(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  // Prefer the shortest representation that round-trips.
  for (int precision = 1; precision <= 17; ++precision) {
    char shorter[32];
    std::snprintf(shorter, sizeof shorter, "%.*g", precision, value);
    if (std::strtod(shorter, nullptr) == value) return shorter;
  }
  return buffer;
}

std::vector<KeyValue> read_key_values(const std::string& text) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::Parse, "line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    KeyValue kv{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no};
    if (kv.key.empty()) fail(ErrorCode::Parse, "line " + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  int depth = 0;
  for (char c : value) {
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (c == ',' && depth == 0) {
      if (!trim(item).empty()) out.push_back(trim(item));
      item.clear();
    } else {
      item.push_back(c);
    }
  }
  if (!trim(item).empty()) out.push_back(trim(item));
  return out;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

SapConfig SapConfig::parse(const std::string& text) {
  SapConfig cfg;
  std::set<std::string> seen;
  for (const KeyValue& kv : read_key_values(text)) {
    if (!seen.insert(kv.key).second) bad_value(kv, "duplicate key");
    const std::string& k = kv.key;
    const std::string& v = kv.value;
    if (k == "estimand") {
      if (v == "ATE") {
        cfg.estimand = Estimand::ATE;
      } else if (v == "RR") {
        cfg.estimand = Estimand::RR;
      } else {
        bad_value(kv, "expected ATE or RR");
      }
    } else if (k == "or_candidates") {
      cfg.or_candidates = parse_learners(kv, LearnerRole::OutcomeRegression);
    } else if (k == "ps_candidates") {
      cfg.ps_candidates = parse_learners(kv, LearnerRole::PropensityScore);
    } else if (k == "cv") {
      if (v == "auto") {
        cfg.cv.kind = CvKind::Auto;
      } else if (v == "loo" || v == "leave_one_unit_out") {
        cfg.cv.kind = CvKind::LeaveOneUnitOut;
      } else if (v == "vfold") {
        cfg.cv.kind = CvKind::VFold;
      } else {
        bad_value(kv, "expected auto, loo or vfold");
      }
    } else if (k == "cv_folds") {
      cfg.cv.folds = parse_int(kv);
    } else if (k == "cv_stratify") {
      cfg.cv.stratify_by_arm = parse_bool(kv);
    } else if (k == "cv_unit") {
      if (v == "auto") {
        cfg.cv.unit = CvUnit::Auto;
      } else if (v == "individual") {
        cfg.cv.unit = CvUnit::Individual;
      } else if (v == "cluster") {
        cfg.cv.unit = CvUnit::Cluster;
      } else {
        bad_value(kv, "expected auto, individual or cluster");
      }
    } else if (k == "variance") {
      if (v == "standard") {
        cfg.variance_kind = VarianceKind::Standard;
      } else if (v == "cross_validated") {
        cfg.variance_kind = VarianceKind::CrossValidated;
      } else {
        bad_value(kv, "expected standard or cross_validated");
      }
    } else if (k == "seed") {
      cfg.seed = parse_u64(kv);
    } else if (k == "outcome_bounds") {
      const auto parts = split_list(v);
      if (parts.size() != 2) bad_value(kv, "expected 'lower, upper'");
      cfg.outcome_bounds = std::make_pair(parse_double(kv, parts[0]), parse_double(kv, parts[1]));
    } else if (k == "alpha") {
      cfg.alpha = parse_double(kv, v);
    } else if (k == "id_column") {
      cfg.schema.id_column = v;
    } else if (k == "arm_column") {
      cfg.schema.arm_column = v;
    } else if (k == "outcome_column") {
      cfg.schema.outcome_column = v;
    } else if (k == "cluster_column") {
      if (v.empty()) {
        cfg.schema.cluster_column.reset();
      } else {
        cfg.schema.cluster_column = v;
      }
    } else if (k == "covariates") {
      cfg.schema.covariates = split_list(v);
    } else if (k == "categorical") {
      cfg.schema.categorical = split_list(v);
    } else if (k == "screen_p") {
      cfg.learners.screen_p = parse_double(kv, v);
    } else if (k == "mars_max_terms") {
      cfg.learners.mars_max_terms = parse_int(kv);
    } else if (k == "mars_penalty") {
      cfg.learners.mars_penalty = parse_double(kv, v);
    } else if (k == "mars_max_knots") {
      cfg.learners.mars_max_knots = parse_int(kv);
    } else if (k == "mars_min_r2_gain") {
      cfg.learners.mars_min_r2_gain = parse_double(kv, v);
    } else if (k == "lasso_path_length") {
      cfg.learners.lasso_path_length = parse_int(kv);
    } else if (k == "lasso_min_ratio") {
      cfg.learners.lasso_min_ratio = parse_double(kv, v);
    } else if (k == "lasso_folds") {
      cfg.learners.lasso_folds = parse_int(kv);
    } else {
      bad_value(kv, "unknown key");
    }
  }
  cfg.validate();
  return cfg;
}

SapConfig SapConfig::load(const std::string& path) { return parse(read_text_file(path)); }

void SapConfig::validate() const {
  const auto has_unadjusted = [](const std::vector<LearnerSpec>& list) {
    return std::any_of(list.begin(), list.end(), [](const LearnerSpec& s) { return s.is_unadjusted(); });
  };
  if (!has_unadjusted(or_candidates)) {
    fail(ErrorCode::Config,
         "or_candidates must include 'unadjusted': the unadjusted estimator must be included as a "
         "candidate for the outcome regression and as a candidate for the propensity score");
  }
  if (!has_unadjusted(ps_candidates)) {
    fail(ErrorCode::Config,
         "ps_candidates must include 'unadjusted': the unadjusted estimator must be included as a "
         "candidate for the outcome regression and as a candidate for the propensity score");
  }
  for (const auto& s : or_candidates) {
    if (s.role != LearnerRole::OutcomeRegression) fail(ErrorCode::Config, "or_candidates holds a propensity spec");
  }
  for (const auto& s : ps_candidates) {
    if (s.role != LearnerRole::PropensityScore) fail(ErrorCode::Config, "ps_candidates holds an outcome spec");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) fail(ErrorCode::Config, "alpha must lie in (0,1)");
  if (cv.folds < 2) fail(ErrorCode::Config, "cv_folds must be at least 2");
  if (outcome_bounds) {
    if (!(outcome_bounds->first < outcome_bounds->second)) {
      fail(ErrorCode::Config, "outcome_bounds must satisfy lower < upper");
    }
    if (estimand == Estimand::RR && outcome_bounds->first != 0.0) {
      fail(ErrorCode::Config, "estimand RR requires an outcome lower bound of 0");
    }
  }
  if (!(learners.screen_p > 0.0 && learners.screen_p <= 1.0)) fail(ErrorCode::Config, "screen_p must lie in (0,1]");
  if (learners.mars_max_terms < 1) fail(ErrorCode::Config, "mars_max_terms must be positive");
  if (learners.lasso_path_length < 2) fail(ErrorCode::Config, "lasso_path_length must be at least 2");
  if (!(learners.lasso_min_ratio > 0.0 && learners.lasso_min_ratio < 1.0)) {
    fail(ErrorCode::Config, "lasso_min_ratio must lie in (0,1)");
  }
  if (learners.lasso_folds < 2) fail(ErrorCode::Config, "lasso_folds must be at least 2");
  for (const auto& c : schema.categorical) {
    if (std::find(schema.covariates.begin(), schema.covariates.end(), c) == schema.covariates.end()) {
      fail(ErrorCode::Config, "categorical column '" + c + "' is not listed among covariates");
    }
  }
}

std::string SapConfig::to_text() const {
  std::vector<std::string> or_list;
  std::vector<std::string> ps_list;
  for (const auto& s : or_candidates) or_list.push_back(s.to_string());
  for (const auto& s : ps_candidates) ps_list.push_back(s.to_string());

  std::ostringstream out;
  out << "estimand = " << to_string(estimand) << "\n";
  out << "or_candidates = " << join(or_list) << "\n";
  out << "ps_candidates = " << join(ps_list) << "\n";
  out << "cv = " << to_string(cv.kind) << "\n";
  out << "cv_folds = " << cv.folds << "\n";
  out << "cv_stratify = " << (cv.stratify_by_arm ? "true" : "false") << "\n";
  out << "cv_unit = " << to_string(cv.unit) << "\n";
  out << "variance = " << to_string(variance_kind) << "\n";
  out << "seed = " << seed << "\n";
  if (outcome_bounds) {
    out << "outcome_bounds = " << format_double(outcome_bounds->first) << ", "
        << format_double(outcome_bounds->second) << "\n";
  }
  out << "alpha = " << format_double(alpha) << "\n";
  out << "id_column = " << schema.id_column << "\n";
  out << "arm_column = " << schema.arm_column << "\n";
  out << "outcome_column = " << schema.outcome_column << "\n";
  if (schema.cluster_column) out << "cluster_column = " << *schema.cluster_column << "\n";
  out << "covariates = " << join(schema.covariates) << "\n";
  out << "categorical = " << join(schema.categorical) << "\n";
  out << "screen_p = " << format_double(learners.screen_p) << "\n";
  out << "mars_max_terms = " << learners.mars_max_terms << "\n";
  out << "mars_penalty = " << format_double(learners.mars_penalty) << "\n";
  out << "mars_max_knots = " << learners.mars_max_knots << "\n";
  out << "mars_min_r2_gain = " << format_double(learners.mars_min_r2_gain) << "\n";
  out << "lasso_path_length = " << learners.lasso_path_length << "\n";
  out << "lasso_min_ratio = " << format_double(learners.lasso_min_ratio) << "\n";
  out << "lasso_folds = " << learners.lasso_folds << "\n";
  return out.str();
}

std::optional<std::pair<double, double>> effective_bounds(const SapConfig& config, const TrialDataset& data) {
  if (config.outcome_bounds) return config.outcome_bounds;
  if (config.estimand != Estimand::RR) return std::nullopt;
  const Eigen::VectorXd& y = data.outcome();
  if (y.minCoeff() < 0.0) fail(ErrorCode::Config, "estimand RR requires a nonnegative outcome");
  const bool zero_one = (y.array() == 0.0 || y.array() == 1.0).all();
  if (zero_one) return std::make_pair(0.0, 1.0);
  return std::make_pair(0.0, y.maxCoeff());
}

ResolvedCv resolve_cv(const CvScheme& scheme, const TrialDataset& data) {
  ResolvedCv out;
  out.stratify_by_arm = scheme.stratify_by_arm;
  switch (scheme.unit) {
    case CvUnit::Auto:
      out.cluster_level = data.has_clusters();
      break;
    case CvUnit::Individual:
      // Cluster-randomized trials must keep clusters intact across splits.
      out.cluster_level = data.has_clusters() && data.cluster_randomized();
      break;
    case CvUnit::Cluster:
      if (!data.has_clusters()) fail(ErrorCode::Config, "cv_unit = cluster but the data have no cluster column");
      out.cluster_level = true;
      break;
  }
  const std::size_t units = out.cluster_level ? data.num_clusters() : data.size();
  CvKind kind = scheme.kind;
  if (kind == CvKind::Auto) kind = units <= kLeaveOneOutMaxUnits ? CvKind::LeaveOneUnitOut : CvKind::VFold;
  out.kind = kind;
  out.folds = kind == CvKind::LeaveOneUnitOut ? units : static_cast<std::size_t>(scheme.kind == CvKind::Auto ? 10 : scheme.folds);
  return out;
}

}  // namespace aptmle
