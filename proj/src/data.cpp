#include "aptmle/data.hpp"

#include "aptmle/error.hpp"
#include "aptmle/tmle.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace aptmle {

std::string to_string(Estimand estimand) { return estimand == Estimand::ATE ? "ATE" : "RR"; }

TrialDataset TrialDataset::from_units(const std::vector<Unit>& units,
                                      std::vector<std::string> covariate_names,
                                      std::vector<CovariateGroup> groups) {
  const std::size_t n = units.size();
  const std::size_t p = covariate_names.size();

  TrialDataset data;
  data.ids_.reserve(n);
  data.arm_.resize(static_cast<Eigen::Index>(n));
  data.outcome_.resize(static_cast<Eigen::Index>(n));
  data.covariates_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));

  std::unordered_set<std::string> seen;
  std::vector<std::string> row_clusters;
  std::size_t with_cluster = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Unit& u = units[i];
    const auto row = static_cast<Eigen::Index>(i);
    if (!seen.insert(u.id).second) fail(ErrorCode::Data, "duplicate unit id '" + u.id + "'");
    if (u.arm != 0 && u.arm != 1) {
      fail(ErrorCode::Data, "unit '" + u.id + "': arm not in {0,1}");
    }
    if (!std::isfinite(u.outcome)) fail(ErrorCode::Data, "unit '" + u.id + "': outcome is not finite");
    if (u.covariates.size() != p) {
      fail(ErrorCode::Data, "unit '" + u.id + "': expected " + std::to_string(p) + " covariates");
    }
    for (std::size_t j = 0; j < p; ++j) {
      if (!std::isfinite(u.covariates[j])) {
        fail(ErrorCode::Data, "unit '" + u.id + "': covariate '" + covariate_names[j] + "' is not finite");
      }
      data.covariates_(row, static_cast<Eigen::Index>(j)) = u.covariates[j];
    }
    data.ids_.push_back(u.id);
    data.arm_(row) = u.arm;
    data.outcome_(row) = u.outcome;
    if (u.cluster_id) ++with_cluster;
    row_clusters.push_back(u.cluster_id.value_or(""));
  }
  for (int a : {0, 1}) {
    if (data.arm_count(a) < 2) {
      fail(ErrorCode::Data, "arm " + std::to_string(a) + " has fewer than 2 units");
    }
  }
  if (with_cluster != 0 && with_cluster != n) {
    fail(ErrorCode::Data, "cluster id present for some units but not all");
  }

  if (groups.empty()) {
    for (std::size_t j = 0; j < p; ++j) groups.push_back({covariate_names[j], {j}});
  }
  data.covariate_names_ = std::move(covariate_names);
  data.groups_ = std::move(groups);
  if (with_cluster == n && n > 0) data.index_clusters(row_clusters);
  return data;
}

void TrialDataset::index_clusters(const std::vector<std::string>& row_cluster_ids) {
  has_clusters_ = true;
  cluster_ids_.clear();
  cluster_of_.assign(row_cluster_ids.size(), 0);
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < row_cluster_ids.size(); ++i) {
    auto [it, inserted] = index.emplace(row_cluster_ids[i], cluster_ids_.size());
    if (inserted) cluster_ids_.push_back(row_cluster_ids[i]);
    cluster_of_[i] = it->second;
  }
  std::vector<int> cluster_arm(cluster_ids_.size(), -1);
  cluster_randomized_ = true;
  for (std::size_t i = 0; i < cluster_of_.size(); ++i) {
    const int a = static_cast<int>(arm_(static_cast<Eigen::Index>(i)));
    int& c = cluster_arm[cluster_of_[i]];
    if (c == -1) {
      c = a;
    } else if (c != a) {
      cluster_randomized_ = false;
    }
  }
}

std::optional<std::vector<std::size_t>> TrialDataset::find_covariate(const std::string& name) const {
  for (const auto& g : groups_) {
    if (g.name == name) return g.columns;
  }
  for (std::size_t j = 0; j < covariate_names_.size(); ++j) {
    if (covariate_names_[j] == name) return std::vector<std::size_t>{j};
  }
  return std::nullopt;
}

std::size_t TrialDataset::num_independent_units() const {
  return has_clusters_ ? cluster_ids_.size() : ids_.size();
}

std::size_t TrialDataset::independent_unit_of(std::size_t row) const {
  return has_clusters_ ? cluster_of_[row] : row;
}

std::size_t TrialDataset::arm_count(int arm) const {
  std::size_t count = 0;
  for (Eigen::Index i = 0; i < arm_.size(); ++i) {
    if (static_cast<int>(arm_(i)) == arm) ++count;
  }
  return count;
}

Unit TrialDataset::unit(std::size_t row) const {
  const auto r = static_cast<Eigen::Index>(row);
  Unit u;
  u.id = ids_[row];
  if (has_clusters_) u.cluster_id = cluster_ids_[cluster_of_[row]];
  u.arm = static_cast<int>(arm_(r));
  u.outcome = outcome_(r);
  u.covariates.resize(num_covariates());
  for (std::size_t j = 0; j < num_covariates(); ++j) {
    u.covariates[j] = covariates_(r, static_cast<Eigen::Index>(j));
  }
  return u;
}

TrialDataset TrialDataset::subset(const std::vector<std::size_t>& rows) const {
  TrialDataset out;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.arm_.resize(m);
  out.outcome_.resize(m);
  out.covariates_.resize(m, covariates_.cols());
  std::vector<std::string> clusters;
  for (Eigen::Index k = 0; k < m; ++k) {
    const std::size_t i = rows[static_cast<std::size_t>(k)];
    const auto r = static_cast<Eigen::Index>(i);
    out.ids_.push_back(ids_[i]);
    out.arm_(k) = arm_(r);
    out.outcome_(k) = outcome_(r);
    out.covariates_.row(k) = covariates_.row(r);
    if (has_clusters_) clusters.push_back(cluster_ids_[cluster_of_[i]]);
  }
  out.covariate_names_ = covariate_names_;
  out.groups_ = groups_;
  if (has_clusters_) out.index_clusters(clusters);
  out.fingerprint_ = fingerprint_;
  return out;
}

TrialDataset TrialDataset::with_outcome(Eigen::VectorXd outcome) const {
  if (outcome.size() != outcome_.size()) fail(ErrorCode::InvalidArgument, "outcome length mismatch");
  TrialDataset out = *this;
  out.outcome_ = std::move(outcome);
  return out;
}

TrialDataset TrialDataset::with_arm(const Eigen::VectorXd& arm) const {
  if (arm.size() != arm_.size()) fail(ErrorCode::InvalidArgument, "arm length mismatch");
  std::vector<Unit> units;
  units.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    Unit u = unit(i);
    u.arm = static_cast<int>(arm(static_cast<Eigen::Index>(i)));
    units.push_back(std::move(u));
  }
  TrialDataset out = from_units(units, covariate_names_, groups_);
  out.fingerprint_ = fingerprint_;
  return out;
}

TrialDataset TrialDataset::without_clusters() const {
  TrialDataset out = *this;
  out.has_clusters_ = false;
  out.cluster_randomized_ = false;
  out.cluster_ids_.clear();
  out.cluster_of_.clear();
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (quoted) fail(ErrorCode::Parse, "line " + std::to_string(line_no) + ": unterminated quote");
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool is_missing(const std::string& value) {
  return value.empty() || value == "NA" || value == "NaN" || value == "nan" || value == ".";
}

std::optional<double> parse_number(const std::string& text) {
  double value = 0.0;
  const char* begin = text.data();
  const char* end = begin + text.size();
  if (begin != end && *begin == '+') ++begin;
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

TrialDataset parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) {
      header = split_csv_line(line, line_no);
      break;
    }
  }
  if (header.empty()) fail(ErrorCode::Data, "CSV has no header row");
  for (auto& h : header) h = trim(h);
  if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);

  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorCode::Data, "missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::optional<std::size_t> id_col =
      schema.id_column.empty() ? std::nullopt : std::optional<std::size_t>(column(schema.id_column));
  const std::size_t arm_col = column(schema.arm_column);
  const std::size_t y_col = column(schema.outcome_column);
  const std::optional<std::size_t> cluster_col =
      schema.cluster_column ? std::optional<std::size_t>(column(*schema.cluster_column)) : std::nullopt;
  std::vector<std::size_t> cov_cols;
  for (const auto& name : schema.covariates) cov_cols.push_back(column(name));
  const std::set<std::string> categorical(schema.categorical.begin(), schema.categorical.end());
  for (const auto& name : categorical) {
    if (std::find(schema.covariates.begin(), schema.covariates.end(), name) == schema.covariates.end()) {
      fail(ErrorCode::Config, "categorical column '" + name + "' is not listed among covariates");
    }
  }

  struct RawRow {
    std::vector<std::string> fields;
    std::size_t line_no;
  };
  std::vector<RawRow> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_csv_line(line, line_no);
    if (fields.size() != header.size()) {
      fail(ErrorCode::Data, "line " + std::to_string(line_no) + ": expected " +
                                std::to_string(header.size()) + " fields, found " +
                                std::to_string(fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    rows.push_back({std::move(fields), line_no});
  }

  // Levels of categorical covariates, sorted; the first is the reference.
  std::map<std::string, std::vector<std::string>> levels;
  for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
    const auto& name = schema.covariates[k];
    if (!categorical.contains(name)) continue;
    std::set<std::string> distinct;
    for (const auto& r : rows) {
      const auto& v = r.fields[cov_cols[k]];
      if (is_missing(v)) {
        fail(ErrorCode::Data, "line " + std::to_string(r.line_no) + ": missing value in '" + name + "'");
      }
      distinct.insert(v);
    }
    levels[name] = std::vector<std::string>(distinct.begin(), distinct.end());
  }

  std::vector<std::string> names;
  std::vector<CovariateGroup> groups;
  for (const auto& name : schema.covariates) {
    CovariateGroup group{name, {}};
    if (categorical.contains(name)) {
      const auto& lv = levels[name];
      for (std::size_t l = 1; l < lv.size(); ++l) {
        group.columns.push_back(names.size());
        names.push_back(name + "=" + lv[l]);
      }
    } else {
      group.columns.push_back(names.size());
      names.push_back(name);
    }
    groups.push_back(std::move(group));
  }

  std::vector<Unit> units;
  units.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& fields = rows[r].fields;
    const std::string where = "line " + std::to_string(rows[r].line_no) + ": ";
    Unit u;
    u.id = id_col ? fields[*id_col] : std::to_string(r + 1);
    if (u.id.empty()) fail(ErrorCode::Data, where + "empty unit id");

    const auto arm = parse_number(fields[arm_col]);
    if (!arm) fail(ErrorCode::Data, where + "non-numeric arm value '" + fields[arm_col] + "'");
    if (*arm != 0.0 && *arm != 1.0) fail(ErrorCode::Data, where + "arm not in {0,1}");
    u.arm = static_cast<int>(*arm);

    if (is_missing(fields[y_col])) fail(ErrorCode::Data, where + "missing outcome");
    const auto y = parse_number(fields[y_col]);
    if (!y) fail(ErrorCode::Data, where + "non-numeric outcome '" + fields[y_col] + "'");
    u.outcome = *y;

    if (cluster_col) {
      if (is_missing(fields[*cluster_col])) fail(ErrorCode::Data, where + "missing cluster id");
      u.cluster_id = fields[*cluster_col];
    }

    for (std::size_t k = 0; k < schema.covariates.size(); ++k) {
      const auto& name = schema.covariates[k];
      const auto& value = fields[cov_cols[k]];
      if (is_missing(value)) fail(ErrorCode::Data, where + "missing value in '" + name + "'");
      if (categorical.contains(name)) {
        const auto& lv = levels[name];
        for (std::size_t l = 1; l < lv.size(); ++l) u.covariates.push_back(value == lv[l] ? 1.0 : 0.0);
      } else {
        const auto x = parse_number(value);
        if (!x) fail(ErrorCode::Data, where + "non-numeric value '" + value + "' in '" + name + "'");
        u.covariates.push_back(*x);
      }
    }
    units.push_back(std::move(u));
  }
  for (int a : {0, 1}) {
    const auto count = std::count_if(units.begin(), units.end(), [a](const Unit& u) { return u.arm == a; });
    if (count == 0) fail(ErrorCode::Data, "empty arm " + std::to_string(a));
  }
  TrialDataset data = TrialDataset::from_units(units, std::move(names), std::move(groups));
  data.set_fingerprint(sha256_hex(text));
  return data;
}

TrialDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open data file '" + path + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse_csv(buffer.str(), schema);
}

std::pair<TrialDataset, OutcomeScale> scale_outcome(
    const TrialDataset& data, const std::optional<std::pair<double, double>>& bounds) {
  const Eigen::VectorXd& y = data.outcome();
  const double y_min = y.minCoeff();
  const double y_max = y.maxCoeff();
  const bool zero_one = (y.array() == 0.0 || y.array() == 1.0).all();

  OutcomeScale scale;
  if (bounds) {
    scale.lower = bounds->first;
    scale.upper = bounds->second;
    if (!(scale.lower < scale.upper)) {
      fail(ErrorCode::Config, scale.lower == scale.upper ? "constant outcome" : "outcome bounds must satisfy lower < upper");
    }
    if (y_min < scale.lower || y_max > scale.upper) {
      fail(ErrorCode::Data, "observed outcomes fall outside the declared bounds");
    }
  } else {
    scale.lower = y_min;
    scale.upper = y_max;
    if (!(scale.lower < scale.upper)) fail(ErrorCode::Data, "constant outcome");
  }

  if (zero_one && scale.lower == 0.0 && scale.upper == 1.0) {
    scale.kind = OutcomeKind::Binary;
    return {data, scale};
  }
  scale.kind = OutcomeKind::BoundedContinuous;
  Eigen::VectorXd scaled(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    scaled(i) = std::clamp(scale.to_unit(y(i)), kOutcomeClip, 1.0 - kOutcomeClip);
  }
  return {data.with_outcome(std::move(scaled)), scale};
}

TargetedEstimate unscale_effect(const TargetedEstimate& estimate, const OutcomeScale& scale,
                                Estimand estimand) {
  if (scale.kind == OutcomeKind::Binary) return estimate;
  if (estimand == Estimand::RR && scale.lower != 0.0) {
    fail(ErrorCode::Config, "relative risk requires an outcome lower bound of 0");
  }
  const double range = scale.range();
  TargetedEstimate out = estimate;
  out.psi1 = scale.from_unit(estimate.psi1);
  out.psi0 = scale.from_unit(estimate.psi0);
  out.effect_abs = estimate.effect_abs * range;
  if (estimand == Estimand::RR) {
    // Ratio of arm means is invariant to positive rescaling when lower = 0.
    return out;
  }
  out.effect_rel = out.psi0 != 0.0 ? out.psi1 / out.psi0 : estimate.effect_rel;
  out.estimate = estimate.estimate * range;
  out.se = estimate.se * range;
  out.ci_lo = estimate.ci_lo * range;
  out.ci_hi = estimate.ci_hi * range;
  out.ic = estimate.ic * range;
  if (estimate.ic_cluster) out.ic_cluster = *estimate.ic_cluster * range;
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(2 * length);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

}  // namespace aptmle
