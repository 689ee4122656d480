#pragma once

#include "aptmle/config.hpp"
#include "aptmle/data.hpp"
#include "aptmle/selection.hpp"
#include "aptmle/simulation.hpp"

#include <string>

namespace aptmle {

inline constexpr const char* kToolVersion = "aptmle 1.0.0";

struct ReportMeta {
  std::string timestamp;  // UTC ISO-8601; filled with the current time when empty
  bool seed_override = false;
};

std::string utc_timestamp();

/// Structured report of one analysis. Every field other than the timestamp
/// is a pure function of (config, data).
std::string analysis_report_json(const Selection& selection, const SapConfig& config, const TrialDataset& data,
                                 const ReportMeta& meta);
std::string analysis_summary(const Selection& selection, const SapConfig& config, const TrialDataset& data,
                             const ReportMeta& meta);

std::string simulation_report_json(const SimResult& result, const DgpSpec& dgp, const SapConfig& config,
                                   const ReportMeta& meta);
std::string simulation_summary(const SimResult& result, const ReportMeta& meta);

std::string permutation_report_json(const PermutationResult& result, const SapConfig& config,
                                    const TrialDataset& data, const ReportMeta& meta);
std::string permutation_summary(const PermutationResult& result, const ReportMeta& meta);

}  // namespace aptmle
