#include "aptmle/aptmle.h"

#include "aptmle/config.hpp"
#include "aptmle/data.hpp"
#include "aptmle/error.hpp"
#include "aptmle/report.hpp"
#include "aptmle/selection.hpp"
#include "aptmle/simulation.hpp"

#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <string>

struct aptmle_config {
  aptmle::SapConfig config;
  bool seed_override = false;
  mutable std::string text;
};

struct aptmle_dataset {
  aptmle::TrialDataset data;
};

struct aptmle_dgp {
  aptmle::DgpSpec dgp;
};

struct aptmle_report {
  std::string json;
  std::string summary;
  std::optional<aptmle_estimate> estimate;
};

namespace {

thread_local std::string last_error;

aptmle_status status_of(aptmle::ErrorCode code) {
  switch (code) {
    case aptmle::ErrorCode::InvalidArgument:
      return APTMLE_ERR_INVALID_ARGUMENT;
    case aptmle::ErrorCode::Io:
      return APTMLE_ERR_IO;
    case aptmle::ErrorCode::Parse:
      return APTMLE_ERR_PARSE;
    case aptmle::ErrorCode::Config:
      return APTMLE_ERR_CONFIG;
    case aptmle::ErrorCode::Data:
      return APTMLE_ERR_DATA;
    case aptmle::ErrorCode::Numeric:
      return APTMLE_ERR_NUMERIC;
  }
  return APTMLE_ERR_INTERNAL;
}

template <typename F>
aptmle_status guarded(F&& body) {
  try {
    last_error.clear();
    body();
    return APTMLE_OK;
  } catch (const aptmle::Error& e) {
    last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return APTMLE_ERR_INTERNAL;
}

aptmle_status null_argument(const char* name) {
  last_error = std::string("null argument: ") + name;
  return APTMLE_ERR_INVALID_ARGUMENT;
}

aptmle::ReportMeta meta_for(const aptmle_config* config, const char* timestamp) {
  return {timestamp ? timestamp : "", config->seed_override};
}

}  // namespace

extern "C" {

const char* aptmle_version(void) { return aptmle::kToolVersion; }

const char* aptmle_last_error(void) { return last_error.c_str(); }

aptmle_status aptmle_config_parse(const char* text, aptmle_config** out) {
  if (!text) return null_argument("text");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new aptmle_config{aptmle::SapConfig::parse(text), false, {}}; });
}

aptmle_status aptmle_config_load(const char* path, aptmle_config** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new aptmle_config{aptmle::SapConfig::load(path), false, {}}; });
}

aptmle_status aptmle_config_set_seed(aptmle_config* config, uint64_t seed) {
  if (!config) return null_argument("config");
  config->config.seed = seed;
  config->seed_override = true;
  return APTMLE_OK;
}

aptmle_status aptmle_config_to_text(const aptmle_config* config, const char** text) {
  if (!config) return null_argument("config");
  if (!text) return null_argument("text");
  return guarded([&] {
    config->text = config->config.to_text();
    *text = config->text.c_str();
  });
}

void aptmle_config_free(aptmle_config* config) { delete config; }

aptmle_status aptmle_dataset_load(const char* path, const aptmle_config* config, aptmle_dataset** out) {
  if (!path) return null_argument("path");
  if (!config) return null_argument("config");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new aptmle_dataset{aptmle::load_csv(path, config->config.schema)}; });
}

aptmle_status aptmle_dataset_parse(const char* csv_text, const aptmle_config* config, aptmle_dataset** out) {
  if (!csv_text) return null_argument("csv_text");
  if (!config) return null_argument("config");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new aptmle_dataset{aptmle::parse_csv(csv_text, config->config.schema)}; });
}

size_t aptmle_dataset_rows(const aptmle_dataset* data) { return data ? data->data.size() : 0; }

void aptmle_dataset_free(aptmle_dataset* data) { delete data; }

aptmle_status aptmle_dgp_parse(const char* text, aptmle_dgp** out) {
  if (!text) return null_argument("text");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new aptmle_dgp{aptmle::DgpSpec::parse(text)}; });
}

aptmle_status aptmle_dgp_load(const char* path, aptmle_dgp** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  return guarded([&] { *out = new aptmle_dgp{aptmle::DgpSpec::load(path)}; });
}

void aptmle_dgp_free(aptmle_dgp* dgp) { delete dgp; }

aptmle_status aptmle_analyze(const aptmle_config* config, const aptmle_dataset* data, const char* timestamp,
                             aptmle_report** out) {
  if (!config) return null_argument("config");
  if (!data) return null_argument("data");
  if (!out) return null_argument("out");
  return guarded([&] {
    aptmle::ReportMeta meta = meta_for(config, timestamp);
    if (meta.timestamp.empty()) meta.timestamp = aptmle::utc_timestamp();
    const aptmle::Selection sel = aptmle::run_adaptive_prespec(config->config, data->data);
    auto report = std::make_unique<aptmle_report>();
    report->json = aptmle::analysis_report_json(sel, config->config, data->data, meta);
    report->summary = aptmle::analysis_summary(sel, config->config, data->data, meta);
    aptmle_estimate e{};
    e.estimate = sel.selected.estimate;
    e.se = sel.selected.se;
    e.ci_lower = sel.selected.ci_lo;
    e.ci_upper = sel.selected.ci_hi;
    e.psi1 = sel.selected.psi1;
    e.psi0 = sel.selected.psi0;
    e.eps0 = sel.selected.fluctuation.eps0;
    e.eps1 = sel.selected.fluctuation.eps1;
    e.unadjusted_estimate = sel.unadjusted.estimate;
    e.unadjusted_se = sel.unadjusted.se;
    e.precision_gain = sel.precision_gain;
    e.independent_units = sel.selected.n_independent_units;
    report->estimate = e;
    *out = report.release();
  });
}

aptmle_status aptmle_simulate(const aptmle_dgp* dgp, const aptmle_config* config, uint64_t reps,
                              const char* timestamp, aptmle_report** out) {
  if (!dgp) return null_argument("dgp");
  if (!config) return null_argument("config");
  if (!out) return null_argument("out");
  return guarded([&] {
    aptmle::ReportMeta meta = meta_for(config, timestamp);
    if (meta.timestamp.empty()) meta.timestamp = aptmle::utc_timestamp();
    const aptmle::SimResult result =
        aptmle::run_parametric_sim(dgp->dgp, config->config, static_cast<std::size_t>(reps), config->config.seed);
    auto report = std::make_unique<aptmle_report>();
    report->json = aptmle::simulation_report_json(result, dgp->dgp, config->config, meta);
    report->summary = aptmle::simulation_summary(result, meta);
    *out = report.release();
  });
}

aptmle_status aptmle_permtest(const aptmle_config* config, const aptmle_dataset* data, uint64_t reps,
                              const char* timestamp, aptmle_report** out) {
  if (!config) return null_argument("config");
  if (!data) return null_argument("data");
  if (!out) return null_argument("out");
  return guarded([&] {
    aptmle::ReportMeta meta = meta_for(config, timestamp);
    if (meta.timestamp.empty()) meta.timestamp = aptmle::utc_timestamp();
    const aptmle::PermutationResult result = aptmle::run_permutation_check(
        data->data, config->config, static_cast<std::size_t>(reps), config->config.seed);
    auto report = std::make_unique<aptmle_report>();
    report->json = aptmle::permutation_report_json(result, config->config, data->data, meta);
    report->summary = aptmle::permutation_summary(result, meta);
    *out = report.release();
  });
}

const char* aptmle_report_json(const aptmle_report* report) { return report ? report->json.c_str() : ""; }

const char* aptmle_report_summary(const aptmle_report* report) { return report ? report->summary.c_str() : ""; }

aptmle_status aptmle_report_estimate(const aptmle_report* report, aptmle_estimate* out) {
  if (!report) return null_argument("report");
  if (!out) return null_argument("out");
  if (!report->estimate) {
    last_error = "report holds no analysis estimate";
    return APTMLE_ERR_INVALID_ARGUMENT;
  }
  *out = *report->estimate;
  return APTMLE_OK;
}

void aptmle_report_free(aptmle_report* report) { delete report; }

}  // extern "C"
