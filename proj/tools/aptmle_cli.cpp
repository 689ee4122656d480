// Command-line front end. Talks to the library only through the C interface.
#include "aptmle/aptmle.h"

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct Options {
  std::string config_path;
  std::string data_path;
  std::string dgp_path;
  std::string out_path;
  std::uint64_t reps = 1000;
  std::optional<std::uint64_t> seed;
  std::string timestamp;
};

int report_failure(const char* what) {
  std::cerr << "error: " << what << ": " << aptmle_last_error() << "\n";
  return 1;
}

bool write_file(const std::string& path, const char* contents) {
  std::ofstream out(path, std::ios::binary);
  out << contents;
  return static_cast<bool>(out);
}

// Writes <out>.json and <out>.txt, or prints the summary when no path is given.
int emit(aptmle_report* report, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << aptmle_report_json(report);
  } else {
    std::string base = out_path;
    if (base.size() > 5 && base.compare(base.size() - 5, 5, ".json") == 0) base.resize(base.size() - 5);
    if (!write_file(base + ".json", aptmle_report_json(report)) ||
        !write_file(base + ".txt", aptmle_report_summary(report))) {
      std::cerr << "error: cannot write report to '" << base << ".json'\n";
      aptmle_report_free(report);
      return 1;
    }
  }
  std::cerr << aptmle_report_summary(report);
  aptmle_report_free(report);
  return 0;
}

aptmle_config* load_config(const Options& opt) {
  aptmle_config* config = nullptr;
  if (aptmle_config_load(opt.config_path.c_str(), &config) != APTMLE_OK) {
    report_failure("invalid config");
    return nullptr;
  }
  if (opt.seed) {
    aptmle_config_set_seed(config, *opt.seed);
    std::cerr << "note: seed overridden to " << *opt.seed << "\n";
  }
  return config;
}

const char* stamp(const Options& opt) { return opt.timestamp.empty() ? nullptr : opt.timestamp.c_str(); }

int run_with_data(const Options& opt, bool permutation) {
  aptmle_config* config = load_config(opt);
  if (!config) return 2;
  aptmle_dataset* data = nullptr;
  if (aptmle_dataset_load(opt.data_path.c_str(), config, &data) != APTMLE_OK) {
    aptmle_config_free(config);
    return report_failure("invalid data");
  }
  aptmle_report* report = nullptr;
  const aptmle_status status = permutation ? aptmle_permtest(config, data, opt.reps, stamp(opt), &report)
                                           : aptmle_analyze(config, data, stamp(opt), &report);
  aptmle_dataset_free(data);
  aptmle_config_free(config);
  if (status != APTMLE_OK) return report_failure(permutation ? "permutation check failed" : "analysis failed");
  return emit(report, opt.out_path);
}

int run_simulation(const Options& opt) {
  aptmle_config* config = load_config(opt);
  if (!config) return 2;
  aptmle_dgp* dgp = nullptr;
  if (aptmle_dgp_load(opt.dgp_path.c_str(), &dgp) != APTMLE_OK) {
    aptmle_config_free(config);
    return report_failure("invalid data-generating process");
  }
  aptmle_report* report = nullptr;
  const aptmle_status status = aptmle_simulate(dgp, config, opt.reps, stamp(opt), &report);
  aptmle_dgp_free(dgp);
  aptmle_config_free(config);
  if (status != APTMLE_OK) return report_failure("simulation failed");
  return emit(report, opt.out_path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TMLE with adaptive pre-specification for randomized trials"};
  app.set_version_flag("--version", aptmle_version());
  app.require_subcommand(1);
  Options opt;

  const auto common = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", opt.config_path, "analysis plan (key = value)")->required()->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", opt.out_path, "report path; writes <out>.json and <out>.txt");
    cmd->add_option("--seed", opt.seed, "override the plan's seed (recorded in the report)");
    cmd->add_option("--timestamp", opt.timestamp, "fixed report timestamp (default: now, UTC)");
  };

  CLI::App* analyze = app.add_subcommand("analyze", "run the locked analysis plan on trial data");
  common(analyze);
  analyze->add_option("-d,--data", opt.data_path, "trial CSV")->required()->check(CLI::ExistingFile);

  CLI::App* simulate = app.add_subcommand("simulate", "parametric Monte-Carlo evaluation");
  common(simulate);
  simulate->add_option("-g,--dgp", opt.dgp_path, "data-generating process")->required()->check(CLI::ExistingFile);
  simulate->add_option("-r,--reps", opt.reps, "replicates")->check(CLI::PositiveNumber);

  CLI::App* permtest = app.add_subcommand("permtest", "treatment-blind permutation check");
  common(permtest);
  permtest->add_option("-d,--data", opt.data_path, "trial CSV")->required()->check(CLI::ExistingFile);
  permtest->add_option("-r,--reps", opt.reps, "permutations")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  if (analyze->parsed()) return run_with_data(opt, false);
  if (permtest->parsed()) return run_with_data(opt, true);
  return run_simulation(opt);
}
