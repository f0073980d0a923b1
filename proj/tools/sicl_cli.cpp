// sicl: command-line front end for the calibrated test-time adaptation lab.
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sicl/errors.hpp"
#include "sicl/experiment.hpp"

namespace {

namespace ex = sicl::experiment;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool ece_per_batch = false;
  std::string calibrators;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "flat JSON experiment config");
  cmd->add_option("--seed", c.seed, "run a single seed instead of the configured list");
  cmd->add_option("--out", c.out, "output directory");
  cmd->add_flag("--ece-per-batch", c.ece_per_batch, "headline the mean of per-batch ECE instead of cumulative ECE");
  cmd->add_option("--calibrators", c.calibrators, "comma-separated list, e.g. msp,ts,mcdropout,sicl");
}

ex::ExperimentConfig resolve(const Common& c) {
  ex::ExperimentConfig cfg = c.config_path.empty() ? ex::ExperimentConfig{} : ex::load_config(c.config_path);
  ex::apply_env_overrides(cfg);
  if (c.seed) cfg.seeds = {*c.seed};
  if (!c.out.empty()) cfg.out = c.out;
  if (c.ece_per_batch) cfg.ece_per_batch = true;
  if (!c.calibrators.empty()) {
    cfg.calibrators.clear();
    std::stringstream ss(c.calibrators);
    for (std::string item; std::getline(ss, item, ',');) {
      if (!item.empty()) cfg.calibrators.push_back(item);
    }
  }
  cfg.validate();
  return cfg;
}

void print_run(const ex::RunReport& r) {
  const auto& scen = r.summary.at("scenarios");
  std::printf("seed %llu (%s ECE)\n", static_cast<unsigned long long>(r.summary.at("seed").get<std::uint64_t>()),
              r.summary.at("ece_headline").get<std::string>().c_str());
  for (const auto& [scenario, cals] : scen.items()) {
    for (const auto& [cal, v] : cals.items()) {
      std::printf("  %-8s %-14s ece %.4f  acc %.4f\n", scenario.c_str(), cal.c_str(), v.at("ece").get<double>(),
                  v.at("accuracy").get<double>());
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sicl: style-invariance calibration for test-time adaptation"};
  app.require_subcommand(1);
  Common common;
  auto* gen = app.add_subcommand("gen-data", "generate and cache the datasets for each seed");
  auto* train = app.add_subcommand("train", "train the source model for each seed");
  auto* run = app.add_subcommand("run", "stream, adapt and calibrate; writes per-batch CSVs and summary.json");
  auto* analyze = app.add_subcommand("analyze", "ContentVariance / StyleVariance of candidate generators");
  auto* report = app.add_subcommand("report", "aggregate summary.json files across seeds");
  for (auto* cmd : {gen, train, run, analyze}) add_common(cmd, common);
  std::vector<std::string> run_dirs;
  std::string report_out;
  report->add_option("dirs", run_dirs, "run or seed directories")->required();
  report->add_option("--out", report_out, "aggregate CSV path (default: <first dir>/report.csv)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (report->parsed()) {
      std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
      const std::filesystem::path out = report_out.empty() ? dirs.front() / "report.csv" : std::filesystem::path(report_out);
      const auto rows = ex::cmd_report(dirs, out);
      std::printf("%-8s %-14s %6s %10s %10s %10s\n", "scenario", "calibrator", "seeds", "ece_mean", "ece_std",
                  "acc_mean");
      for (const auto& r : rows) {
        std::printf("%-8s %-14s %6zu %10.4f %10.4f %10.4f\n", r.scenario.c_str(), r.calibrator.c_str(), r.n_seeds,
                    r.ece_mean, r.ece_std, r.accuracy_mean);
      }
      std::printf("wrote %s\n", out.string().c_str());
      return kOk;
    }
    const ex::ExperimentConfig cfg = resolve(common);
    for (std::uint64_t seed : cfg.seeds) {
      if (gen->parsed()) {
        ex::cmd_gen_data(cfg, seed, &std::cout);
      } else if (train->parsed()) {
        const auto r = ex::cmd_train(cfg, seed, &std::cout);
        std::printf("seed %llu: val accuracy %.4f, temperature %.4f, weights %s\n",
                    static_cast<unsigned long long>(seed), r.val_accuracy, r.temperature, r.weights.string().c_str());
      } else if (run->parsed()) {
        print_run(ex::cmd_run(cfg, seed, &std::cerr));
      } else if (analyze->parsed()) {
        for (const auto& r : ex::cmd_analyze(cfg, seed, &std::cerr)) {
          std::printf("%-15s %-16s CV %.5f  SV %.6g  n %zu\n", r.corruption.c_str(), r.method.c_str(),
                      r.mean_content_variance, r.mean_style_variance, r.n);
        }
      }
    }
    return kOk;
  } catch (const sicl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n\n" << app.help();
    return kConfigError;
  } catch (const sicl::ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n\n" << app.help();
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
}
