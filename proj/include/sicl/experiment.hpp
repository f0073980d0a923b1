#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "sicl/calibration.hpp"
#include "sicl/metrics.hpp"
#include "sicl/nn.hpp"
#include "sicl/streams.hpp"
#include "sicl/tta.hpp"

namespace sicl::experiment {

inline constexpr int kSchemaVersion = 1;

struct ExperimentConfig {
  // data
  std::string dataset = "styleshapes";  // styleshapes | cifar10
  std::string cifar10_dir;
  std::size_t image_size = 16;
  std::size_t num_classes = 10;
  std::size_t n_train_per_class = 200;
  std::size_t n_val_per_class = 50;
  std::size_t n_test_per_class = 100;
  std::size_t n_ood = 500;
  // model
  std::array<std::size_t, nn::kNumBlocks> widths{16, 32, 64};
  std::size_t tap_block = 1;
  // source training
  std::size_t epochs = 15;
  double train_lr = 0.1;
  std::size_t train_batch_size = 64;
  double weight_decay = 5e-4;
  double train_dropout = 0.0;
  // adaptation
  std::string adapt_method = "tent";
  double adapt_lr = 1e-3;
  double bn_momentum = 0.1;
  std::size_t steps_per_batch = 1;
  // calibrators
  std::vector<std::string> calibrators{"msp", "ts", "mcdropout", "sicl"};
  std::size_t sicl_n = 20;
  std::string sicl_mode = "both";
  bool sicl_relaxation = true;
  bool sicl_clamp_sigma = false;
  double mc_dropout_rate = 0.3;
  std::size_t mc_dropout_n = 20;
  // scenarios
  std::vector<std::string> scenarios{"benign", "dynamic"};
  std::vector<std::string> corruptions{"gaussian_noise", "shot_noise", "impulse_noise",
                                       "contrast",       "brightness", "pixelate"};
  int severity = 3;
  std::size_t benign_samples = 384;  // per corruption stream
  double dirichlet_alpha = 0.1;
  std::size_t dirichlet_slots = 10;
  std::size_t dynamic_per_corruption = 320;
  double ood_fraction = 0.0;
  // analysis
  std::size_t analyze_samples = 128;
  std::size_t analyze_n = 20;
  double analyze_dropout_rate = 0.3;
  // output
  std::size_t ece_bins = metrics::kDefaultBins;
  bool ece_per_batch = false;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t batch_size = 64;
  std::string out = "runs/default";

  void validate() const;
  nn::ModelConfig model_config() const;
  tta::AdaptConfig adapt_config() const;
};

// Flat JSON object; unknown keys and ill-typed values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});
nlohmann::json config_to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);
// SICL_SEED replaces the seed list with one seed; SICL_OUT replaces out.
void apply_env_overrides(ExperimentConfig& config);

std::filesystem::path seed_dir(const ExperimentConfig& config, std::uint64_t seed);

struct DataBundle {
  streams::Dataset train;
  streams::Dataset val;
  streams::Dataset test;
  streams::Dataset ood;
};

DataBundle make_data(const ExperimentConfig& config, std::uint64_t seed);

struct GenDataReport {
  std::map<std::string, std::size_t> counts;
  std::map<std::string, std::uint64_t> checksums;
};

GenDataReport cmd_gen_data(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

struct Source {
  nn::ModelState model;
  DataBundle data;
  double temperature = 1.0;
  double val_accuracy = 0.0;
  bool reused = false;
};

// Trains (or reloads weights trained under an identical configuration) and
// writes weights.bin, val_logits.csv and train_log.csv into the seed directory.
Source prepare_source(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

struct TrainReport {
  double val_accuracy = 0.0;
  double temperature = 1.0;
  std::filesystem::path weights;
};

TrainReport cmd_train(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

enum class CalibratorKind { Msp, Temperature, McDropout, Sicl };

struct CalibratorSpec {
  std::string name;
  CalibratorKind kind = CalibratorKind::Msp;
  calibration::SiclConfig sicl;
};

// msp | ts | mcdropout | sicl, plus SICL variants sicl_n<N>, sicl_mu,
// sicl_sigma, sicl_norelax, sicl_clamp.
CalibratorSpec parse_calibrator(const std::string& name, const ExperimentConfig& config);

struct BatchRow {
  std::size_t batch_idx = 0;
  std::string calibrator;
  std::string corruption;
  int severity = 0;
  std::optional<double> accuracy;  // empty when the batch held no labeled samples
  std::optional<double> batch_ece;
  double cumulative_ece = 0.0;
  std::optional<double> mean_conf;
  double entropy_before = 0.0;
  double entropy_after = 0.0;
};

struct CalibratorSummary {
  double final_cumulative_ece = 0.0;
  double mean_batch_ece = 0.0;
  double accuracy = 0.0;
  std::size_t n_records = 0;
  std::optional<double> auroc;
  std::optional<double> auroc_null_std;
};

struct StreamResult {
  std::string name;
  std::string scenario;
  std::vector<BatchRow> rows;
  std::vector<std::string> calibrators;
  std::map<std::string, CalibratorSummary> summary;
  std::map<std::string, std::vector<metrics::Record>> records;
  std::map<std::string, std::vector<double>> ood_scores;
  std::vector<std::size_t> skipped_batches;
  std::vector<double> batch_msp_confidence;  // batch-mean MSP confidence over labeled samples
};

// Adapt-then-calibrate loop over one stream, starting from a copy of `source`.
StreamResult run_stream(const nn::ModelState& source, const streams::StreamPlan& plan, const DataBundle& data,
                        const std::vector<CalibratorSpec>& calibrators, double temperature,
                        const ExperimentConfig& config, std::uint64_t seed, const std::string& name,
                        const std::string& scenario, std::ostream* log = nullptr);

void write_batch_csv(const StreamResult& result, const std::filesystem::path& path);
void write_reliability_csv(const StreamResult& result, std::size_t bins, const std::filesystem::path& path);

struct RunReport {
  std::vector<StreamResult> streams;
  nlohmann::json summary;
};

RunReport cmd_run(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

struct AnalysisRow {
  std::string corruption;
  std::string method;  // style_perturb | mixstyle | dropout | content_perturb
  double mean_content_variance = 0.0;
  double mean_style_variance = 0.0;
  std::size_t n = 0;
};

std::vector<AnalysisRow> cmd_analyze(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log = nullptr);

struct ReportRow {
  std::string scenario;
  std::string calibrator;
  std::size_t n_seeds = 0;
  double ece_mean = 0.0;
  double ece_std = 0.0;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
};

// Aggregates summary.json files found in the given directories (a seed
// directory or a run directory holding seed_* subdirectories). Writes
// report.csv to `out` when it is nonempty.
std::vector<ReportRow> cmd_report(const std::vector<std::filesystem::path>& run_dirs,
                                  const std::filesystem::path& out = {});

// "# schema=1" line check for CSV files written by this module.
void check_csv_schema(const std::filesystem::path& path);

}  // namespace sicl::experiment
