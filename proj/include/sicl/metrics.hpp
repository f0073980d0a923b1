#pragma once

#include <optional>
#include <span>
#include <vector>

#include "sicl/tensor.hpp"

namespace sicl::metrics {

inline constexpr std::size_t kDefaultBins = 15;

struct Record {
  double confidence = 0.0;
  bool correct = false;
};

// Bin of a confidence in [0, 1]: bin k covers (k/K, (k+1)/K], bin 0 also holds 0.
std::size_t bin_index(double confidence, std::size_t bins);

double accuracy(std::span<const Record> records);

// Sum over bins of |B_k|/N * |acc_k - conf_k|. Throws on empty input or a
// confidence outside [0, 1].
double ece(std::span<const Record> records, std::size_t bins = kDefaultBins);

struct BinTotals {
  std::size_t count = 0;
  double sum_conf = 0.0;
  double sum_correct = 0.0;
};

struct EceStep {
  double batch_ece = 0.0;       // this batch's records alone
  double cumulative_ece = 0.0;  // every record since the stream began
  double mean_batch_ece = 0.0;  // running mean of per-batch ECE values
};

class EceAccumulator {
 public:
  explicit EceAccumulator(std::size_t bins = kDefaultBins);

  EceStep update(std::span<const Record> batch);

  std::size_t bins() const { return totals_.size(); }
  std::size_t total() const { return total_; }
  double cumulative_ece() const;
  const std::vector<BinTotals>& totals() const { return totals_; }
  const std::vector<EceStep>& history() const { return history_; }

 private:
  std::vector<BinTotals> totals_;
  std::size_t total_ = 0;
  double batch_ece_sum_ = 0.0;
  std::vector<EceStep> history_;
};

struct ReliabilityBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  std::optional<double> mean_conf;  // empty for unoccupied bins
  std::optional<double> accuracy;
};

std::vector<ReliabilityBin> reliability_bins(std::span<const Record> records, std::size_t bins = kDefaultBins);

// ECE of each `window` consecutive records, advancing by `stride`.
std::vector<double> sliding_ece(std::span<const Record> records, std::size_t window, std::size_t stride,
                                std::size_t bins = kDefaultBins);

// P(id > ood) + P(id == ood) / 2 over all pairs.
double auroc(std::span<const double> scores_id, std::span<const double> scores_ood);

// Standard deviation of the AUROC of two exchangeable samples of these sizes.
double auroc_null_std(std::size_t n_id, std::size_t n_ood);

struct ClassGaussian {
  Array mean;       // [d]
  Array cov;        // [d x d], population covariance
  Array precision;  // (cov + ridge I)^-1
  double ridge = 1e-3;
  std::size_t count = 0;
};

// One Gaussian per class in [0, num_classes); classes without samples are
// left with count 0 and must not be queried.
std::vector<ClassGaussian> fit_class_gaussians(const Array& embeddings, const std::vector<int>& labels,
                                               std::size_t num_classes, double ridge = 1e-3);

double mahalanobis(std::span<const double> z, const ClassGaussian& g);

// |D(z) - mean_j D(z'_j)| under the class Gaussian g.
double content_variance(std::span<const double> z, const std::vector<std::vector<double>>& candidates,
                        const ClassGaussian& g);

struct Correlation {
  double rho = 0.0;
  double p_value = 1.0;  // two-sided, t approximation with n - 2 degrees of freedom
};

// Spearman rank correlation with average ranks for ties.
Correlation spearman(std::span<const double> x, std::span<const double> y);

}  // namespace sicl::metrics
