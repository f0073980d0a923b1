#include "sicl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "sicl/errors.hpp"
#include "sicl/linalg.hpp"

namespace sicl::metrics {

std::size_t bin_index(double confidence, std::size_t bins) {
  if (!(confidence >= 0.0 && confidence <= 1.0)) {
    throw ArgumentError("confidence " + std::to_string(confidence) + " outside [0, 1]");
  }
  if (confidence == 0.0) return 0;
  const auto k = static_cast<std::size_t>(std::ceil(confidence * static_cast<double>(bins)));
  return std::min(bins, std::max<std::size_t>(k, 1)) - 1;
}

double accuracy(std::span<const Record> records) {
  if (records.empty()) throw ArgumentError("accuracy of empty records");
  std::size_t hits = 0;
  for (const Record& r : records) hits += r.correct;
  return static_cast<double>(hits) / static_cast<double>(records.size());
}

namespace {

std::vector<BinTotals> tally(std::span<const Record> records, std::size_t bins) {
  std::vector<BinTotals> t(bins);
  for (const Record& r : records) {
    BinTotals& b = t[bin_index(r.confidence, bins)];
    b.count++;
    b.sum_conf += r.confidence;
    b.sum_correct += r.correct ? 1.0 : 0.0;
  }
  return t;
}

double ece_from(const std::vector<BinTotals>& totals, std::size_t n) {
  double e = 0.0;
  for (const BinTotals& b : totals) {
    if (b.count == 0) continue;
    e += std::abs(b.sum_correct - b.sum_conf) / static_cast<double>(n);
  }
  return e;
}

}  // namespace

double ece(std::span<const Record> records, std::size_t bins) {
  if (records.empty()) throw ArgumentError("ECE of empty records");
  if (bins == 0) throw ArgumentError("ECE needs at least one bin");
  return ece_from(tally(records, bins), records.size());
}

EceAccumulator::EceAccumulator(std::size_t bins) : totals_(bins) {
  if (bins == 0) throw ArgumentError("ECE needs at least one bin");
}

EceStep EceAccumulator::update(std::span<const Record> batch) {
  if (batch.empty()) throw ArgumentError("empty batch passed to ECE accumulator");
  const auto local = tally(batch, bins());
  for (std::size_t k = 0; k < bins(); ++k) {
    totals_[k].count += local[k].count;
    totals_[k].sum_conf += local[k].sum_conf;
    totals_[k].sum_correct += local[k].sum_correct;
  }
  total_ += batch.size();
  EceStep step;
  step.batch_ece = ece_from(local, batch.size());
  step.cumulative_ece = cumulative_ece();
  batch_ece_sum_ += step.batch_ece;
  step.mean_batch_ece = batch_ece_sum_ / static_cast<double>(history_.size() + 1);
  history_.push_back(step);
  return step;
}

double EceAccumulator::cumulative_ece() const { return total_ == 0 ? 0.0 : ece_from(totals_, total_); }

std::vector<ReliabilityBin> reliability_bins(std::span<const Record> records, std::size_t bins) {
  if (bins == 0) throw ArgumentError("reliability diagram needs at least one bin");
  const auto t = tally(records, bins);
  std::vector<ReliabilityBin> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    out[k].lower = static_cast<double>(k) / static_cast<double>(bins);
    out[k].upper = static_cast<double>(k + 1) / static_cast<double>(bins);
    out[k].count = t[k].count;
    if (t[k].count > 0) {
      out[k].mean_conf = t[k].sum_conf / static_cast<double>(t[k].count);
      out[k].accuracy = t[k].sum_correct / static_cast<double>(t[k].count);
    }
  }
  return out;
}

std::vector<double> sliding_ece(std::span<const Record> records, std::size_t window, std::size_t stride,
                                std::size_t bins) {
  if (window == 0 || stride == 0) throw ArgumentError("sliding ECE needs positive window and stride");
  std::vector<double> out;
  if (records.size() < window) return out;
  for (std::size_t start = 0; start + window <= records.size(); start += stride) {
    out.push_back(ece(records.subspan(start, window), bins));
  }
  return out;
}

double auroc(std::span<const double> scores_id, std::span<const double> scores_ood) {
  if (scores_id.empty() || scores_ood.empty()) throw ArgumentError("AUROC needs both score sets nonempty");
  std::vector<double> ood(scores_ood.begin(), scores_ood.end());
  std::sort(ood.begin(), ood.end());
  double wins = 0.0;
  for (double s : scores_id) {
    const auto lo = std::lower_bound(ood.begin(), ood.end(), s);
    const auto hi = std::upper_bound(lo, ood.end(), s);
    wins += static_cast<double>(lo - ood.begin()) + 0.5 * static_cast<double>(hi - lo);
  }
  return wins / (static_cast<double>(scores_id.size()) * static_cast<double>(ood.size()));
}

double auroc_null_std(std::size_t n_id, std::size_t n_ood) {
  if (n_id == 0 || n_ood == 0) throw ArgumentError("AUROC needs both score sets nonempty");
  const double a = static_cast<double>(n_id), b = static_cast<double>(n_ood);
  return std::sqrt((a + b + 1.0) / (12.0 * a * b));
}

std::vector<ClassGaussian> fit_class_gaussians(const Array& embeddings, const std::vector<int>& labels,
                                               std::size_t num_classes, double ridge) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != labels.size()) {
    throw ArgumentError("class Gaussians need [N x d] embeddings and N labels");
  }
  if (ridge < 0.0) throw ArgumentError("ridge must be nonnegative");
  const std::size_t n = labels.size(), d = embeddings.dim(1);
  std::vector<ClassGaussian> out(num_classes);
  for (auto& g : out) {
    g.mean = Array({d});
    g.cov = Array({d, d});
    g.ridge = ridge;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= num_classes) throw ArgumentError("label out of range");
    ClassGaussian& g = out[static_cast<std::size_t>(labels[i])];
    g.count++;
    for (std::size_t a = 0; a < d; ++a) g.mean[a] += embeddings.at(i, a);
  }
  for (auto& g : out) {
    if (g.count == 0) continue;
    for (double& v : g.mean.data()) v /= static_cast<double>(g.count);
  }
  for (std::size_t i = 0; i < n; ++i) {
    ClassGaussian& g = out[static_cast<std::size_t>(labels[i])];
    for (std::size_t a = 0; a < d; ++a) {
      const double da = embeddings.at(i, a) - g.mean[a];
      for (std::size_t b = a; b < d; ++b) g.cov.at(a, b) += da * (embeddings.at(i, b) - g.mean[b]);
    }
  }
  for (auto& g : out) {
    if (g.count == 0) continue;
    for (std::size_t a = 0; a < d; ++a) {
      for (std::size_t b = a; b < d; ++b) {
        g.cov.at(a, b) /= static_cast<double>(g.count);
        g.cov.at(b, a) = g.cov.at(a, b);
      }
    }
    g.precision = invert_spd(g.cov, ridge);
  }
  return out;
}

double mahalanobis(std::span<const double> z, const ClassGaussian& g) {
  if (g.count == 0) throw ArgumentError("Mahalanobis distance to an empty class");
  if (z.size() != g.mean.size()) throw ArgumentError("embedding dimension mismatch");
  Array diff({z.size()});
  for (std::size_t a = 0; a < z.size(); ++a) diff[a] = z[a] - g.mean[a];
  return std::sqrt(std::max(0.0, quadratic_form(g.precision, diff.data())));
}

double content_variance(std::span<const double> z, const std::vector<std::vector<double>>& candidates,
                        const ClassGaussian& g) {
  if (candidates.empty()) throw ArgumentError("content variance needs at least one candidate");
  double m = 0.0;
  for (const auto& c : candidates) m += mahalanobis(c, g);
  m /= static_cast<double>(candidates.size());
  return std::abs(mahalanobis(z, g) - m);
}

namespace {

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ArgumentError("spearman: length mismatch");
  if (x.size() < 3) throw ArgumentError("spearman needs at least 3 points");
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  Correlation c;
  if (sxx == 0.0 || syy == 0.0) return c;
  c.rho = sxy / std::sqrt(sxx * syy);
  const double df = n - 2.0;
  if (std::abs(c.rho) >= 1.0) {
    c.p_value = 0.0;
    return c;
  }
  const double t = c.rho * std::sqrt(df / (1.0 - c.rho * c.rho));
  boost::math::students_t dist(df);
  c.p_value = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
  return c;
}

}  // namespace sicl::metrics
