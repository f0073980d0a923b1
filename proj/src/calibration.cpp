#include "sicl/calibration.hpp"

#include <cmath>

#include "sicl/errors.hpp"

namespace sicl::calibration {

void SiclConfig::validate() const {
  if (n_variants < 1) throw ArgumentError("SICL needs at least one variant");
}

double invariance_ratio(std::size_t original, std::span<const std::size_t> variant_labels) {
  if (variant_labels.empty()) throw ArgumentError("invariance_ratio: no variants");
  std::size_t agree = 0;
  for (std::size_t y : variant_labels) agree += (y == original);
  return static_cast<double>(agree) / static_cast<double>(variant_labels.size());
}

double relaxed_confidence(double gamma_style, double gamma_content, bool relaxation) {
  return relaxation ? (1.0 - gamma_content) * gamma_style : gamma_style;
}

namespace {

std::vector<std::size_t> row_argmax(const Array& logits) {
  std::vector<std::size_t> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = argmax_row(logits, i);
  return out;
}

}  // namespace

std::vector<CalibratedPrediction> sicl_confidence(const nn::ModelState& model, const nn::ForwardResult& original,
                                                  const SiclConfig& config, const Rng& rng) {
  config.validate();
  const nn::FeatureMap& tap = original.tap;
  const std::size_t b = tap.batch();
  const std::vector<std::size_t> labels = row_argmax(original.logits);

  std::vector<style::StyleStats> stats;
  std::vector<Array> maps;
  stats.reserve(b);
  maps.reserve(b);
  for (std::size_t i = 0; i < b; ++i) {
    maps.push_back(style::instance(tap, i));
    stats.push_back(style::channel_stats(maps.back()));
  }
  const Array delta = style::batch_delta(tap);
  const style::PerturbOptions opts{config.mode, config.clamp_sigma};

  std::vector<std::size_t> style_agree(b, 0), content_agree(b, 0);
  std::vector<Array> variants(b);
  for (std::size_t j = 0; j < config.n_variants; ++j) {
    Rng style_rng = rng.derive("style", j);
    for (std::size_t i = 0; i < b; ++i) variants[i] = style::perturb_style(maps[i], stats[i], delta, style_rng, opts);
    const Array style_logits =
        nn::forward_from_tap(model, nn::FeatureMap{stack(variants), tap.layer}, original.bn_cache).logits;

    Rng content_rng = rng.derive("content", j);
    for (std::size_t i = 0; i < b; ++i) variants[i] = style::perturb_content(maps[i], stats[i], content_rng);
    const Array content_logits =
        nn::forward_from_tap(model, nn::FeatureMap{stack(variants), tap.layer}, original.bn_cache).logits;

    for (std::size_t i = 0; i < b; ++i) {
      style_agree[i] += argmax_row(style_logits, i) == labels[i];
      content_agree[i] += argmax_row(content_logits, i) == labels[i];
    }
  }

  const double n = static_cast<double>(config.n_variants);
  std::vector<CalibratedPrediction> out(b);
  for (std::size_t i = 0; i < b; ++i) {
    CalibratedPrediction& p = out[i];
    p.predicted_class = labels[i];
    p.gamma_style = static_cast<double>(style_agree[i]) / n;
    p.gamma_content = static_cast<double>(content_agree[i]) / n;
    p.omega = 1.0 - p.gamma_content;
    p.confidence = relaxed_confidence(p.gamma_style, p.gamma_content, config.relaxation);
  }
  return out;
}

std::vector<Prediction> msp_confidence(const Array& logits) {
  return temperature_confidence(logits, 1.0);
}

std::vector<Prediction> temperature_confidence(const Array& logits, double temperature) {
  if (!(temperature > 0.0)) throw ArgumentError("temperature must be positive");
  if (logits.rank() != 2) throw ArgumentError("expected [B x K] logits");
  const Array probs = softmax_rows(temperature == 1.0 ? logits : scale(logits, 1.0 / temperature));
  std::vector<Prediction> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    // argmax of the raw logits: invariant under positive scaling
    out[i].label = argmax_row(logits, i);
    out[i].confidence = probs.at(i, out[i].label);
  }
  return out;
}

double temperature_nll(const Array& logits, const std::vector<int>& labels, double temperature) {
  return nn::cross_entropy_loss(scale(logits, 1.0 / temperature), labels);
}

double fit_temperature(const Array& val_logits, const std::vector<int>& val_labels) {
  if (val_logits.rank() != 2 || val_logits.dim(0) == 0 || val_labels.empty()) {
    throw ArgumentError("fit_temperature: empty validation set");
  }
  auto nll = [&](double log_t) { return temperature_nll(val_logits, val_labels, std::exp(log_t)); };
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = std::log(0.05), hi = std::log(20.0);
  double x1 = hi - inv_phi * (hi - lo), x2 = lo + inv_phi * (hi - lo);
  double f1 = nll(x1), f2 = nll(x2);
  while (hi - lo > 1e-4) {
    if (f1 <= f2) {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - inv_phi * (hi - lo);
      f1 = nll(x1);
    } else {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + inv_phi * (hi - lo);
      f2 = nll(x2);
    }
  }
  double best_t = std::exp(0.5 * (lo + hi));
  double best = nll(std::log(best_t));
  for (double probe : {2.0, 1.0}) {
    const double v = nll(std::log(probe));
    if (v < best) {
      best = v;
      best_t = probe;
    }
  }
  return best_t;
}

Array mc_dropout_probabilities(const nn::ModelState& model, const Array& embedding, double rate, std::size_t n,
                               Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ArgumentError("MC dropout rate must lie in [0, 1)");
  if (n == 0) throw ArgumentError("MC dropout needs at least one pass");
  if (rate == 0.0) return softmax_rows(nn::head_forward(model, embedding, std::nullopt));
  Array avg({embedding.dim(0), model.config.num_classes});
  for (std::size_t pass = 0; pass < n; ++pass) {
    const Array probs = softmax_rows(nn::head_forward(model, embedding, nn::DropoutSpec{rate, &rng}));
    for (std::size_t t = 0; t < avg.size(); ++t) avg[t] += probs[t];
  }
  for (double& v : avg.data()) v /= static_cast<double>(n);
  return avg;
}

std::vector<Prediction> mc_dropout_confidence(const nn::ModelState& model, const Array& embedding, double rate,
                                              std::size_t n, Rng& rng) {
  if (rate == 0.0 && n > 0) return msp_confidence(nn::head_forward(model, embedding, std::nullopt));
  const Array avg = mc_dropout_probabilities(model, embedding, rate, n, rng);
  std::vector<Prediction> out(avg.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].label = argmax_row(avg, i);
    out[i].confidence = avg.at(i, out[i].label);
  }
  return out;
}

std::vector<Prediction> mc_dropout_confidence(const nn::ModelState& model, const Array& batch,
                                              const nn::ForwardOptions& options, double rate, std::size_t n,
                                              Rng& rng) {
  nn::ForwardOptions plain = options;
  plain.dropout.reset();
  plain.keep_trace = false;
  return mc_dropout_confidence(model, nn::forward(model, batch, plain).embedding, rate, n, rng);
}

}  // namespace sicl::calibration
