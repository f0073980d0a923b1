#pragma once

#include <span>
#include <vector>

#include "sicl/nn.hpp"
#include "sicl/rng.hpp"
#include "sicl/style.hpp"

namespace sicl::calibration {

struct Prediction {
  std::size_t label = 0;
  double confidence = 0.0;
};

struct SiclConfig {
  std::size_t n_variants = 20;
  style::PerturbMode mode = style::PerturbMode::Both;
  bool relaxation = true;
  bool clamp_sigma = false;

  void validate() const;
};

struct CalibratedPrediction {
  std::size_t predicted_class = 0;
  double confidence = 0.0;
  double gamma_style = 0.0;
  double gamma_content = 0.0;
  double omega = 0.0;
};

// Fraction of variant predictions that agree with the original label.
double invariance_ratio(std::size_t original, std::span<const std::size_t> variant_labels);

// (1 - gamma_content) * gamma_style, or gamma_style without relaxation.
double relaxed_confidence(double gamma_style, double gamma_content, bool relaxation);

// Style-invariance confidence for every instance of an already forwarded
// batch. Variants are built on the tapped feature map and resumed with
// FrozenBatch normalization using the original pass's statistics; the model
// is only read. Variant j of each kind draws from rng.derive("style"|"content", j).
std::vector<CalibratedPrediction> sicl_confidence(const nn::ModelState& model, const nn::ForwardResult& original,
                                                  const SiclConfig& config, const Rng& rng);

// Argmax class and maximum softmax probability per row.
std::vector<Prediction> msp_confidence(const Array& logits);

double temperature_nll(const Array& logits, const std::vector<int>& labels, double temperature);

// Golden-section search of the validation NLL over log T in [log 0.05, log 20]
// to 1e-4. The starting temperature 2.0 and T = 1 are also scored so the
// result never does worse than either.
double fit_temperature(const Array& val_logits, const std::vector<int>& val_labels);

std::vector<Prediction> temperature_confidence(const Array& logits, double temperature);

// Mean softmax over n dropout passes of the classifier head: [B x K].
Array mc_dropout_probabilities(const nn::ModelState& model, const Array& embedding, double rate, std::size_t n,
                               Rng& rng);

// Argmax and max of mc_dropout_probabilities. Rate 0 reduces to msp_confidence.
std::vector<Prediction> mc_dropout_confidence(const nn::ModelState& model, const Array& embedding, double rate,
                                              std::size_t n, Rng& rng);

// Convenience form: forwards the batch once (no dropout) to obtain the
// embedding; dropout sits after the pool, so head passes are equivalent to
// full stochastic forwards.
std::vector<Prediction> mc_dropout_confidence(const nn::ModelState& model, const Array& batch,
                                              const nn::ForwardOptions& options, double rate, std::size_t n,
                                              Rng& rng);

}  // namespace sicl::calibration
