#pragma once

#include <functional>
#include <vector>

#include "sicl/nn.hpp"
#include "sicl/rng.hpp"
#include "sicl/streams.hpp"

namespace sicl::train {

struct TrainConfig {
  std::size_t epochs = 30;
  double lr = 0.05;  // peak of the cosine schedule
  double momentum = 0.9;
  double weight_decay = 5e-4;  // conv and fc weights only
  std::size_t batch_size = 64;
  double dropout = 0.0;
  double bn_momentum = 0.1;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
};

struct TrainResult {
  nn::ModelState model;
  std::vector<EpochLog> log;
};

// lr * (1 + cos(pi * step / total)) / 2
double cosine_lr(double peak, std::size_t step, std::size_t total);

// SGD with momentum on every parameter, BatchStats normalization with
// running-statistic updates. Throws TrainingError on a non-finite loss.
TrainResult train_source(const nn::ModelConfig& model_config, const streams::Dataset& data, const TrainConfig& config,
                         Rng& rng, const std::function<void(const EpochLog&)>& on_epoch = {});

// SourceRunning logits of a whole dataset, evaluated in chunks.
Array predict_logits(const nn::ModelState& model, const streams::Dataset& data, std::size_t chunk = 256);
Array predict_embeddings(const nn::ModelState& model, const streams::Dataset& data, std::size_t chunk = 256);

double accuracy(const Array& logits, const std::vector<int>& labels);

}  // namespace sicl::train
