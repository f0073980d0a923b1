#include "sicl/train.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "sicl/errors.hpp"

namespace sicl::train {

void TrainConfig::validate() const {
  if (epochs == 0) throw ArgumentError("epochs must be positive");
  if (!(lr > 0.0)) throw ArgumentError("training learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ArgumentError("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw ArgumentError("weight decay must be nonnegative");
  if (batch_size == 0) throw ArgumentError("batch size must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ArgumentError("dropout must lie in [0, 1)");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ArgumentError("BN momentum must lie in (0, 1]");
}

double cosine_lr(double peak, std::size_t step, std::size_t total) {
  if (total == 0) return peak;
  return 0.5 * peak * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(total)));
}

namespace {

Array gather(const streams::Dataset& data, const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end,
             std::vector<int>& labels) {
  const std::size_t per = data.images.slab_size();
  Shape s = data.images.shape();
  s[0] = end - begin;
  std::vector<double> values;
  values.reserve((end - begin) * per);
  labels.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const auto slab = data.images.slab(idx[i]);
    values.insert(values.end(), slab.begin(), slab.end());
    labels.push_back(data.labels[idx[i]]);
  }
  return Array(std::move(s), std::move(values));
}

}  // namespace

TrainResult train_source(const nn::ModelConfig& model_config, const streams::Dataset& data, const TrainConfig& config,
                         Rng& rng, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  model_config.validate();
  data.validate();
  if (data.size() == 0) throw ArgumentError("training set is empty");
  if (data.num_classes != model_config.num_classes) throw ArgumentError("dataset and model disagree on class count");

  Rng init_rng = rng.derive("init");
  Rng order_rng = rng.derive("order");
  Rng drop_rng = rng.derive("dropout");
  TrainResult result{nn::ModelState::initialize(model_config, init_rng), {}};
  nn::ModelState& model = result.model;

  const std::size_t n = data.size();
  const std::size_t steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = steps_per_epoch * config.epochs;
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);

  std::vector<Array> velocity;
  for (auto& [name, arr] : model.named_arrays()) velocity.emplace_back(arr->shape());

  std::size_t step = 0;
  std::vector<int> labels;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t begin = 0; begin < n; begin += config.batch_size) {
      const std::size_t end = std::min(n, begin + config.batch_size);
      const Array batch = gather(data, idx, begin, end, labels);
      nn::ForwardOptions opts;
      opts.bn_mode = nn::BnMode::BatchStats;
      opts.keep_trace = true;
      if (config.dropout > 0.0) opts.dropout = nn::DropoutSpec{config.dropout, &drop_rng};
      const nn::ForwardResult fwd = nn::forward(model, batch, opts);
      const double loss = nn::cross_entropy_loss(fwd.logits, labels);
      if (!std::isfinite(loss)) {
        throw TrainingError("training diverged: non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                            std::to_string(step));
      }
      loss_sum += loss * static_cast<double>(end - begin);
      for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += argmax_row(fwd.logits, i) == static_cast<std::size_t>(labels[i]);
      }
      const nn::Gradients g = nn::backward(model, fwd, nn::cross_entropy_grad(fwd.logits, labels));

      std::vector<std::pair<Array*, const Array*>> pairs;
      for (std::size_t b = 0; b < nn::kNumBlocks; ++b) {
        nn::ConvBlock& blk = model.blocks[b];
        pairs.push_back({&blk.weight, &g.blocks[b].weight});
        pairs.push_back({&blk.bias, &g.blocks[b].bias});
        pairs.push_back({&blk.bn.gamma, &g.blocks[b].gamma});
        pairs.push_back({&blk.bn.beta, &g.blocks[b].beta});
      }
      pairs.push_back({&model.fc_weight, &g.fc_weight});
      pairs.push_back({&model.fc_bias, &g.fc_bias});

      const double lr = cosine_lr(config.lr, step, total_steps);
      for (std::size_t p = 0; p < pairs.size(); ++p) {
        Array& param = *pairs[p].first;
        const Array& grad = *pairs[p].second;
        if (!grad.all_finite()) throw TrainingError("training diverged: non-finite gradient at step " + std::to_string(step));
        const bool decay = param.rank() > 1;
        Array& v = velocity[p];
        if (v.shape() != param.shape()) v = Array(param.shape());
        for (std::size_t e = 0; e < param.size(); ++e) {
          const double gv = grad[e] + (decay ? config.weight_decay * param[e] : 0.0);
          v[e] = config.momentum * v[e] + gv;
          param[e] -= lr * v[e];
        }
      }
      nn::update_running_stats(model, fwd.bn_cache, config.bn_momentum);
      ++step;
    }
    EpochLog entry{epoch + 1, loss_sum / static_cast<double>(n), static_cast<double>(hits) / static_cast<double>(n)};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

namespace {

template <typename Pick>
Array chunked(const nn::ModelState& model, const streams::Dataset& data, std::size_t chunk, std::size_t cols,
              Pick pick) {
  if (chunk == 0) throw ArgumentError("chunk must be positive");
  Array out({data.size(), cols});
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<int> labels;
  for (std::size_t begin = 0; begin < data.size(); begin += chunk) {
    const std::size_t end = std::min(data.size(), begin + chunk);
    const nn::ForwardResult fwd = nn::forward(model, gather(data, idx, begin, end, labels), {});
    const Array& part = pick(fwd);
    std::copy(part.values().begin(), part.values().end(), out.data().begin() + static_cast<std::ptrdiff_t>(begin * cols));
  }
  return out;
}

}  // namespace

Array predict_logits(const nn::ModelState& model, const streams::Dataset& data, std::size_t chunk) {
  return chunked(model, data, chunk, model.config.num_classes,
                 [](const nn::ForwardResult& f) -> const Array& { return f.logits; });
}

Array predict_embeddings(const nn::ModelState& model, const streams::Dataset& data, std::size_t chunk) {
  return chunked(model, data, chunk, model.config.embedding_dim(),
                 [](const nn::ForwardResult& f) -> const Array& { return f.embedding; });
}

double accuracy(const Array& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
    throw ArgumentError("accuracy: logits and labels disagree");
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += argmax_row(logits, i) == static_cast<std::size_t>(labels[i]);
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

}  // namespace sicl::train
