#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sicl/conv.hpp"
#include "sicl/rng.hpp"
#include "sicl/tensor.hpp"

namespace sicl::nn {

inline constexpr std::size_t kNumBlocks = 3;

// Three conv(3x3)+BN+ReLU blocks (strides 1, 2, 2), global average pool,
// optional dropout, linear classifier.
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t image_size = 32;
  std::size_t num_classes = 10;
  std::array<std::size_t, kNumBlocks> widths{16, 32, 64};
  std::size_t tap_block = 1;  // 1-based block whose post-ReLU output is tapped
  double bn_eps = 1e-5;

  void validate() const;
  Conv2dGeometry geometry(std::size_t block) const;  // 0-based block
  std::size_t embedding_dim() const { return widths.back(); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct BatchNorm {
  Array gamma;
  Array beta;
  Array running_mean;
  Array running_var;
};

struct ConvBlock {
  Array weight;  // [Cout x Cin x 3 x 3]
  Array bias;    // [Cout]
  BatchNorm bn;
};

struct ModelState {
  ModelConfig config;
  std::array<ConvBlock, kNumBlocks> blocks;
  Array fc_weight;  // [K x D]
  Array fc_bias;    // [K]

  // He-normal conv weights, unit gamma, zero beta, unit running variance.
  static ModelState initialize(const ModelConfig& config, Rng& rng);
  // All weights zero; BN gamma zero as well, running variance one.
  static ModelState zeros(const ModelConfig& config);

  // Every parameter array in persistence order.
  std::vector<std::pair<std::string, const Array*>> named_arrays() const;
  std::vector<std::pair<std::string, Array*>> named_arrays();
};

// Order-sensitive digest of all parameters and BN statistics.
std::uint64_t parameter_digest(const ModelState& model);

enum class BnMode {
  SourceRunning,  // normalize with stored running statistics
  BatchStats,     // normalize with the current batch's statistics
  FrozenBatch,    // normalize with externally supplied batch statistics
};

struct BnStats {
  Array mean;  // [C]
  Array var;   // [C], population variance
  std::size_t count = 0;  // elements per channel the statistics were taken over
};
using BnCache = std::array<BnStats, kNumBlocks>;

// Tapped activation batch [B x C x H x W] and the 1-based block it came from.
struct FeatureMap {
  Array values;
  std::size_t layer = 1;

  std::size_t batch() const { return values.dim(0); }
  std::size_t channels() const { return values.dim(1); }
  std::size_t height() const { return values.dim(2); }
  std::size_t width() const { return values.dim(3); }
};

struct DropoutSpec {
  double rate = 0.0;
  Rng* rng = nullptr;
};

struct ForwardOptions {
  BnMode bn_mode = BnMode::SourceRunning;
  const BnCache* frozen = nullptr;  // required for FrozenBatch
  std::optional<DropoutSpec> dropout;
  bool keep_trace = false;  // retain activations for backward()
};

struct BlockTrace {
  Array input;
  Array pre_bn;
  Array normalized;
  Array output;
  std::vector<double> inv_std;
};

struct Trace {
  std::array<BlockTrace, kNumBlocks> blocks;
  Array dropped;       // [B x D] embedding after dropout
  Array dropout_mask;  // empty when dropout was inactive
};

struct ForwardResult {
  Array logits;  // [B x K]
  FeatureMap tap;
  BnCache bn_cache;  // the statistics each BN layer normalized with
  Array embedding;   // [B x D] pooled features, before dropout
  BnMode bn_mode = BnMode::SourceRunning;
  std::optional<Trace> trace;
};

// Forward pass. Pure: BatchStats mode reports batch statistics in bn_cache
// but does not touch the running statistics; see update_running_stats.
ForwardResult forward(const ModelState& model, const Array& batch, const ForwardOptions& options);

struct TapForward {
  Array logits;
  Array embedding;
};

// Resumes the network after the tap block from an injected feature map.
TapForward forward_from_tap(const ModelState& model, const FeatureMap& tap, const BnCache& frozen,
                            BnMode bn_mode = BnMode::FrozenBatch);

// Classifier head only: optional dropout on the embedding, then fc.
Array head_forward(const ModelState& model, const Array& embedding, const std::optional<DropoutSpec>& dropout);

// running <- (1 - momentum) * running + momentum * batch (unbiased variance).
void update_running_stats(ModelState& model, const BnCache& cache, double momentum);

double entropy_loss(const Array& logits);
Array entropy_loss_grad(const Array& logits);
double cross_entropy_loss(const Array& logits, const std::vector<int>& labels);
Array cross_entropy_grad(const Array& logits, const std::vector<int>& labels);

struct BlockGradients {
  Array weight;
  Array bias;
  Array gamma;
  Array beta;
};

struct Gradients {
  std::array<BlockGradients, kNumBlocks> blocks;
  Array fc_weight;
  Array fc_bias;
};

// Backpropagates grad_logits through a traced forward. With affine_only the
// conv and fc weight gradients are left empty (activations still flow).
Gradients backward(const ModelState& model, const ForwardResult& forward_result, const Array& grad_logits,
                   bool affine_only = false);

struct AffineGradients {
  std::array<Array, kNumBlocks> gamma;
  std::array<Array, kNumBlocks> beta;
};

// Gradient of entropy_loss w.r.t. every BN gamma/beta under the given mode.
// Throws NumericError naming the block on a non-finite gradient.
AffineGradients grad_bn_affine(const ModelState& model, const Array& batch, BnMode bn_mode = BnMode::BatchStats);

// Weight file: "SICLW001", u32 array count, then per array u32 name length,
// name bytes, u32 rank, u64 dims, f64 data. All little-endian.
void save_weights(const ModelState& model, const std::filesystem::path& path);
ModelState load_weights(const std::filesystem::path& path, const ModelConfig& config);

}  // namespace sicl::nn
