#pragma once

#include <string>

#include "sicl/nn.hpp"

namespace sicl::tta {

enum class AdaptMethod { None, BnStatsOnly, Tent };

struct AdaptConfig {
  AdaptMethod method = AdaptMethod::Tent;
  double lr = 1e-3;
  double bn_momentum = 0.1;
  std::size_t steps_per_batch = 1;
  double sgd_momentum = 0.0;  // plain SGD by default

  void validate() const;
};

// Velocity buffers for SGD with momentum, carried across batches.
struct AdaptState {
  std::array<Array, nn::kNumBlocks> gamma_velocity;
  std::array<Array, nn::kNumBlocks> beta_velocity;
};

struct AdaptResult {
  nn::ForwardResult forward;  // post-update pass handed to calibrators
  double entropy_before = 0.0;
  double entropy_after = 0.0;
};

// One online adaptation step on a test batch.
//   Tent        - BatchStats forward, running-stat refresh, SGD on BN gamma/beta
//                 (steps_per_batch times), then a post-update BatchStats forward.
//   BnStatsOnly - BatchStats forward and running-stat refresh only.
//   None        - SourceRunning inference.
// Throws AdaptationError carrying batch_index on a non-finite loss or
// gradient, after restoring the model to its pre-step state.
AdaptResult adapt_step(nn::ModelState& model, const Array& batch, const AdaptConfig& config,
                       std::size_t batch_index = 0, AdaptState* state = nullptr);

AdaptMethod parse_method(const std::string& name);
std::string method_name(AdaptMethod method);

}  // namespace sicl::tta
