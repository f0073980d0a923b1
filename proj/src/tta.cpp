#include "sicl/tta.hpp"

#include <cmath>

#include "sicl/errors.hpp"

namespace sicl::tta {

void AdaptConfig::validate() const {
  if (method == AdaptMethod::Tent && !(lr >= 0.0)) throw ArgumentError("TENT learning rate must be nonnegative");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0)) throw ArgumentError("bn_momentum must lie in (0, 1]");
  if (steps_per_batch < 1) throw ArgumentError("steps_per_batch must be at least 1");
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ArgumentError("sgd_momentum must lie in [0, 1)");
}

AdaptMethod parse_method(const std::string& name) {
  if (name == "none") return AdaptMethod::None;
  if (name == "bn_stats_only") return AdaptMethod::BnStatsOnly;
  if (name == "tent") return AdaptMethod::Tent;
  throw ArgumentError("unknown adaptation method '" + name + "' (expected none, bn_stats_only, tent)");
}

std::string method_name(AdaptMethod method) {
  switch (method) {
    case AdaptMethod::None:
      return "none";
    case AdaptMethod::BnStatsOnly:
      return "bn_stats_only";
    case AdaptMethod::Tent:
      return "tent";
  }
  return "unknown";
}

namespace {

nn::ForwardOptions with_mode(nn::BnMode mode) {
  nn::ForwardOptions o;
  o.bn_mode = mode;
  return o;
}

}  // namespace

AdaptResult adapt_step(nn::ModelState& model, const Array& batch, const AdaptConfig& config, std::size_t batch_index,
                       AdaptState* state) {
  config.validate();
  if (batch.rank() != 4 || batch.dim(0) == 0) throw ArgumentError("adapt_step: empty batch");

  if (config.method == AdaptMethod::None) {
    AdaptResult r{nn::forward(model, batch, with_mode(nn::BnMode::SourceRunning)), 0.0, 0.0};
    r.entropy_before = r.entropy_after = nn::entropy_loss(r.forward.logits);
    return r;
  }
  if (config.method == AdaptMethod::BnStatsOnly) {
    AdaptResult r{nn::forward(model, batch, with_mode(nn::BnMode::BatchStats)), 0.0, 0.0};
    r.entropy_before = r.entropy_after = nn::entropy_loss(r.forward.logits);
    nn::update_running_stats(model, r.forward.bn_cache, config.bn_momentum);
    return r;
  }

  const nn::ModelState backup = model;
  const AdaptState state_backup = state ? *state : AdaptState{};
  auto fail = [&](const std::string& what) {
    model = backup;
    if (state) *state = state_backup;
    throw AdaptationError(batch_index, what);
  };

  AdaptResult result;
  for (std::size_t step = 0; step < config.steps_per_batch; ++step) {
    nn::ForwardOptions opts = with_mode(nn::BnMode::BatchStats);
    opts.keep_trace = true;
    nn::ForwardResult fwd;
    try {
      fwd = nn::forward(model, batch, opts);
    } catch (const NumericError& e) {
      fail(e.what());
    }
    const double loss = nn::entropy_loss(fwd.logits);
    if (!std::isfinite(loss)) fail("non-finite entropy loss");
    if (step == 0) result.entropy_before = loss;

    const nn::Gradients grads = nn::backward(model, fwd, nn::entropy_loss_grad(fwd.logits), true);
    for (std::size_t i = 0; i < nn::kNumBlocks; ++i) {
      if (!grads.blocks[i].gamma.all_finite() || !grads.blocks[i].beta.all_finite()) {
        fail("non-finite BN affine gradient in block " + std::to_string(i + 1));
      }
    }
    nn::update_running_stats(model, fwd.bn_cache, config.bn_momentum);
    for (std::size_t i = 0; i < nn::kNumBlocks; ++i) {
      nn::BatchNorm& bn = model.blocks[i].bn;
      const Array& dg = grads.blocks[i].gamma;
      const Array& db = grads.blocks[i].beta;
      if (config.sgd_momentum > 0.0 && state != nullptr) {
        Array& vg = state->gamma_velocity[i];
        Array& vb = state->beta_velocity[i];
        if (vg.size() != dg.size()) vg = Array(dg.shape());
        if (vb.size() != db.size()) vb = Array(db.shape());
        for (std::size_t c = 0; c < dg.size(); ++c) {
          vg[c] = config.sgd_momentum * vg[c] + dg[c];
          vb[c] = config.sgd_momentum * vb[c] + db[c];
          bn.gamma[c] -= config.lr * vg[c];
          bn.beta[c] -= config.lr * vb[c];
        }
      } else {
        for (std::size_t c = 0; c < dg.size(); ++c) {
          bn.gamma[c] -= config.lr * dg[c];
          bn.beta[c] -= config.lr * db[c];
        }
      }
      if (!bn.gamma.all_finite() || !bn.beta.all_finite()) {
        fail("non-finite BN affine parameter in block " + std::to_string(i + 1) + " after update");
      }
    }
  }

  try {
    result.forward = nn::forward(model, batch, with_mode(nn::BnMode::BatchStats));
  } catch (const NumericError& e) {
    fail(e.what());
  }
  result.entropy_after = nn::entropy_loss(result.forward.logits);
  if (!std::isfinite(result.entropy_after)) fail("non-finite entropy after update");
  return result;
}

}  // namespace sicl::tta
