#pragma once

#include "sicl/nn.hpp"
#include "sicl/rng.hpp"
#include "sicl/tensor.hpp"

// Style/content transforms on single feature maps [C x H x W]. Style is the
// per-channel mean and standard deviation; content is the whitened residual.
namespace sicl::style {

inline constexpr double kDefaultEps = 1e-5;

struct StyleStats {
  Array mu;     // [C] spatial mean per channel
  Array sigma;  // [C] population standard deviation per channel
  double eps = kDefaultEps;
};

enum class PerturbMode { Both, MuOnly, SigmaOnly };

struct PerturbOptions {
  PerturbMode mode = PerturbMode::Both;
  bool clamp_sigma = false;  // clamp perturbed sigma at 0 (ablation); off by default
};

StyleStats channel_stats(const Array& f, double eps = kDefaultEps);

// Population std over the batch of each channel's instance mean: [C].
// A batch of one yields zeros.
Array batch_delta(const nn::FeatureMap& taps);

// sigma_p * (f - mu) / sigma + mu_p with
// mu_p = mu + delta * e_mu, sigma_p = sigma + delta * e_sigma, e ~ N(0, 1)
// drawn once per channel.
Array perturb_style(const Array& f, const StyleStats& stats, const Array& delta, Rng& rng,
                    const PerturbOptions& options = {});

// Same transform with explicit target statistics. Output channel statistics
// are (mu_target, |sigma_target|); a constant channel is only shifted.
Array restyle(const Array& f, const StyleStats& stats, const Array& mu_target, const Array& sigma_target);

Array whiten(const Array& f, const StyleStats& stats);

// sigma * (whiten(f) + e) + mu, e drawn elementwise with per-channel std
// equal to the std of the whitened channel.
Array perturb_content(const Array& f, const StyleStats& stats, Rng& rng);

// Content of f_a rendered with the lambda-mix of both maps' statistics.
Array mixstyle(const Array& f_a, const Array& f_b, double lambda, double eps = kDefaultEps);

// Channel co-activation matrix normalized by C*H*W: [C x C].
Array gram(const Array& f);

// Squared Frobenius distance between Gram matrices.
double style_variance(const Array& f, const Array& f_variant);

// [C x H x W] view of instance i of a batched feature map.
Array instance(const nn::FeatureMap& taps, std::size_t i);

}  // namespace sicl::style
