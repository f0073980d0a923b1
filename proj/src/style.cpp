#include "sicl/style.hpp"

#include <cmath>
#include <string>

#include "sicl/errors.hpp"

namespace sicl::style {

namespace {

void require_map(const Array& f, const char* who) {
  if (f.rank() != 3 || f.dim(0) == 0 || f.dim(1) * f.dim(2) == 0) {
    throw ArgumentError(std::string(who) + ": expected a [C x H x W] feature map, got " + shape_string(f.shape()));
  }
}

void require_stats(const Array& f, const StyleStats& s) {
  if (s.mu.size() != f.dim(0) || s.sigma.size() != f.dim(0)) throw ArgumentError("style stats do not match channels");
}

}  // namespace

StyleStats channel_stats(const Array& f, double eps) {
  require_map(f, "channel_stats");
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  StyleStats s{Array({c}), Array({c}), eps};
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* p = f.data().data() + ch * hw;
    double total = 0.0;
    for (std::size_t j = 0; j < hw; ++j) total += p[j];
    const double m = total / static_cast<double>(hw);
    double sq = 0.0;
    for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - m) * (p[j] - m);
    s.mu[ch] = m;
    s.sigma[ch] = std::sqrt(sq / static_cast<double>(hw));
  }
  return s;
}

Array instance(const nn::FeatureMap& taps, std::size_t i) {
  const Array& v = taps.values;
  if (v.rank() != 4) throw ArgumentError("expected a batched [B x C x H x W] feature map");
  const auto s = v.slab(i);
  return Array({v.dim(1), v.dim(2), v.dim(3)}, std::vector<double>(s.begin(), s.end()));
}

Array batch_delta(const nn::FeatureMap& taps) {
  const Array& v = taps.values;
  if (v.rank() != 4 || v.dim(0) == 0) throw ArgumentError("batch_delta: expected a nonempty batch");
  const std::size_t b = v.dim(0), c = v.dim(1), hw = v.dim(2) * v.dim(3);
  Array means({b, c});
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = v.data().data() + (i * c + ch) * hw;
      double total = 0.0;
      for (std::size_t j = 0; j < hw; ++j) total += p[j];
      means.at(i, ch) = total / static_cast<double>(hw);
    }
  }
  Array delta({c});
  if (b == 1) return delta;
  for (std::size_t ch = 0; ch < c; ++ch) {
    double m = 0.0;
    for (std::size_t i = 0; i < b; ++i) m += means.at(i, ch);
    m /= static_cast<double>(b);
    double sq = 0.0;
    for (std::size_t i = 0; i < b; ++i) sq += (means.at(i, ch) - m) * (means.at(i, ch) - m);
    delta[ch] = std::sqrt(sq / static_cast<double>(b));
  }
  return delta;
}

Array restyle(const Array& f, const StyleStats& stats, const Array& mu_target, const Array& sigma_target) {
  require_map(f, "restyle");
  require_stats(f, stats);
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Array out(f.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mu = stats.mu[ch];
    const double factor = stats.sigma[ch] > 0.0 ? sigma_target[ch] / stats.sigma[ch] : 0.0;
    const double* p = f.data().data() + ch * hw;
    double* o = out.data().data() + ch * hw;
    for (std::size_t j = 0; j < hw; ++j) o[j] = factor * (p[j] - mu) + mu_target[ch];
  }
  return out;
}

Array perturb_style(const Array& f, const StyleStats& stats, const Array& delta, Rng& rng,
                    const PerturbOptions& options) {
  require_map(f, "perturb_style");
  require_stats(f, stats);
  const std::size_t c = f.dim(0);
  if (delta.size() != c) throw ArgumentError("perturb_style: delta does not match channels");
  Array mu_p = stats.mu;
  Array sigma_p = stats.sigma;
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double e_mu = rng.gaussian();
    const double e_sigma = rng.gaussian();
    if (options.mode != PerturbMode::SigmaOnly) mu_p[ch] += delta[ch] * e_mu;
    if (options.mode != PerturbMode::MuOnly) sigma_p[ch] += delta[ch] * e_sigma;
    if (options.clamp_sigma && sigma_p[ch] < 0.0) sigma_p[ch] = 0.0;
  }
  return restyle(f, stats, mu_p, sigma_p);
}

Array whiten(const Array& f, const StyleStats& stats) {
  require_map(f, "whiten");
  require_stats(f, stats);
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Array out(f.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double inv = 1.0 / (stats.sigma[ch] + stats.eps);
    const double* p = f.data().data() + ch * hw;
    double* o = out.data().data() + ch * hw;
    for (std::size_t j = 0; j < hw; ++j) o[j] = (p[j] - stats.mu[ch]) * inv;
  }
  return out;
}

Array perturb_content(const Array& f, const StyleStats& stats, Rng& rng) {
  const Array white = whiten(f, stats);
  const StyleStats white_stats = channel_stats(white, stats.eps);
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  Array out(f.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double noise_std = white_stats.sigma[ch];
    const double* w = white.data().data() + ch * hw;
    double* o = out.data().data() + ch * hw;
    for (std::size_t j = 0; j < hw; ++j) {
      const double e = noise_std > 0.0 ? noise_std * rng.gaussian() : 0.0;
      o[j] = stats.sigma[ch] * (w[j] + e) + stats.mu[ch];
    }
  }
  return out;
}

Array mixstyle(const Array& f_a, const Array& f_b, double lambda, double eps) {
  if (f_a.shape() != f_b.shape()) throw ArgumentError("mixstyle: shape mismatch");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ArgumentError("mixstyle: lambda must lie in [0, 1]");
  const StyleStats a = channel_stats(f_a, eps);
  const StyleStats b = channel_stats(f_b, eps);
  const Array mu_m = add(scale(a.mu, lambda), scale(b.mu, 1.0 - lambda));
  const Array sigma_m = add(scale(a.sigma, lambda), scale(b.sigma, 1.0 - lambda));
  return restyle(f_a, a, mu_m, sigma_m);
}

Array gram(const Array& f) {
  require_map(f, "gram");
  const std::size_t c = f.dim(0), hw = f.dim(1) * f.dim(2);
  const double norm = static_cast<double>(c * hw);
  Array g({c, c});
  for (std::size_t i = 0; i < c; ++i) {
    const double* pi = f.data().data() + i * hw;
    for (std::size_t j = i; j < c; ++j) {
      const double* pj = f.data().data() + j * hw;
      double s = 0.0;
      for (std::size_t t = 0; t < hw; ++t) s += pi[t] * pj[t];
      g.at(i, j) = g.at(j, i) = s / norm;
    }
  }
  return g;
}

double style_variance(const Array& f, const Array& f_variant) {
  if (f.shape() != f_variant.shape()) throw ArgumentError("style_variance: shape mismatch");
  const double d = frobenius_norm(subtract(gram(f), gram(f_variant)));
  return d * d;
}

}  // namespace sicl::style
