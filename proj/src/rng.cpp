#include "sicl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sicl/errors.hpp"

namespace sicl {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t hash_label(std::uint64_t seed, std::uint64_t stream, std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(h ^ mix64(seed ^ mix64(stream)));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(mix64(seed) ^ mix64(stream + 0x632be59bd9b4e019ULL)) {}

Rng Rng::derive(std::string_view label) const { return Rng(seed_, hash_label(seed_, stream_, label)); }

Rng Rng::derive(std::string_view label, std::uint64_t index) const {
  return Rng(seed_, mix64(hash_label(seed_, stream_, label) ^ mix64(index + 1)));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

double Rng::gamma(double shape) {
  if (!(shape > 0.0)) throw ArgumentError("gamma shape must be positive");
  if (shape < 1.0) return std::exp(log_gamma_small(shape));
  // Marsaglia & Tsang (2000)
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = gaussian();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform_open();
    if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
  }
}

// log of a Gamma(shape < 1) draw; boosting keeps tiny shapes from underflowing.
double Rng::log_gamma_small(double shape) {
  const double boosted = gamma(shape + 1.0);
  return std::log(boosted) + std::log(uniform_open()) / shape;
}

std::uint64_t Rng::poisson(double lambda) {
  if (lambda < 0.0) throw ArgumentError("poisson rate must be nonnegative");
  if (lambda == 0.0) return 0;
  if (lambda < 30.0) {
    const double limit = std::exp(-lambda);
    std::uint64_t k = 0;
    double p = uniform_open();
    while (p > limit) {
      ++k;
      p *= uniform_open();
    }
    return k;
  }
  // Hormann's transformed rejection (PTRS)
  const double slam = std::sqrt(lambda);
  const double loglam = std::log(lambda);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  for (;;) {
    const double u = uniform() - 0.5;
    const double v = uniform_open();
    const double us = 0.5 - std::abs(u);
    const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::uint64_t>(k);
    if (k < 0.0 || (us < 0.013 && v > us)) continue;
    if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
        -lambda + k * loglam - std::lgamma(k + 1.0)) {
      return static_cast<std::uint64_t>(k);
    }
  }
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw ArgumentError("uniform_index of empty range");
  // rejection sampling removes modulo bias
  const std::uint64_t bound = static_cast<std::uint64_t>(n);
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return static_cast<std::size_t>(x % bound);
}

Array sample_gaussian(Rng& rng, const Shape& shape, double mean, double std) {
  if (!(std >= 0.0)) throw ArgumentError("gaussian std must be nonnegative");
  Array out(shape, mean);
  if (std == 0.0) return out;
  for (double& v : out.data()) v = mean + std * rng.gaussian();
  return out;
}

Array sample_dirichlet(Rng& rng, double alpha, std::size_t k) {
  if (!(alpha > 0.0)) throw ArgumentError("dirichlet alpha must be positive");
  if (k == 0) throw ArgumentError("dirichlet dimension must be at least 1");
  Array out({k});
  if (alpha >= 1.0) {
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += out[i] = rng.gamma(alpha);
    for (double& v : out.data()) v /= total;
  } else {
    // log-space normalization; all-underflow draws stay on the simplex
    std::vector<double> logs(k);
    for (std::size_t i = 0; i < k; ++i) logs[i] = rng.log_gamma_small(alpha);
    const double m = *std::max_element(logs.begin(), logs.end());
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) total += out[i] = std::exp(logs[i] - m);
    for (double& v : out.data()) v /= total;
  }
  return out;
}

}  // namespace sicl
