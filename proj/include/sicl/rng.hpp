#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <utility>
#include <vector>

#include "sicl/tensor.hpp"

namespace sicl {

// Seeded random source. Output depends only on (seed, stream id, call
// sequence): the engine is std::mt19937_64, whose output sequence is fixed
// by the standard, and every distribution below is implemented here rather
// than taken from <random>, whose distributions are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  // Independent child stream keyed by a label, e.g. rng.derive("sicl").
  Rng derive(std::string_view label) const;
  Rng derive(std::string_view label, std::uint64_t index) const;

  std::uint64_t next_u64() { return engine_(); }
  double uniform();       // [0, 1)
  double uniform_open();  // (0, 1)
  double gaussian();      // N(0, 1), Marsaglia polar method
  double gamma(double shape);
  std::uint64_t poisson(double lambda);
  std::size_t uniform_index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

 private:
  double log_gamma_small(double shape);

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;

  friend Array sample_dirichlet(Rng& rng, double alpha, std::size_t k);
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_label(std::uint64_t seed, std::uint64_t stream, std::string_view label);

// i.i.d. N(mean, std^2). std == 0 yields a constant array.
Array sample_gaussian(Rng& rng, const Shape& shape, double mean, double std);

// Symmetric Dirichlet(alpha * 1_k) via normalized Gamma draws.
Array sample_dirichlet(Rng& rng, double alpha, std::size_t k);

}  // namespace sicl
