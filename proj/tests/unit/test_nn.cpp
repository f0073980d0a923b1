#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sicl/errors.hpp"
#include "sicl/nn.hpp"

using namespace sicl;

namespace {

nn::ModelConfig small_config() {
  nn::ModelConfig c;
  c.image_size = 8;
  c.num_classes = 4;
  c.widths = {3, 4, 5};
  return c;
}

Array random_batch(std::size_t b, const nn::ModelConfig& c, Rng& rng) {
  Array x({b, c.in_channels, c.image_size, c.image_size});
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

double ce(const nn::ModelState& m, const Array& x, const std::vector<int>& y, nn::BnMode mode) {
  nn::ForwardOptions o;
  o.bn_mode = mode;
  return nn::cross_entropy_loss(nn::forward(m, x, o).logits, y);
}

void perturb_randomly(nn::ModelState& m, Rng& rng) {
  for (auto& [name, arr] : m.named_arrays()) {
    if (name.find("running_var") != std::string::npos) {
      for (double& v : arr->data()) v = 0.5 + rng.uniform();
    } else {
      for (double& v : arr->data()) v += 0.1 * rng.gaussian();
    }
  }
}

const Array& grad_for(const nn::Gradients& g, const std::string& name) {
  for (std::size_t i = 0; i < nn::kNumBlocks; ++i) {
    const std::string p = "block" + std::to_string(i + 1) + ".";
    if (name == p + "conv.weight") return g.blocks[i].weight;
    if (name == p + "conv.bias") return g.blocks[i].bias;
    if (name == p + "bn.gamma") return g.blocks[i].gamma;
    if (name == p + "bn.beta") return g.blocks[i].beta;
  }
  if (name == "fc.weight") return g.fc_weight;
  if (name == "fc.bias") return g.fc_bias;
  throw std::runtime_error("no gradient for " + name);
}

}  // namespace

TEST_CASE("parameter names cover the gradient structure") {
  Rng rng(1);
  const auto m = nn::ModelState::initialize(small_config(), rng);
  std::size_t trainable = 0;
  for (const auto& [name, arr] : m.named_arrays()) {
    if (name.find("running") != std::string::npos) continue;
    ++trainable;
  }
  CHECK(trainable == 4 * nn::kNumBlocks + 2);
}

TEST_CASE("backward matches central differences") {
  for (const nn::BnMode mode : {nn::BnMode::BatchStats, nn::BnMode::SourceRunning}) {
    CAPTURE(static_cast<int>(mode));
    Rng rng(2);
    auto m = nn::ModelState::initialize(small_config(), rng);
    perturb_randomly(m, rng);
    const Array x = random_batch(5, m.config, rng);
    const std::vector<int> y{0, 1, 2, 3, 1};
    nn::ForwardOptions o;
    o.bn_mode = mode;
    o.keep_trace = true;
    const auto fwd = nn::forward(m, x, o);
    const auto g = nn::backward(m, fwd, nn::cross_entropy_grad(fwd.logits, y));
    const double h = 1e-5;
    for (auto& [name, arr] : m.named_arrays()) {
      if (name.find("running") != std::string::npos) continue;
      const Array& ga = grad_for(g, name);
      REQUIRE(ga.size() == arr->size());
      for (std::size_t i = 0; i < arr->size(); ++i) {
        const double keep = (*arr)[i];
        (*arr)[i] = keep + h;
        const double up = ce(m, x, y, mode);
        (*arr)[i] = keep - h;
        const double down = ce(m, x, y, mode);
        (*arr)[i] = keep;
        const double fd = (up - down) / (2 * h);
        CAPTURE(name);
        CAPTURE(i);
        CHECK(ga[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-3));
      }
    }
  }
}

TEST_CASE("zero-weight model predicts uniformly") {
  auto m = nn::ModelState::zeros(small_config());
  Rng rng(3);
  const Array x = random_batch(3, m.config, rng);
  const Array p = softmax_rows(nn::forward(m, x, {}).logits);
  for (double v : p.values()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("dropout rate zero matches the plain path") {
  Rng rng(4);
  const auto m = nn::ModelState::initialize(small_config(), rng);
  const Array x = random_batch(4, m.config, rng);
  Rng drng(5);
  nn::ForwardOptions o;
  o.dropout = nn::DropoutSpec{0.0, &drng};
  CHECK(nn::forward(m, x, o).logits == nn::forward(m, x, {}).logits);
  o.dropout = nn::DropoutSpec{1.0, &drng};
  CHECK_THROWS_AS(nn::forward(m, x, o), ArgumentError);
}

TEST_CASE("batch statistics equal direct channel reductions") {
  Rng rng(6);
  const auto m = nn::ModelState::initialize(small_config(), rng);
  const Array x = random_batch(6, m.config, rng);
  nn::ForwardOptions o;
  o.bn_mode = nn::BnMode::BatchStats;
  o.keep_trace = true;
  const auto fwd = nn::forward(m, x, o);
  for (std::size_t i = 0; i < nn::kNumBlocks; ++i) {
    const Array& pre = fwd.trace->blocks[i].pre_bn;
    const std::size_t b = pre.dim(0), c = pre.dim(1), hw = pre.dim(2) * pre.dim(3);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0, s2 = 0.0;
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t j = 0; j < hw; ++j) s += pre[(n * c + ch) * hw + j];
      const double mu = s / static_cast<double>(b * hw);
      for (std::size_t n = 0; n < b; ++n)
        for (std::size_t j = 0; j < hw; ++j) s2 += std::pow(pre[(n * c + ch) * hw + j] - mu, 2);
      CHECK(std::abs(fwd.bn_cache[i].mean[ch] - mu) < 1e-10);
      CHECK(std::abs(fwd.bn_cache[i].var[ch] - s2 / static_cast<double>(b * hw)) < 1e-10);
    }
  }
}

TEST_CASE("forward rejects mismatched input shapes") {
  Rng rng(7);
  const auto m = nn::ModelState::initialize(small_config(), rng);
  CHECK_THROWS_AS(nn::forward(m, Array({2, 3, 9, 9}), {}), ArgumentError);
  CHECK_THROWS_AS(nn::forward(m, Array({2, 1, 8, 8}), {}), ArgumentError);
}

TEST_CASE("forward_from_tap resumes the full forward") {
  Rng rng(8);
  for (std::size_t tap = 1; tap <= nn::kNumBlocks; ++tap) {
    auto cfg = small_config();
    cfg.tap_block = tap;
    auto m = nn::ModelState::initialize(cfg, rng);
    perturb_randomly(m, rng);
    const Array x = random_batch(5, cfg, rng);
    nn::ForwardOptions o;
    o.bn_mode = nn::BnMode::BatchStats;
    const auto fwd = nn::forward(m, x, o);
    CHECK(fwd.tap.layer == tap);
    const auto res = nn::forward_from_tap(m, fwd.tap, fwd.bn_cache);
    CHECK(max_abs_diff(res.logits, fwd.logits) < 1e-10);
    CHECK(max_abs_diff(res.embedding, fwd.embedding) < 1e-10);
  }
  auto m = nn::ModelState::initialize(small_config(), rng);
  const auto fwd = nn::forward(m, random_batch(2, m.config, rng), {});
  nn::BnCache empty;
  CHECK_THROWS_AS(nn::forward_from_tap(m, fwd.tap, empty), ArgumentError);
}

TEST_CASE("source-running batch norm is affine per channel") {
  Rng rng(9);
  auto m = nn::ModelState::initialize(small_config(), rng);
  perturb_randomly(m, rng);
  // Block 1 pre-activation in SourceRunning mode: bn(a*x1 + (1-a)*x2) mixes linearly.
  const Array x1 = random_batch(1, m.config, rng), x2 = random_batch(1, m.config, rng);
  nn::ForwardOptions o;
  o.keep_trace = true;
  const double a = 0.3;
  const Array mix = add(scale(x1, a), scale(x2, 1 - a));
  auto normalized = [&](const Array& x) { return nn::forward(m, x, o).trace->blocks[0].normalized; };
  const Array lhs = normalized(mix);
  const Array rhs = add(scale(normalized(x1), a), scale(normalized(x2), 1 - a));
  CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("entropy loss values and bounds") {
  CHECK(nn::entropy_loss(Array({1, 4})) == doctest::Approx(std::log(4.0)));
  CHECK(nn::entropy_loss(Array({1, 2}, std::vector<double>{50, 0})) < 1e-20);
  CHECK(nn::entropy_loss(Array({1, 2}, std::vector<double>{std::log(3.0), 0})) ==
        doctest::Approx(-(0.75 * std::log(0.75) + 0.25 * std::log(0.25))));
  CHECK(nn::entropy_loss(Array({1, 2}, std::vector<double>{std::log(3.0), 0})) == doctest::Approx(0.5623).epsilon(1e-4));
  Rng rng(10);
  for (int t = 0; t < 100; ++t) {
    Array l({3, 5});
    for (double& v : l.data()) v = 10 * rng.gaussian();
    const double e = nn::entropy_loss(l);
    CHECK(e >= 0.0);
    CHECK(e <= std::log(5.0) + 1e-12);
  }
}

TEST_CASE("BN affine entropy gradient matches central differences") {
  auto cfg = small_config();
  cfg.num_classes = 2;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng(100 + seed);
    auto m = nn::ModelState::initialize(cfg, rng);
    perturb_randomly(m, rng);
    const Array x = random_batch(4, cfg, rng);
    const auto g = nn::grad_bn_affine(m, x);
    auto loss = [&] {
      nn::ForwardOptions o;
      o.bn_mode = nn::BnMode::BatchStats;
      return nn::entropy_loss(nn::forward(m, x, o).logits);
    };
    const double h = 1e-6;
    for (std::size_t i = 0; i < nn::kNumBlocks; ++i) {
      for (int which = 0; which < 2; ++which) {
        Array& p = which == 0 ? m.blocks[i].bn.gamma : m.blocks[i].bn.beta;
        const Array& ga = which == 0 ? g.gamma[i] : g.beta[i];
        for (std::size_t c = 0; c < p.size(); ++c) {
          const double keep = p[c];
          p[c] = keep + h;
          const double up = loss();
          p[c] = keep - h;
          const double down = loss();
          p[c] = keep;
          const double fd = (up - down) / (2 * h);
          CHECK(std::abs(ga[c] - fd) <= 1e-4 * std::max(std::abs(fd), 1e-6) + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("dead channel has zero beta gradient") {
  auto cfg = small_config();
  Rng rng(11);
  auto m = nn::ModelState::initialize(cfg, rng);
  const std::size_t dead = 2;
  for (std::size_t k = 0; k < cfg.num_classes; ++k) m.fc_weight.at(k, dead) = 0.0;
  const auto g = nn::grad_bn_affine(m, random_batch(4, cfg, rng));
  CHECK(g.beta[nn::kNumBlocks - 1][dead] == 0.0);
  CHECK(g.gamma[nn::kNumBlocks - 1][dead] == 0.0);
}

TEST_CASE("running statistics update uses unbiased variance") {
  Rng rng(12);
  auto m = nn::ModelState::initialize(small_config(), rng);
  nn::BnCache cache;
  for (std::size_t i = 0; i < nn::kNumBlocks; ++i) {
    const std::size_t c = m.config.widths[i];
    cache[i] = {Array({c}, 2.0), Array({c}, 3.0), 4};
  }
  nn::update_running_stats(m, cache, 0.1);
  CHECK(m.blocks[0].bn.running_mean[0] == doctest::Approx(0.2));
  CHECK(m.blocks[0].bn.running_var[0] == doctest::Approx(0.9 + 0.1 * 3.0 * 4.0 / 3.0));
}

TEST_CASE("weights round trip and reject bad files") {
  const auto dir = std::filesystem::temp_directory_path() / "sicl_nn_test";
  std::filesystem::create_directories(dir);
  Rng rng(13);
  auto m = nn::ModelState::initialize(small_config(), rng);
  perturb_randomly(m, rng);
  const auto path = dir / "w.bin";
  nn::save_weights(m, path);
  const auto back = nn::load_weights(path, m.config);
  for (std::size_t i = 0; i < m.named_arrays().size(); ++i) {
    CHECK(*back.named_arrays()[i].second == *m.named_arrays()[i].second);
  }
  CHECK(nn::parameter_digest(back) == nn::parameter_digest(m));

  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size / 2);
  CHECK_THROWS_AS(nn::load_weights(path, m.config), FormatError);

  nn::save_weights(m, path);
  auto other = small_config();
  other.widths = {3, 6, 5};
  try {
    nn::load_weights(path, other);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("block2") != std::string::npos);
  }

  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAGIC and more";
  }
  CHECK_THROWS_AS(nn::load_weights(path, m.config), FormatError);
  CHECK_THROWS_AS(nn::load_weights(dir / "missing.bin", m.config), FormatError);
  std::filesystem::remove_all(dir);
}
