#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "sicl/errors.hpp"
#include "sicl/style.hpp"

using namespace sicl;

namespace {

// Channels with distinct means and spreads well above eps.
Array random_map(Rng& rng, std::size_t c = 4, std::size_t h = 6, std::size_t w = 5) {
  Array f({c, h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double mu = 3.0 * rng.gaussian(), sd = 0.5 + 2.0 * rng.uniform();
    for (std::size_t j = 0; j < h * w; ++j) f[ch * h * w + j] = mu + sd * rng.gaussian();
  }
  return f;
}

nn::FeatureMap batch_of(const std::vector<Array>& maps) { return nn::FeatureMap{stack(maps), 1}; }

}  // namespace

TEST_CASE("channel_stats examples") {
  const auto s = style::channel_stats(Array({2, 2, 2}, 3.0));
  CHECK(s.mu.values() == std::vector<double>{3, 3});
  CHECK(s.sigma.values() == std::vector<double>{0, 0});
  const auto t = style::channel_stats(Array({1, 2, 2}, std::vector<double>{1, 3, 5, 7}));
  CHECK(t.mu[0] == doctest::Approx(4.0));
  CHECK(t.sigma[0] == doctest::Approx(std::sqrt(5.0)));
  Rng rng(1);
  Array f = random_map(rng, 3, 4, 4);
  Array g = f;
  std::vector<std::size_t> perm(16);
  for (std::size_t i = 0; i < 16; ++i) perm[i] = (i * 7 + 3) % 16;
  for (std::size_t ch = 0; ch < 3; ++ch)
    for (std::size_t i = 0; i < 16; ++i) g[ch * 16 + i] = f[ch * 16 + perm[i]];
  const auto sf = style::channel_stats(f), sg = style::channel_stats(g);
  CHECK(max_abs_diff(sf.mu, sg.mu) < 1e-12);
  CHECK(max_abs_diff(sf.sigma, sg.sigma) < 1e-12);
}

TEST_CASE("batch_delta examples") {
  Rng rng(2);
  const Array f = random_map(rng);
  CHECK(style::batch_delta(batch_of({f})).values() == std::vector<double>(4, 0.0));
  CHECK(style::batch_delta(batch_of({f, f, f})).values() == std::vector<double>(4, 0.0));
  const Array d = style::batch_delta(batch_of({Array({1, 2, 2}, 1.0), Array({1, 2, 2}, 3.0)}));
  CHECK(d[0] == doctest::Approx(1.0));
}

TEST_CASE("perturb_style with zero delta is the identity") {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const Array f = random_map(rng);
    const auto s = style::channel_stats(f);
    const Array out = style::perturb_style(f, s, Array({4}), rng);
    CHECK(max_abs_diff(out, f) < 1e-8);
  }
}

TEST_CASE("perturbed maps realize the targeted statistics") {
  Rng rng(4);
  for (const auto mode : {style::PerturbMode::Both, style::PerturbMode::MuOnly, style::PerturbMode::SigmaOnly}) {
    for (int t = 0; t < 20; ++t) {
      const Array f = random_map(rng);
      const auto s = style::channel_stats(f);
      const Array delta({4}, 0.7);
      Rng a = rng.derive("v", t), b = a;
      const Array out = style::perturb_style(f, s, delta, a, {mode, false});
      const auto so = style::channel_stats(out);
      for (std::size_t ch = 0; ch < 4; ++ch) {
        const double e_mu = b.gaussian(), e_sigma = b.gaussian();
        const double mu_p = s.mu[ch] + (mode != style::PerturbMode::SigmaOnly ? delta[ch] * e_mu : 0.0);
        const double sigma_p = s.sigma[ch] + (mode != style::PerturbMode::MuOnly ? delta[ch] * e_sigma : 0.0);
        CHECK(std::abs(so.mu[ch] - mu_p) < 1e-8);
        CHECK(std::abs(so.sigma[ch] - std::abs(sigma_p)) < 1e-8);
      }
    }
  }
}

TEST_CASE("whitening removes style perturbations") {
  Rng rng(5);
  std::size_t checked = 0;
  for (int t = 0; t < 50; ++t) {
    Array f = random_map(rng);
    for (double& v : f.data()) v *= 100.0;  // sigma well above eps
    const auto s = style::channel_stats(f);
    Rng a = rng.derive("w", t), b = a;
    const Array out = style::perturb_style(f, s, Array({4}, 20.0), a);
    const Array wf = style::whiten(f, s), wo = style::whiten(out, style::channel_stats(out));
    const std::size_t hw = 30;
    for (std::size_t ch = 0; ch < 4; ++ch) {
      b.gaussian();
      const double sigma_p = s.sigma[ch] + 20.0 * b.gaussian();
      const double sign = sigma_p < 0 ? -1.0 : 1.0;
      if (std::abs(sigma_p) < 50.0) continue;
      for (std::size_t j = 0; j < hw; ++j) CHECK(std::abs(sign * wo[ch * hw + j] - wf[ch * hw + j]) < 1e-6);
      ++checked;
    }
  }
  CHECK(checked > 100);
}

TEST_CASE("perturb_style is reproducible and clamps on request") {
  Rng rng(6);
  const Array f = random_map(rng);
  const auto s = style::channel_stats(f);
  const Array delta({4}, 10.0);
  Rng a(9), b(9);
  CHECK(style::perturb_style(f, s, delta, a) == style::perturb_style(f, s, delta, b));
  for (int t = 0; t < 20; ++t) {
    const auto so = style::channel_stats(style::perturb_style(f, s, delta, a, {style::PerturbMode::Both, true}));
    for (std::size_t ch = 0; ch < 4; ++ch) CHECK(so.sigma[ch] >= 0.0);
  }
  CHECK_THROWS_AS(style::perturb_style(f, s, Array({3}), a), ArgumentError);
}

TEST_CASE("constant channels are shifted only") {
  Array f({1, 2, 2}, 2.0);
  const auto s = style::channel_stats(f);
  Rng rng(7);
  const Array out = style::perturb_style(f, s, Array({1}, 1.0), rng);
  CHECK(style::channel_stats(out).sigma[0] == 0.0);
  CHECK(max_abs_diff(style::whiten(f, s), Array({1, 2, 2})) == 0.0);
}

TEST_CASE("whiten centers and inverts") {
  Rng rng(8);
  const Array f = random_map(rng);
  const auto s = style::channel_stats(f);
  const Array w = style::whiten(f, s);
  const auto sw = style::channel_stats(w);
  for (std::size_t ch = 0; ch < 4; ++ch) {
    CHECK(std::abs(sw.mu[ch]) < 1e-8);
    CHECK(sw.sigma[ch] == doctest::Approx(s.sigma[ch] / (s.sigma[ch] + s.eps)).epsilon(1e-10));
  }
  Array back(f.shape());
  for (std::size_t ch = 0; ch < 4; ++ch)
    for (std::size_t j = 0; j < 30; ++j) back[ch * 30 + j] = (s.sigma[ch] + s.eps) * w[ch * 30 + j] + s.mu[ch];
  CHECK(max_abs_diff(back, f) < 1e-6);
}

TEST_CASE("perturb_content keeps channel means within the CLT bound") {
  Rng rng(9);
  const std::size_t h = 32, w = 32;
  Array f = random_map(rng, 3, h, w);
  const auto s = style::channel_stats(f);
  const auto sw = style::channel_stats(style::whiten(f, s));
  std::size_t inside = 0, total = 0;
  for (int t = 0; t < 100; ++t) {
    const Array out = style::perturb_content(f, s, rng);
    CHECK(out != f);
    const auto so = style::channel_stats(out);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double bound = 3.0 * s.sigma[ch] * sw.sigma[ch] / std::sqrt(static_cast<double>(h * w));
      inside += std::abs(so.mu[ch] - s.mu[ch]) <= bound;
      ++total;
      CHECK(so.sigma[ch] > s.sigma[ch]);
    }
  }
  CHECK(static_cast<double>(inside) / static_cast<double>(total) > 0.98);
  Array c({1, 2, 2}, 5.0);
  CHECK(style::perturb_content(c, style::channel_stats(c), rng) == c);
}

TEST_CASE("mixstyle endpoints and content preservation") {
  Rng rng(10);
  const Array a = random_map(rng), b = random_map(rng);
  CHECK(max_abs_diff(style::mixstyle(a, b, 1.0), a) < 1e-6);
  for (double lambda : {0.0, 0.3, 0.9}) CHECK(max_abs_diff(style::mixstyle(a, a, lambda), a) < 1e-6);
  const Array m0 = style::mixstyle(a, b, 0.0);
  const auto sb = style::channel_stats(b), sm = style::channel_stats(m0);
  CHECK(max_abs_diff(sm.mu, sb.mu) < 1e-8);
  CHECK(max_abs_diff(sm.sigma, sb.sigma) < 1e-8);
  const auto sa = style::channel_stats(a);
  CHECK(max_abs_diff(style::whiten(style::mixstyle(a, b, 0.4), style::channel_stats(style::mixstyle(a, b, 0.4))),
                     style::whiten(a, sa)) < 1e-5);
  CHECK_THROWS_AS(style::mixstyle(a, Array({4, 6, 4}), 0.5), ArgumentError);
  CHECK_THROWS_AS(style::mixstyle(a, b, 1.5), ArgumentError);
}

TEST_CASE("gram matrix examples") {
  const Array g = style::gram(Array({1, 2, 2}, 1.0));
  CHECK(g.values() == std::vector<double>{1.0});
  Rng rng(11);
  const Array f = random_map(rng);
  const Array gf = style::gram(f);
  CHECK(max_abs_diff(gf, transpose(gf)) == 0.0);
  Array disjoint({2, 1, 4}, std::vector<double>{1, 2, 0, 0, 0, 0, 3, 4});
  const Array gd = style::gram(disjoint);
  CHECK(gd.at(0, 1) == 0.0);
  CHECK(gd.at(1, 0) == 0.0);
}

TEST_CASE("style_variance properties") {
  Rng rng(12);
  const Array a = random_map(rng), b = random_map(rng);
  CHECK(style::style_variance(a, a) == 0.0);
  CHECK(style::style_variance(a, b) == doctest::Approx(style::style_variance(b, a)));
  CHECK(style::style_variance(a, b) > 0.0);
  // Equal second-order statistics: a spatial permutation keeps the Gram matrix.
  Array p = a;
  std::reverse(p.data().begin(), p.data().end());
  Array rev({4, 6, 5});
  for (std::size_t ch = 0; ch < 4; ++ch)
    for (std::size_t j = 0; j < 30; ++j) rev[ch * 30 + j] = a[ch * 30 + (29 - j)];
  CHECK(style::style_variance(a, rev) < 1e-20);
  CHECK_THROWS_AS(style::style_variance(a, Array({4, 5, 6})), ArgumentError);
}
