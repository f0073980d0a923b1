#include <cmath>

#include "doctest.h"
#include "sicl/calibration.hpp"
#include "sicl/errors.hpp"

using namespace sicl;

namespace {

nn::ModelConfig tiny() {
  nn::ModelConfig c;
  c.image_size = 8;
  c.num_classes = 3;
  c.widths = {4, 4, 6};
  return c;
}

Array images(std::size_t b, const nn::ModelConfig& c, Rng& rng) {
  Array x({b, c.in_channels, c.image_size, c.image_size});
  for (double& v : x.data()) v = rng.uniform();
  return x;
}

nn::ForwardResult batch_forward(const nn::ModelState& m, const Array& x) {
  nn::ForwardOptions o;
  o.bn_mode = nn::BnMode::BatchStats;
  return nn::forward(m, x, o);
}

// Labels drawn from softmax(z); returns (T * z, labels).
std::pair<Array, std::vector<int>> synthetic_logits(double t_star, std::size_t n, std::size_t k, Rng& rng) {
  Array z({n, k});
  for (double& v : z.data()) v = 2.0 * rng.gaussian();
  const Array p = softmax_rows(z);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform(), acc = 0.0;
    std::size_t c = 0;
    for (; c + 1 < k; ++c) {
      acc += p.at(i, c);
      if (u < acc) break;
    }
    labels[i] = static_cast<int>(c);
  }
  return {scale(z, t_star), labels};
}

}  // namespace

TEST_CASE("invariance ratio and relaxation formula") {
  const std::vector<std::size_t> v{0, 0, 1, 0};
  CHECK(calibration::invariance_ratio(0, v) == 0.75);
  CHECK(calibration::relaxed_confidence(0.8, 0.25, true) == doctest::Approx(0.6));
  CHECK(calibration::relaxed_confidence(0.8, 0.25, false) == 0.8);
  for (int s = 0; s <= 10; ++s) {
    double prev = 2.0;
    for (int c = 0; c <= 10; ++c) {
      const double conf = calibration::relaxed_confidence(s / 10.0, c / 10.0, true);
      CHECK(conf <= prev);
      prev = conf;
    }
  }
}

TEST_CASE("sicl confidence bounds, labels and determinism") {
  Rng rng(1);
  auto m = nn::ModelState::initialize(tiny(), rng);
  const Array x = images(12, m.config, rng);
  const auto fwd = batch_forward(m, x);
  const auto before = nn::parameter_digest(m);
  calibration::SiclConfig cfg;
  cfg.n_variants = 7;
  const auto a = calibration::sicl_confidence(m, fwd, cfg, Rng(5));
  const auto b = calibration::sicl_confidence(m, fwd, cfg, Rng(5));
  CHECK(nn::parameter_digest(m) == before);
  REQUIRE(a.size() == 12);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& p = a[i];
    CHECK(p.predicted_class == argmax_row(fwd.logits, i));
    for (double v : {p.gamma_style, p.gamma_content, p.omega, p.confidence}) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
    CHECK(p.omega == 1.0 - p.gamma_content);
    CHECK(p.confidence == p.omega * p.gamma_style);
    const double k_style = p.gamma_style * 7, k_content = p.gamma_content * 7;
    CHECK(k_style == doctest::Approx(std::round(k_style)));
    CHECK(k_content == doctest::Approx(std::round(k_content)));
    CHECK(p.confidence == b[i].confidence);
    CHECK(p.gamma_content == b[i].gamma_content);
  }
  cfg.relaxation = false;
  for (const auto& p : calibration::sicl_confidence(m, fwd, cfg, Rng(5))) CHECK(p.confidence == p.gamma_style);
  cfg.n_variants = 0;
  CHECK_THROWS_AS(calibration::sicl_confidence(m, fwd, cfg, Rng(5)), ArgumentError);
}

TEST_CASE("identical instances give zero delta and full style invariance") {
  Rng rng(2);
  auto m = nn::ModelState::initialize(tiny(), rng);
  const Array one = images(1, m.config, rng);
  const Array x = stack({one.reshaped({3, 8, 8}), one.reshaped({3, 8, 8}), one.reshaped({3, 8, 8})});
  const auto fwd = batch_forward(m, x);
  for (const auto& p : calibration::sicl_confidence(m, fwd, {}, Rng(3))) CHECK(p.gamma_style == 1.0);
}

TEST_CASE("msp and temperature confidence examples") {
  const Array k2({1, 2}, std::vector<double>{std::log(3.0), 0.0});
  CHECK(calibration::msp_confidence(k2)[0].confidence == doctest::Approx(0.75));
  CHECK(calibration::msp_confidence(Array({1, 4}))[0].confidence == doctest::Approx(0.25));
  CHECK(calibration::msp_confidence(Array({1, 3}, std::vector<double>{50, 0, 0}))[0].confidence ==
        doctest::Approx(1.0));
  CHECK(calibration::temperature_confidence(k2, 2.0)[0].confidence == doctest::Approx(0.634).epsilon(1e-3));
  CHECK(calibration::temperature_confidence(k2, 1.0)[0].confidence ==
        calibration::msp_confidence(k2)[0].confidence);
  CHECK(calibration::temperature_confidence(k2, 1e9)[0].confidence == doctest::Approx(0.5));
  Rng rng(4);
  Array l({50, 6});
  for (double& v : l.data()) v = 5 * rng.gaussian();
  const auto base = calibration::msp_confidence(l);
  for (double t : {0.01, 0.5, 3.0, 100.0}) {
    const auto p = calibration::temperature_confidence(l, t);
    for (std::size_t i = 0; i < 50; ++i) CHECK(p[i].label == base[i].label);
  }
  CHECK_THROWS_AS(calibration::temperature_confidence(l, 0.0), ArgumentError);
}

TEST_CASE("fit_temperature recovers synthetic temperatures") {
  Rng rng(5);
  for (double t_star : {0.5, 1.0, 2.0, 3.0}) {
    const auto [logits, labels] = synthetic_logits(t_star, 20000, 10, rng);
    const double t = calibration::fit_temperature(logits, labels);
    CHECK(t == doctest::Approx(t_star).epsilon(0.05));
    CHECK(calibration::temperature_nll(logits, labels, t) <= calibration::temperature_nll(logits, labels, 1.0));
  }
  CHECK_THROWS_AS(calibration::fit_temperature(Array({0, 3}), {}), ArgumentError);
}

TEST_CASE("mc dropout confidence") {
  Rng rng(6);
  const auto m = nn::ModelState::initialize(tiny(), rng);
  const Array x = images(8, m.config, rng);
  const auto fwd = nn::forward(m, x, {});
  Rng d1(7), d2(7);
  const auto p0 = calibration::mc_dropout_confidence(m, fwd.embedding, 0.0, 5, d1);
  const auto msp = calibration::msp_confidence(fwd.logits);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(p0[i].label == msp[i].label);
    CHECK(p0[i].confidence == doctest::Approx(msp[i].confidence).epsilon(1e-12));
  }
  const Array probs = calibration::mc_dropout_probabilities(m, fwd.embedding, 0.3, 20, d1);
  for (std::size_t i = 0; i < 8; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 3; ++k) s += probs.at(i, k);
    CHECK(std::abs(s - 1.0) < 1e-10);
  }
  Rng e1(8), e2(8);
  const auto a = calibration::mc_dropout_confidence(m, fwd.embedding, 0.3, 20, e1);
  const auto b = calibration::mc_dropout_confidence(m, fwd.embedding, 0.3, 20, e2);
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i].confidence == b[i].confidence);
  CHECK_THROWS_AS(calibration::mc_dropout_confidence(m, fwd.embedding, 1.0, 5, d2), ArgumentError);
  CHECK_THROWS_AS(calibration::mc_dropout_confidence(m, fwd.embedding, -0.1, 5, d2), ArgumentError);
}
