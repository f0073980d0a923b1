#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "sicl/errors.hpp"
#include "sicl/streams.hpp"

using namespace sicl;
using namespace sicl::streams;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<CorruptionSpec> all_specs(int severity = 3) {
  std::vector<CorruptionSpec> specs;
  std::uint64_t s = 0;
  for (auto k : all_corruptions()) specs.push_back({k, severity, s++});
  return specs;
}

Dataset dummy(std::size_t n) {
  Dataset d;
  d.images = Array({n, 3, 4, 4}, 0.5);
  d.labels.assign(n, 0);
  d.num_classes = 10;
  d.split = Split::Test;
  return d;
}

}  // namespace

TEST_CASE("styleshapes is deterministic, labelled and in range") {
  const Dataset a = gen_styleshapes(3, 4, 10, 16), b = gen_styleshapes(3, 4, 10, 16);
  CHECK(a.images == b.images);
  CHECK(a.labels == b.labels);
  CHECK(dataset_checksum(a) == dataset_checksum(b));
  CHECK(dataset_checksum(a) != dataset_checksum(gen_styleshapes(4, 4, 10, 16)));
  CHECK(a.size() == 40);
  for (int c = 0; c < 10; ++c) CHECK(std::count(a.labels.begin(), a.labels.end(), c) == 4);
  for (double v : a.images.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(gen_styleshapes(1, 1, 10, 16).size() == 10);
  CHECK_THROWS_AS(gen_styleshapes(1, 0, 10, 16), ArgumentError);
}

TEST_CASE("class masks are pairwise distinct") {
  for (std::size_t size : {16u, 32u}) {
    for (bool alien : {false, true}) {
      for (std::size_t i = 0; i < kNumShapes; ++i) {
        const Array mi = canonical_mask(i, size, alien);
        CHECK(sum(mi) > 0.0);
        for (std::size_t j = i + 1; j < kNumShapes; ++j) {
          const Array mj = canonical_mask(j, size, alien);
          double inter = 0.0, uni = 0.0;
          for (std::size_t t = 0; t < mi.size(); ++t) {
            inter += std::min(mi[t], mj[t]);
            uni += std::max(mi[t], mj[t]);
          }
          CAPTURE(i);
          CAPTURE(j);
          CHECK(inter / uni < 0.8);
        }
      }
    }
  }
}

TEST_CASE("alien shapes are unlabelled OOD images") {
  const Dataset o = gen_alien_shapes(5, 20, 16);
  CHECK(o.size() == 20);
  CHECK(o.split == Split::Ood);
  for (int l : o.labels) CHECK(l == -1);
}

TEST_CASE("cifar10 binary ingestion") {
  const auto dir = temp_dir("sicl_cifar");
  std::vector<unsigned char> bytes(2 * 3073);
  bytes[0] = 9;
  bytes[3073] = 2;
  for (std::size_t i = 1; i < 3073; ++i) bytes[i] = static_cast<unsigned char>(i % 256);
  {
    std::ofstream f(dir / "test_batch.bin", std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  const Dataset d = load_cifar10_binary(dir, Split::Test);
  CHECK(d.size() == 2);
  CHECK(d.images.shape() == Shape{2, 3, 32, 32});
  CHECK(d.labels == std::vector<int>{9, 2});
  CHECK(d.images[0] == doctest::Approx(1.0 / 255.0));
  {
    std::ofstream f(dir / "test_batch.bin", std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), 3073 + 100);
  }
  try {
    load_cifar10_binary(dir, Split::Test);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("3073") != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("dataset cache round trip and corruption handling") {
  const auto dir = temp_dir("sicl_cache");
  const Dataset a = gen_styleshapes(7, 2, 10, 16);
  save_dataset(a, dir / "a.sicld");
  const Dataset b = load_dataset(dir / "a.sicld", Split::Train);
  CHECK(b.images == a.images);
  CHECK(b.labels == a.labels);
  const Dataset o = gen_alien_shapes(1, 3, 16);
  save_dataset(o, dir / "o.sicld");
  CHECK(load_dataset(dir / "o.sicld", Split::Ood).labels == o.labels);
  std::filesystem::resize_file(dir / "a.sicld", 40);
  CHECK_THROWS_AS(load_dataset(dir / "a.sicld"), FormatError);
  {
    std::ofstream f(dir / "bad.sicld", std::ios::binary);
    f << "SICLX001xxxxxxxxxxxxxxxxxxxxxxxxxx";
  }
  CHECK_THROWS_AS(load_dataset(dir / "bad.sicld"), FormatError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("gaussian noise matches its ladder") {
  const Array img({3, 32, 32}, 0.5);
  for (int s = 1; s <= 5; ++s) {
    const Array out = corrupt(img, {CorruptionKind::GaussianNoise, s, 11});
    double sq = 0.0;
    for (double v : out.values()) sq += (v - 0.5) * (v - 0.5);
    const double sd = std::sqrt(sq / static_cast<double>(out.size()));
    CHECK(sd == doctest::Approx(severity_parameter(CorruptionKind::GaussianNoise, s)).epsilon(0.1));
  }
}

TEST_CASE("corruptions are pure, clamped and behave per kind") {
  const Dataset d = gen_styleshapes(1, 1, 10, 16);
  const Array img = d.image(3);
  for (const auto& spec : all_specs()) {
    for (int s = 1; s <= 5; ++s) {
      CorruptionSpec sp = spec;
      sp.severity = s;
      const Array a = corrupt(img, sp), b = corrupt(img, sp);
      CHECK(a == b);
      for (double v : a.values()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
  }
  const Array dark({3, 8, 8}, 0.3);
  CHECK(mean(corrupt(dark, {CorruptionKind::Brightness, 3, 0})) > mean(dark));
  const Array pix = corrupt(img, {CorruptionKind::Pixelate, 5, 0});
  const std::size_t f = static_cast<std::size_t>(severity_parameter(CorruptionKind::Pixelate, 5));
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y + f <= 16; y += f)
      for (std::size_t x = 0; x + f <= 16; x += f)
        for (std::size_t dy = 0; dy < f; ++dy)
          for (std::size_t dx = 0; dx < f; ++dx)
            CHECK(pix[(c * 16 + y + dy) * 16 + x + dx] == pix[(c * 16 + y) * 16 + x]);
  CHECK_THROWS_AS(corrupt(img, {CorruptionKind::Contrast, 6, 0}), ArgumentError);
  for (auto k : all_corruptions()) CHECK(parse_corruption(corruption_name(k)) == k);
  CHECK_THROWS_AS(parse_corruption("frost"), ArgumentError);
}

TEST_CASE("benign plans") {
  const Dataset d = dummy(100);
  const auto p = plan_benign(d, {CorruptionKind::Contrast, 2, 0}, 60, 16, 4);
  CHECK(p.size() == 60);
  std::set<std::size_t> seen;
  for (const auto& e : p.entries) {
    CHECK(e.spec.kind == CorruptionKind::Contrast);
    CHECK(e.sample_index < 100);
    seen.insert(e.sample_index);
  }
  CHECK(seen.size() == 60);
  const auto q = plan_benign(d, {CorruptionKind::Contrast, 2, 0}, 60, 16, 4);
  for (std::size_t i = 0; i < 60; ++i) CHECK(p.entries[i].sample_index == q.entries[i].sample_index);
  CHECK(plan_benign(d, {}, 16, 16, 1).num_batches() == 1);
  CHECK_THROWS_AS(plan_benign(d, {}, 101, 16, 1), ArgumentError);
}

TEST_CASE("dynamic plans conserve counts") {
  const Dataset d = dummy(50);
  const auto specs = all_specs();
  for (double alpha : {0.1, 1.0, 1e6}) {
    const auto p = plan_dynamic(d, specs, alpha, 10, 32, 5, 37);
    CHECK(p.size() == 6 * 37);
    std::map<CorruptionKind, std::size_t> counts;
    for (const auto& e : p.entries) counts[e.spec.kind]++;
    for (auto k : all_corruptions()) CHECK(counts[k] == 37);
  }
  CHECK(plan_dynamic(d, specs, 0.1, 10, 32, 5).size() == 6 * 50);
  CHECK_THROWS_AS(plan_dynamic(d, {}, 0.1, 10, 32, 5), ArgumentError);
  CHECK_THROWS_AS(plan_dynamic(d, specs, 0.0, 10, 32, 5), ArgumentError);
  CHECK_THROWS_AS(plan_dynamic(d, specs, 0.1, 0, 32, 5), ArgumentError);
}

TEST_CASE("dirichlet concentration controls temporal correlation") {
  const Dataset d = dummy(60);
  const auto specs = all_specs();
  std::vector<double> rates;
  double uniform = 0.0;
  for (double alpha : {0.1, 1.0, 10.0, 1e6}) {
    double r = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto p = plan_dynamic(d, specs, alpha, 10, 64, seed, 60);
      r += adjacency_same_rate(p);
      uniform = uniform_adjacency_rate(p);
    }
    rates.push_back(r / 20);
  }
  CHECK(rates[0] >= 2.0 * uniform);
  for (std::size_t i = 1; i < rates.size(); ++i) CHECK(rates[i] <= rates[i - 1]);
  CHECK(std::abs(rates.back() - 1.0 / 6.0) < 0.05);
}

TEST_CASE("ood injection") {
  const Dataset d = dummy(100);
  const auto p = plan_benign(d, {}, 80, 16, 1);
  const auto same = inject_ood(p, 30, 0.0, 2);
  for (std::size_t i = 0; i < 80; ++i) {
    CHECK_FALSE(same.entries[i].is_ood);
    CHECK(same.entries[i].sample_index == p.entries[i].sample_index);
  }
  const auto all = inject_ood(p, 30, 1.0, 2);
  for (const auto& e : all.entries) {
    CHECK(e.is_ood);
    CHECK(e.sample_index < 30);
  }
  const auto part = inject_ood(p, 30, 0.25, 2);
  CHECK(std::count_if(part.entries.begin(), part.entries.end(), [](const StreamEntry& e) { return e.is_ood; }) == 20);
  CHECK_THROWS_AS(inject_ood(p, 30, 1.5, 2), ArgumentError);
}

TEST_CASE("materialized batches carry labels and OOD flags") {
  const Dataset d = gen_styleshapes(2, 3, 10, 16);
  const Dataset o = gen_alien_shapes(2, 10, 16);
  const auto p = inject_ood(plan_benign(d, {CorruptionKind::ImpulseNoise, 2, 0}, 30, 8, 3), 10, 0.5, 4);
  std::size_t total = 0;
  for (std::size_t b = 0; b < p.num_batches(); ++b) {
    const Batch batch = materialize_batch(p, b, d, &o);
    CHECK(batch.images.dim(0) == batch.labels.size());
    for (std::size_t i = 0; i < batch.labels.size(); ++i) CHECK((batch.labels[i] == -1) == batch.is_ood[i]);
    total += batch.labels.size();
  }
  CHECK(total == 30);
  CHECK_THROWS_AS(materialize_batch(p, 0, d, nullptr), ArgumentError);
}
