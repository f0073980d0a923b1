#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sicl/rng.hpp"
#include "sicl/tensor.hpp"

namespace sicl::streams {

enum class Split { Train, Val, Test, Ood };

struct Dataset {
  Array images;             // [N x Ch x H x W], values in [0, 1]
  std::vector<int> labels;  // [N], in [0, num_classes)
  std::size_t num_classes = 0;
  Split split = Split::Train;

  std::size_t size() const { return labels.size(); }
  std::size_t channels() const { return images.dim(1); }
  std::size_t image_size() const { return images.dim(2); }
  Array image(std::size_t i) const;
  void validate() const;
};

inline constexpr std::size_t kNumShapes = 10;
inline constexpr std::size_t kNumAlienShapes = 10;

// Class names of the StyleShapes masks, in label order.
const std::array<std::string, kNumShapes>& shape_names();

// Binary mask [size x size] of class `cls` at canonical pose (no jitter).
Array canonical_mask(std::size_t cls, std::size_t size, bool alien = false);

// Procedural dataset: class = shape mask, style = random foreground and
// background colour, brightness, and a small pose jitter. Deterministic in seed.
Dataset gen_styleshapes(std::uint64_t seed, std::size_t n_per_class, std::size_t k = 10, std::size_t size = 32);

// Out-of-distribution images rendered from masks never used as classes.
// Labels are -1.
Dataset gen_alien_shapes(std::uint64_t seed, std::size_t n, std::size_t size = 32);

// CIFAR-10 binary batches: 1 label byte + 3072 channel-major pixel bytes per
// record. Train reads data_batch_*.bin, Test reads test_batch.bin.
Dataset load_cifar10_file(const std::filesystem::path& file, Split split = Split::Test);
Dataset load_cifar10_binary(const std::filesystem::path& dir, Split split = Split::Test);

// Dataset cache: "SICLD001", u32 N, K, Ch, H, W, f64 images, u8 labels
// (255 marks an unlabeled OOD image).
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path, Split split = Split::Test);
std::uint64_t dataset_checksum(const Dataset& dataset);

enum class CorruptionKind { GaussianNoise, ShotNoise, ImpulseNoise, Contrast, Brightness, Pixelate };

inline constexpr std::size_t kNumCorruptions = 6;
const std::array<CorruptionKind, kNumCorruptions>& all_corruptions();
std::string corruption_name(CorruptionKind kind);
CorruptionKind parse_corruption(const std::string& name);

struct CorruptionSpec {
  CorruptionKind kind = CorruptionKind::GaussianNoise;
  int severity = 3;  // 1..5
  std::uint64_t seed = 0;

  void validate() const;
};

// Severity ladder value for a kind (noise std, photon count, impulse rate,
// contrast factor, brightness shift, or pixelate block size).
double severity_parameter(CorruptionKind kind, int severity);

// Deterministic in (img, spec); output clamped to [0, 1]. img is [Ch x H x W].
Array corrupt(const Array& img, const CorruptionSpec& spec);

struct StreamEntry {
  std::size_t sample_index = 0;  // into the test set, or the OOD set when is_ood
  CorruptionSpec spec;
  bool is_ood = false;
};

struct StreamPlan {
  std::vector<StreamEntry> entries;
  std::size_t batch_size = 64;

  std::size_t size() const { return entries.size(); }
  std::size_t num_batches() const { return (entries.size() + batch_size - 1) / batch_size; }
};

// i.i.d. stream of n distinct test samples under a single corruption.
StreamPlan plan_benign(const Dataset& dataset, const CorruptionSpec& spec, std::size_t n, std::size_t batch_size,
                       std::uint64_t seed);

// Temporally correlated multi-corruption stream. Each corruption's samples
// are spread over `slots` consecutive time slots with proportions drawn from
// Dirichlet(alpha * 1_slots), rounded by largest remainder; slots are
// concatenated in order and shuffled internally. n_per_corruption = 0 uses
// the whole dataset for every corruption.
StreamPlan plan_dynamic(const Dataset& dataset, const std::vector<CorruptionSpec>& specs, double alpha,
                        std::size_t slots, std::size_t batch_size, std::uint64_t seed,
                        std::size_t n_per_corruption = 0);

// Replaces round(fraction * len) uniformly chosen positions with OOD samples
// drawn from an OOD set of n_ood images. Corruption specs are kept.
StreamPlan inject_ood(const StreamPlan& plan, std::size_t n_ood, double fraction, std::uint64_t seed);

// Fraction of adjacent entry pairs sharing a corruption kind.
double adjacency_same_rate(const StreamPlan& plan);
// Expected adjacency rate of a uniform shuffle of the same entries.
double uniform_adjacency_rate(const StreamPlan& plan);

struct Batch {
  Array images;             // [B x Ch x H x W]
  std::vector<int> labels;  // -1 for OOD entries
  std::vector<bool> is_ood;
  std::vector<CorruptionSpec> specs;
};

Batch materialize_batch(const StreamPlan& plan, std::size_t batch_index, const Dataset& dataset,
                        const Dataset* ood = nullptr);

}  // namespace sicl::streams
