#include "sicl/streams.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "sicl/errors.hpp"

namespace sicl::streams {

Array Dataset::image(std::size_t i) const {
  if (i >= size()) throw ArgumentError("dataset index " + std::to_string(i) + " out of range");
  const auto s = images.slab(i);
  return Array({images.dim(1), images.dim(2), images.dim(3)}, std::vector<double>(s.begin(), s.end()));
}

void Dataset::validate() const {
  if (images.rank() != 4 || images.dim(0) != labels.size()) throw ArgumentError("dataset images/labels mismatch");
  for (int y : labels) {
    if (split == Split::Ood ? y != -1 : (y < 0 || static_cast<std::size_t>(y) >= num_classes)) {
      throw ArgumentError("dataset label out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// StyleShapes

namespace {

bool in_box(double u, double v, double half) { return std::abs(u) <= half && std::abs(v) <= half; }

double frac(double x) { return x - std::floor(x); }

// Canonical coordinates in [-1, 1]^2, v pointing down.
bool class_mask(std::size_t cls, double u, double v) {
  const double r = std::hypot(u, v);
  switch (cls) {
    case 0:  // circle
      return r <= 0.62;
    case 1:  // square
      return in_box(u, v, 0.38);
    case 2:  // triangle, apex up
      return v <= 0.5 && v >= -0.6 && std::abs(u) <= 0.6 * (v + 0.6) / 1.1;
    case 3:  // latin cross
      return (std::abs(u) <= 0.12 && std::abs(v) <= 0.65) || (std::abs(v + 0.2) <= 0.12 && std::abs(u) <= 0.45);
    case 4:  // ring
      return r >= 0.35 && r <= 0.62;
    case 5:  // plus
      return (std::abs(u) <= 0.15 && std::abs(v) <= 0.6) || (std::abs(v) <= 0.15 && std::abs(u) <= 0.6);
    case 6:  // diagonal stripes
      return in_box(u, v, 0.6) && frac((u + v) / 0.4) < 0.5;
    case 7:  // horizontal stripes
      return in_box(u, v, 0.6) && frac(v / 0.3) < 0.5;
    case 8:  // checker
      return in_box(u, v, 0.6) &&
             ((static_cast<long>(std::floor(u / 0.3)) + static_cast<long>(std::floor(v / 0.3))) % 2 == 0);
    case 9:  // X
      return in_box(u, v, 0.6) && (std::abs(u - v) <= 0.2 || std::abs(u + v) <= 0.2);
    default:
      return false;
  }
}

bool alien_mask(std::size_t cls, double u, double v) {
  const double r = std::hypot(u, v);
  switch (cls) {
    case 0:  // crescent
      return r <= 0.6 && std::hypot(u - 0.3, v) > 0.5;
    case 1:  // T
      return (std::abs(v + 0.45) <= 0.13 && std::abs(u) <= 0.6) || (std::abs(u) <= 0.13 && v >= -0.45 && v <= 0.6);
    case 2:  // L
      return (std::abs(u + 0.4) <= 0.13 && std::abs(v) <= 0.6) || (std::abs(v - 0.47) <= 0.13 && u >= -0.5 && u <= 0.5);
    case 3:  // diamond outline
      return std::abs(u) + std::abs(v) >= 0.4 && std::abs(u) + std::abs(v) <= 0.62;
    case 4:  // vertical stripes
      return in_box(u, v, 0.6) && frac(u / 0.3) < 0.5;
    case 5:  // square frame
      return std::max(std::abs(u), std::abs(v)) >= 0.35 && std::max(std::abs(u), std::abs(v)) <= 0.55;
    case 6:  // half disk
      return r <= 0.6 && v >= 0.0;
    case 7: {  // 3x3 dots
      const double du = u - 0.4 * std::round(u / 0.4), dv = v - 0.4 * std::round(v / 0.4);
      return in_box(u, v, 0.55) && std::hypot(du, dv) <= 0.12;
    }
    case 8:  // flat ellipse
      return (u / 0.7) * (u / 0.7) + (v / 0.28) * (v / 0.28) <= 1.0;
    case 9: {  // five-point star
      const double theta = std::atan2(v, u);
      return r <= 0.38 + 0.24 * std::cos(5.0 * theta);
    }
    default:
      return false;
  }
}

std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  const double hh = frac(h) * 6.0;
  const int sector = static_cast<int>(hh);
  const double f = hh - sector;
  const double p = v * (1.0 - s), q = v * (1.0 - s * f), t = v * (1.0 - s * (1.0 - f));
  switch (sector % 6) {
    case 0:
      return {v, t, p};
    case 1:
      return {q, v, p};
    case 2:
      return {p, v, t};
    case 3:
      return {p, q, v};
    case 4:
      return {t, p, v};
    default:
      return {v, p, q};
  }
}

double luminance(const std::array<double, 3>& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

struct Pose {
  double scale = 1.0, angle = 0.0, du = 0.0, dv = 0.0;
};

template <typename MaskFn>
double coverage(MaskFn mask, std::size_t size, std::size_t x, std::size_t y, const Pose& pose) {
  // 2x2 supersampling
  int hits = 0;
  const double ca = std::cos(pose.angle), sa = std::sin(pose.angle);
  for (int sy = 0; sy < 2; ++sy) {
    for (int sx = 0; sx < 2; ++sx) {
      const double px = (static_cast<double>(x) + 0.25 + 0.5 * sx) / static_cast<double>(size) * 2.0 - 1.0;
      const double py = (static_cast<double>(y) + 0.25 + 0.5 * sy) / static_cast<double>(size) * 2.0 - 1.0;
      const double tx = (px - pose.du) / pose.scale, ty = (py - pose.dv) / pose.scale;
      hits += mask(ca * tx + sa * ty, -sa * tx + ca * ty);
    }
  }
  return hits / 4.0;
}

template <typename MaskFn>
void render(MaskFn mask, std::size_t size, Rng& rng, std::span<double> out) {
  const Pose pose{0.8 + 0.3 * rng.uniform(), (rng.uniform() - 0.5) * 0.6, (rng.uniform() - 0.5) * 0.3,
                  (rng.uniform() - 0.5) * 0.3};
  std::array<double, 3> fg, bg;
  do {
    fg = hsv_to_rgb(rng.uniform(), 0.4 + 0.6 * rng.uniform(), 0.35 + 0.65 * rng.uniform());
    bg = hsv_to_rgb(rng.uniform(), 0.6 * rng.uniform(), 0.1 + 0.9 * rng.uniform());
  } while (std::abs(luminance(fg) - luminance(bg)) < 0.2);
  const std::size_t plane = size * size;
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double a = coverage(mask, size, x, y, pose);
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = a * fg[c] + (1.0 - a) * bg[c] + 0.02 * rng.gaussian();
        out[c * plane + y * size + x] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
}

}  // namespace

const std::array<std::string, kNumShapes>& shape_names() {
  static const std::array<std::string, kNumShapes> names{
      "circle", "square", "triangle", "cross", "ring", "plus", "diagonal_stripes", "horizontal_stripes",
      "checker", "x"};
  return names;
}

Array canonical_mask(std::size_t cls, std::size_t size, bool alien) {
  if (cls >= (alien ? kNumAlienShapes : kNumShapes)) throw ArgumentError("shape index out of range");
  Array m({size, size});
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(size) * 2.0 - 1.0;
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(size) * 2.0 - 1.0;
      m.at(y, x) = (alien ? alien_mask(cls, u, v) : class_mask(cls, u, v)) ? 1.0 : 0.0;
    }
  }
  return m;
}

Dataset gen_styleshapes(std::uint64_t seed, std::size_t n_per_class, std::size_t k, std::size_t size) {
  if (n_per_class < 1) throw ArgumentError("n_per_class must be at least 1");
  if (k < 2 || k > kNumShapes) throw ArgumentError("StyleShapes supports 2..10 classes");
  if (size < 8) throw ArgumentError("StyleShapes image size must be at least 8");
  Dataset ds;
  ds.num_classes = k;
  ds.images = Array({n_per_class * k, 3, size, size});
  ds.labels.resize(n_per_class * k);
  Rng root(seed);
  Rng order_rng = root.derive("order");
  std::vector<std::size_t> order(ds.labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  for (std::size_t slot = 0; slot < order.size(); ++slot) {
    const std::size_t item = order[slot];
    const std::size_t cls = item % k;
    Rng rng = root.derive("sample", item);
    render([cls](double u, double v) { return class_mask(cls, u, v); }, size, rng, ds.images.slab(slot));
    ds.labels[slot] = static_cast<int>(cls);
  }
  return ds;
}

Dataset gen_alien_shapes(std::uint64_t seed, std::size_t n, std::size_t size) {
  if (size < 8) throw ArgumentError("image size must be at least 8");
  Dataset ds;
  ds.num_classes = 0;
  ds.split = Split::Ood;
  ds.images = Array({n, 3, size, size});
  ds.labels.assign(n, -1);
  Rng root(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % kNumAlienShapes;
    Rng rng = root.derive("alien", i);
    render([cls](double u, double v) { return alien_mask(cls, u, v); }, size, rng, ds.images.slab(i));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// CIFAR-10 binary

Dataset load_cifar10_file(const std::filesystem::path& file, Split split) {
  constexpr std::size_t kRecord = 3073;
  std::ifstream is(file, std::ios::binary);
  if (!is) throw FormatError("cannot open " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() % kRecord != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % kRecord;
    throw FormatError(file.string() + ": truncated record at byte offset " + std::to_string(offset) + " (file length " +
                      std::to_string(bytes.size()) + " is not a multiple of 3073)");
  }
  const std::size_t n = bytes.size() / kRecord;
  Dataset ds;
  ds.num_classes = 10;
  ds.split = split;
  ds.images = Array({n, 3, 32, 32});
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kRecord;
    if (rec[0] > 9) {
      throw FormatError(file.string() + ": label byte " + std::to_string(rec[0]) + " at offset " +
                        std::to_string(i * kRecord) + " is out of range");
    }
    ds.labels[i] = rec[0];
    auto img = ds.images.slab(i);
    for (std::size_t p = 0; p < 3072; ++p) img[p] = rec[1 + p] / 255.0;
  }
  return ds;
}

Dataset load_cifar10_binary(const std::filesystem::path& dir, Split split) {
  std::vector<std::filesystem::path> files;
  if (split == Split::Test) {
    files.push_back(dir / "test_batch.bin");
  } else {
    for (int i = 1; i <= 5; ++i) {
      const auto p = dir / ("data_batch_" + std::to_string(i) + ".bin");
      if (std::filesystem::exists(p)) files.push_back(p);
    }
  }
  if (files.empty() || !std::filesystem::exists(files.front())) {
    throw FormatError("no CIFAR-10 binary batches found in " + dir.string());
  }
  std::vector<double> data;
  Dataset out;
  out.num_classes = 10;
  out.split = split;
  for (const auto& f : files) {
    Dataset part = load_cifar10_file(f, split);
    data.insert(data.end(), part.images.values().begin(), part.images.values().end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  out.images = Array({out.labels.size(), 3, 32, 32}, std::move(data));
  return out;
}

// ---------------------------------------------------------------------------
// dataset cache

namespace {

constexpr char kDataMagic[8] = {'S', 'I', 'C', 'L', 'D', '0', '0', '1'};

template <typename T>
void put(std::ostream& os, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  os.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bits;
  if (!is.read(reinterpret_cast<char*>(bits.data()), sizeof(T))) throw FormatError(path.string() + ": truncated dataset");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kDataMagic, sizeof(kDataMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.num_classes));
  for (std::size_t axis = 1; axis < 4; ++axis) put<std::uint32_t>(os, static_cast<std::uint32_t>(dataset.images.dim(axis)));
  for (double v : dataset.images.data()) put<double>(os, v);
  for (int y : dataset.labels) put<std::uint8_t>(os, y < 0 ? std::uint8_t{255} : static_cast<std::uint8_t>(y));
  if (!os) throw FormatError("failed writing " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path, Split split) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open dataset cache " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kDataMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + ": bad magic, not a SICLD001 dataset cache");
  }
  const auto n = get<std::uint32_t>(is, path);
  const auto k = get<std::uint32_t>(is, path);
  const auto ch = get<std::uint32_t>(is, path);
  const auto h = get<std::uint32_t>(is, path);
  const auto w = get<std::uint32_t>(is, path);
  const auto expected = static_cast<std::uintmax_t>(n) * ch * h * w * 8 + n + 28;
  if (std::filesystem::file_size(path) != expected) {
    throw FormatError(path.string() + ": size " + std::to_string(std::filesystem::file_size(path)) +
                      " does not match header (expected " + std::to_string(expected) + ")");
  }
  Dataset ds;
  ds.num_classes = k;
  ds.split = split;
  ds.images = Array({n, ch, h, w});
  for (double& v : ds.images.data()) v = get<double>(is, path);
  ds.labels.resize(n);
  bool any_ood = false;
  for (auto& y : ds.labels) {
    const auto b = get<std::uint8_t>(is, path);
    y = b == 255 ? -1 : b;
    any_ood |= b == 255;
  }
  if (any_ood) ds.split = Split::Ood;
  ds.validate();
  return ds;
}

std::uint64_t dataset_checksum(const Dataset& dataset) {
  std::uint64_t h = 0x84222325cbf29ce4ULL;
  for (double v : dataset.images.data()) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  for (int y : dataset.labels) h = mix64(h ^ static_cast<std::uint64_t>(static_cast<std::int64_t>(y)));
  return h;
}

// ---------------------------------------------------------------------------
// corruptions

const std::array<CorruptionKind, kNumCorruptions>& all_corruptions() {
  static const std::array<CorruptionKind, kNumCorruptions> kinds{
      CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise,  CorruptionKind::ImpulseNoise,
      CorruptionKind::Contrast,      CorruptionKind::Brightness, CorruptionKind::Pixelate};
  return kinds;
}

std::string corruption_name(CorruptionKind kind) {
  switch (kind) {
    case CorruptionKind::GaussianNoise:
      return "gaussian_noise";
    case CorruptionKind::ShotNoise:
      return "shot_noise";
    case CorruptionKind::ImpulseNoise:
      return "impulse_noise";
    case CorruptionKind::Contrast:
      return "contrast";
    case CorruptionKind::Brightness:
      return "brightness";
    case CorruptionKind::Pixelate:
      return "pixelate";
  }
  return "unknown";
}

CorruptionKind parse_corruption(const std::string& name) {
  for (CorruptionKind k : all_corruptions()) {
    if (corruption_name(k) == name) return k;
  }
  throw ArgumentError("unknown corruption '" + name + "'");
}

void CorruptionSpec::validate() const {
  if (severity < 1 || severity > 5) throw ArgumentError("corruption severity must lie in 1..5");
}

double severity_parameter(CorruptionKind kind, int severity) {
  static const std::array<double, 5> gaussian{0.04, 0.06, 0.08, 0.09, 0.10};
  static const std::array<double, 5> shot{500, 250, 100, 75, 50};
  static const std::array<double, 5> impulse{0.01, 0.02, 0.03, 0.05, 0.07};
  static const std::array<double, 5> contrast{0.75, 0.5, 0.4, 0.3, 0.15};
  static const std::array<double, 5> brightness{0.05, 0.1, 0.15, 0.2, 0.3};
  static const std::array<double, 5> pixelate{2, 2, 3, 3, 4};
  CorruptionSpec{kind, severity, 0}.validate();
  const auto i = static_cast<std::size_t>(severity - 1);
  switch (kind) {
    case CorruptionKind::GaussianNoise:
      return gaussian[i];
    case CorruptionKind::ShotNoise:
      return shot[i];
    case CorruptionKind::ImpulseNoise:
      return impulse[i];
    case CorruptionKind::Contrast:
      return contrast[i];
    case CorruptionKind::Brightness:
      return brightness[i];
    case CorruptionKind::Pixelate:
      return pixelate[i];
  }
  return 0.0;
}

Array corrupt(const Array& img, const CorruptionSpec& spec) {
  spec.validate();
  if (img.rank() != 3) throw ArgumentError("corrupt expects a [Ch x H x W] image");
  const double param = severity_parameter(spec.kind, spec.severity);
  const std::size_t ch = img.dim(0), h = img.dim(1), w = img.dim(2), plane = h * w;
  Rng rng(spec.seed, static_cast<std::uint64_t>(spec.kind) * 8 + static_cast<std::uint64_t>(spec.severity));
  Array out = img;
  switch (spec.kind) {
    case CorruptionKind::GaussianNoise:
      for (double& v : out.data()) v += param * rng.gaussian();
      break;
    case CorruptionKind::ShotNoise:
      for (double& v : out.data()) v = static_cast<double>(rng.poisson(std::max(v, 0.0) * param)) / param;
      break;
    case CorruptionKind::ImpulseNoise:
      for (double& v : out.data()) {
        if (rng.uniform() < param) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
      }
      break;
    case CorruptionKind::Contrast:
      for (std::size_t c = 0; c < ch; ++c) {
        auto p = out.data().subspan(c * plane, plane);
        double m = 0.0;
        for (double v : p) m += v;
        m /= static_cast<double>(plane);
        for (double& v : p) v = (v - m) * param + m;
      }
      break;
    case CorruptionKind::Brightness:
      // HSV value shift: scaling RGB by v'/v keeps hue and saturation
      for (std::size_t i = 0; i < plane; ++i) {
        double v = 0.0;
        for (std::size_t c = 0; c < ch; ++c) v = std::max(v, img[c * plane + i]);
        const double shifted = std::min(1.0, v + param);
        for (std::size_t c = 0; c < ch; ++c) {
          out[c * plane + i] = v > 0.0 ? img[c * plane + i] * shifted / v : shifted;
        }
      }
      break;
    case CorruptionKind::Pixelate: {
      const auto block = static_cast<std::size_t>(param);
      for (std::size_t c = 0; c < ch; ++c) {
        for (std::size_t by = 0; by < h; by += block) {
          for (std::size_t bx = 0; bx < w; bx += block) {
            const std::size_t ey = std::min(h, by + block), ex = std::min(w, bx + block);
            double m = 0.0;
            for (std::size_t y = by; y < ey; ++y)
              for (std::size_t x = bx; x < ex; ++x) m += img[c * plane + y * w + x];
            m /= static_cast<double>((ey - by) * (ex - bx));
            for (std::size_t y = by; y < ey; ++y)
              for (std::size_t x = bx; x < ex; ++x) out[c * plane + y * w + x] = m;
          }
        }
      }
      break;
    }
  }
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// schedulers

namespace {

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  return idx;
}

void assign_entry_seeds(StreamPlan& plan, std::uint64_t seed) {
  for (std::size_t i = 0; i < plan.entries.size(); ++i) plan.entries[i].spec.seed = mix64(seed ^ mix64(i + 0x51ED));
}

std::vector<std::size_t> largest_remainder(std::size_t total, const Array& proportions) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t t = 0; t < k; ++t) {
    const double quota = static_cast<double>(total) * proportions[t];
    counts[t] = static_cast<std::size_t>(std::floor(quota));
    assigned += counts[t];
    remainders[t] = {quota - std::floor(quota), t};
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total; ++r, ++assigned) counts[remainders[r % k].second] += 1;
  return counts;
}

}  // namespace

StreamPlan plan_benign(const Dataset& dataset, const CorruptionSpec& spec, std::size_t n, std::size_t batch_size,
                       std::uint64_t seed) {
  spec.validate();
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  if (n > dataset.size()) throw ArgumentError("benign plan requests more samples than the dataset holds");
  Rng rng = Rng(seed).derive("benign");
  const auto idx = shuffled_indices(dataset.size(), rng);
  StreamPlan plan;
  plan.batch_size = batch_size;
  for (std::size_t i = 0; i < n; ++i) plan.entries.push_back({idx[i], spec, false});
  assign_entry_seeds(plan, seed);
  return plan;
}

StreamPlan plan_dynamic(const Dataset& dataset, const std::vector<CorruptionSpec>& specs, double alpha,
                        std::size_t slots, std::size_t batch_size, std::uint64_t seed, std::size_t n_per_corruption) {
  if (specs.empty()) throw ArgumentError("dynamic plan needs at least one corruption");
  if (!(alpha > 0.0)) throw ArgumentError("dirichlet alpha must be positive");
  if (slots < 1) throw ArgumentError("dynamic plan needs at least one slot");
  if (batch_size == 0) throw ArgumentError("batch_size must be positive");
  const std::size_t n_c = n_per_corruption == 0 ? dataset.size() : n_per_corruption;
  if (n_c > dataset.size()) throw ArgumentError("dynamic plan requests more samples than the dataset holds");
  for (const auto& s : specs) s.validate();

  Rng root = Rng(seed).derive("dynamic");
  std::vector<std::vector<StreamEntry>> slot_entries(slots);
  for (std::size_t c = 0; c < specs.size(); ++c) {
    Rng pick = root.derive("pick", c);
    const auto idx = shuffled_indices(dataset.size(), pick);
    Rng mix = root.derive("mix", c);
    const auto counts = largest_remainder(n_c, sample_dirichlet(mix, alpha, slots));
    std::size_t cursor = 0;
    for (std::size_t t = 0; t < slots; ++t) {
      for (std::size_t j = 0; j < counts[t]; ++j) slot_entries[t].push_back({idx[cursor++], specs[c], false});
    }
  }
  StreamPlan plan;
  plan.batch_size = batch_size;
  for (std::size_t t = 0; t < slots; ++t) {
    Rng within = root.derive("slot", t);
    within.shuffle(slot_entries[t]);
    plan.entries.insert(plan.entries.end(), slot_entries[t].begin(), slot_entries[t].end());
  }
  assign_entry_seeds(plan, seed);
  return plan;
}

StreamPlan inject_ood(const StreamPlan& plan, std::size_t n_ood, double fraction, std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ArgumentError("OOD fraction must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(plan.size())));
  if (count > 0 && n_ood == 0) throw ArgumentError("OOD injection needs a nonempty OOD set");
  StreamPlan out = plan;
  Rng rng = Rng(seed).derive("ood");
  const auto positions = shuffled_indices(plan.size(), rng);
  for (std::size_t i = 0; i < count; ++i) {
    StreamEntry& e = out.entries[positions[i]];
    e.is_ood = true;
    e.sample_index = rng.uniform_index(n_ood);
  }
  return out;
}

double adjacency_same_rate(const StreamPlan& plan) {
  if (plan.size() < 2) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 1; i < plan.size(); ++i) same += plan.entries[i].spec.kind == plan.entries[i - 1].spec.kind;
  return static_cast<double>(same) / static_cast<double>(plan.size() - 1);
}

double uniform_adjacency_rate(const StreamPlan& plan) {
  const std::size_t n = plan.size();
  if (n < 2) return 0.0;
  std::array<std::size_t, kNumCorruptions> counts{};
  for (const auto& e : plan.entries) counts[static_cast<std::size_t>(e.spec.kind)]++;
  double pairs = 0.0;
  for (std::size_t c : counts) pairs += static_cast<double>(c) * (static_cast<double>(c) - 1.0);
  return pairs / (static_cast<double>(n) * (static_cast<double>(n) - 1.0));
}

Batch materialize_batch(const StreamPlan& plan, std::size_t batch_index, const Dataset& dataset, const Dataset* ood) {
  const std::size_t begin = batch_index * plan.batch_size;
  if (begin >= plan.size()) throw ArgumentError("batch index out of range");
  const std::size_t end = std::min(plan.size(), begin + plan.batch_size);
  std::vector<Array> images;
  Batch batch;
  for (std::size_t i = begin; i < end; ++i) {
    const StreamEntry& e = plan.entries[i];
    if (e.is_ood && ood == nullptr) throw ArgumentError("plan contains OOD entries but no OOD set was given");
    const Dataset& src = e.is_ood ? *ood : dataset;
    images.push_back(corrupt(src.image(e.sample_index), e.spec));
    batch.labels.push_back(e.is_ood ? -1 : src.labels[e.sample_index]);
    batch.is_ood.push_back(e.is_ood);
    batch.specs.push_back(e.spec);
  }
  batch.images = stack(images);
  return batch;
}

}  // namespace sicl::streams
