#include "sicl/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sicl/errors.hpp"

namespace sicl::nn {

namespace {

constexpr std::size_t kKernel = 3;
constexpr std::array<std::size_t, kNumBlocks> kStrides{1, 2, 2};

std::size_t spatial(const Array& a) { return a.dim(2) * a.dim(3); }

BnStats batch_statistics(const Array& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), hw = spatial(x);
  BnStats s{Array({c}), Array({c}), b * hw};
  const double n = static_cast<double>(b * hw);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double total = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const double* p = x.data().data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) total += p[j];
    }
    const double m = total / n;
    double sq = 0.0;
    for (std::size_t i = 0; i < b; ++i) {
      const double* p = x.data().data() + (i * c + ch) * hw;
      for (std::size_t j = 0; j < hw; ++j) sq += (p[j] - m) * (p[j] - m);
    }
    s.mean[ch] = m;
    s.var[ch] = sq / n;
  }
  return s;
}

void check_stats(const BnStats& s, std::size_t channels, std::size_t block) {
  if (s.mean.size() != channels || s.var.size() != channels) {
    throw ArgumentError("frozen BN statistics missing or mis-sized for block " + std::to_string(block + 1));
  }
}

// One conv+BN+ReLU block. `used` receives the statistics BN normalized with.
Array run_block(const ModelState& model, std::size_t i, const Array& x, BnMode mode, const BnCache* frozen,
                BnStats& used, BlockTrace* trace) {
  const ModelConfig& cfg = model.config;
  Conv2dGeometry g = cfg.geometry(i);
  const std::size_t b = x.dim(0);
  const ConvBlock& blk = model.blocks[i];
  Array pre({b, g.out_channels, g.out_height(), g.out_width()});
  conv2d_forward(g, b, x.data(), blk.weight.data(), blk.bias.data(), pre.data());

  switch (mode) {
    case BnMode::BatchStats:
      used = batch_statistics(pre);
      break;
    case BnMode::SourceRunning:
      used = BnStats{blk.bn.running_mean, blk.bn.running_var, 0};
      break;
    case BnMode::FrozenBatch:
      if (frozen == nullptr) throw ArgumentError("FrozenBatch mode requires frozen BN statistics");
      check_stats((*frozen)[i], g.out_channels, i);
      used = (*frozen)[i];
      break;
  }

  const std::size_t c = g.out_channels, hw = spatial(pre);
  std::vector<double> inv_std(c);
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1.0 / std::sqrt(used.var[ch] + cfg.bn_eps);

  Array normalized(pre.shape());
  Array out(pre.shape());
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (n * c + ch) * hw;
      const double m = used.mean[ch], is = inv_std[ch];
      const double gamma = blk.bn.gamma[ch], beta = blk.bn.beta[ch];
      for (std::size_t j = 0; j < hw; ++j) {
        const double xh = (pre[off + j] - m) * is;
        normalized[off + j] = xh;
        const double y = gamma * xh + beta;
        out[off + j] = y > 0.0 || std::isnan(y) ? y : 0.0;
      }
    }
  }
  if (trace != nullptr) {
    trace->input = x;
    trace->pre_bn = std::move(pre);
    trace->normalized = std::move(normalized);
    trace->output = out;
    trace->inv_std = std::move(inv_std);
  }
  return out;
}

Array global_average_pool(const Array& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), hw = spatial(x);
  Array out({b, c});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* p = x.data().data() + (n * c + ch) * hw;
      double s = 0.0;
      for (std::size_t j = 0; j < hw; ++j) s += p[j];
      out.at(n, ch) = s / static_cast<double>(hw);
    }
  }
  return out;
}

Array dropout_mask(const Shape& shape, const DropoutSpec& spec) {
  Array mask(shape);
  const double keep_scale = 1.0 / (1.0 - spec.rate);
  for (double& v : mask.data()) v = spec.rng->uniform() >= spec.rate ? keep_scale : 0.0;
  return mask;
}

void validate_dropout(const std::optional<DropoutSpec>& dropout) {
  if (!dropout) return;
  if (!(dropout->rate >= 0.0 && dropout->rate < 1.0)) throw ArgumentError("dropout rate must lie in [0, 1)");
  if (dropout->rate > 0.0 && dropout->rng == nullptr) throw ArgumentError("dropout requires an Rng");
}

Array linear(const ModelState& model, const Array& x) {
  const std::size_t b = x.dim(0), d = x.dim(1), k = model.config.num_classes;
  Array logits({b, k});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t j = 0; j < k; ++j) {
      const double* w = model.fc_weight.data().data() + j * d;
      const double* e = x.data().data() + n * d;
      double s = model.fc_bias[j];
      for (std::size_t t = 0; t < d; ++t) s += w[t] * e[t];
      logits.at(n, j) = s;
    }
  }
  return logits;
}

Array apply_head(const ModelState& model, const Array& embedding, const std::optional<DropoutSpec>& dropout,
                 Trace* trace) {
  validate_dropout(dropout);
  if (!dropout || dropout->rate == 0.0) {
    if (trace != nullptr) trace->dropped = embedding;
    return linear(model, embedding);
  }
  Array mask = dropout_mask(embedding.shape(), *dropout);
  Array dropped = multiply(embedding, mask);
  Array logits = linear(model, dropped);
  if (trace != nullptr) {
    trace->dropped = std::move(dropped);
    trace->dropout_mask = std::move(mask);
  }
  return logits;
}

}  // namespace

void ModelConfig::validate() const {
  if (in_channels == 0 || num_classes < 2) throw ArgumentError("model needs input channels and at least 2 classes");
  if (image_size < 4) throw ArgumentError("image_size must be at least 4");
  for (std::size_t w : widths) {
    if (w == 0) throw ArgumentError("block widths must be positive");
  }
  if (tap_block < 1 || tap_block > kNumBlocks) throw ArgumentError("tap_block must address block 1..3");
  if (!(bn_eps > 0.0)) throw ArgumentError("bn_eps must be positive");
}

Conv2dGeometry ModelConfig::geometry(std::size_t block) const {
  std::size_t size = image_size;
  Conv2dGeometry g;
  for (std::size_t i = 0; i <= block; ++i) {
    g = Conv2dGeometry{i == 0 ? in_channels : widths[i - 1], widths[i], size, size, kKernel, kStrides[i], 1};
    size = g.out_height();
  }
  return g;
}

ModelState ModelState::zeros(const ModelConfig& config) {
  config.validate();
  ModelState m;
  m.config = config;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const Conv2dGeometry g = config.geometry(i);
    const std::size_t c = g.out_channels;
    m.blocks[i].weight = Array({c, g.in_channels, kKernel, kKernel});
    m.blocks[i].bias = Array({c});
    m.blocks[i].bn = BatchNorm{Array({c}), Array({c}), Array({c}), Array({c}, 1.0)};
  }
  m.fc_weight = Array({config.num_classes, config.embedding_dim()});
  m.fc_bias = Array({config.num_classes});
  return m;
}

ModelState ModelState::initialize(const ModelConfig& config, Rng& rng) {
  ModelState m = zeros(config);
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const Conv2dGeometry g = config.geometry(i);
    const double fan_in = static_cast<double>(g.in_channels * kKernel * kKernel);
    m.blocks[i].weight = sample_gaussian(rng, m.blocks[i].weight.shape(), 0.0, std::sqrt(2.0 / fan_in));
    m.blocks[i].bn.gamma = Array({g.out_channels}, 1.0);
  }
  m.fc_weight = sample_gaussian(rng, m.fc_weight.shape(), 0.0,
                                std::sqrt(1.0 / static_cast<double>(config.embedding_dim())));
  return m;
}

std::vector<std::pair<std::string, const Array*>> ModelState::named_arrays() const {
  std::vector<std::pair<std::string, const Array*>> out;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    const std::string p = "block" + std::to_string(i + 1) + ".";
    const ConvBlock& b = blocks[i];
    out.emplace_back(p + "conv.weight", &b.weight);
    out.emplace_back(p + "conv.bias", &b.bias);
    out.emplace_back(p + "bn.gamma", &b.bn.gamma);
    out.emplace_back(p + "bn.beta", &b.bn.beta);
    out.emplace_back(p + "bn.running_mean", &b.bn.running_mean);
    out.emplace_back(p + "bn.running_var", &b.bn.running_var);
  }
  out.emplace_back("fc.weight", &fc_weight);
  out.emplace_back("fc.bias", &fc_bias);
  return out;
}

std::vector<std::pair<std::string, Array*>> ModelState::named_arrays() {
  std::vector<std::pair<std::string, Array*>> out;
  for (auto& [name, ptr] : std::as_const(*this).named_arrays()) out.emplace_back(name, const_cast<Array*>(ptr));
  return out;
}

std::uint64_t parameter_digest(const ModelState& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, arr] : model.named_arrays()) {
    for (double v : arr->data()) {
      h ^= std::bit_cast<std::uint64_t>(v);
      h = mix64(h);
    }
  }
  return h;
}

ForwardResult forward(const ModelState& model, const Array& batch, const ForwardOptions& options) {
  const ModelConfig& cfg = model.config;
  if (batch.rank() != 4 || batch.dim(0) == 0 || batch.dim(1) != cfg.in_channels || batch.dim(2) != cfg.image_size ||
      batch.dim(3) != cfg.image_size) {
    throw ArgumentError("forward: input shape " + shape_string(batch.shape()) + " does not match model [B x " +
                        std::to_string(cfg.in_channels) + " x " + std::to_string(cfg.image_size) + " x " +
                        std::to_string(cfg.image_size) + "]");
  }
  validate_dropout(options.dropout);

  ForwardResult result;
  result.bn_mode = options.bn_mode;
  if (options.keep_trace) result.trace.emplace();
  Array x = batch;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    BlockTrace* bt = options.keep_trace ? &result.trace->blocks[i] : nullptr;
    x = run_block(model, i, x, options.bn_mode, options.frozen, result.bn_cache[i], bt);
    if (i + 1 == cfg.tap_block) result.tap = FeatureMap{x, cfg.tap_block};
  }
  result.embedding = global_average_pool(x);
  result.logits = apply_head(model, result.embedding, options.dropout, result.trace ? &*result.trace : nullptr);
  result.logits.require_finite("forward logits");
  return result;
}

TapForward forward_from_tap(const ModelState& model, const FeatureMap& tap, const BnCache& frozen, BnMode bn_mode) {
  const ModelConfig& cfg = model.config;
  if (tap.layer < 1 || tap.layer > kNumBlocks) throw ArgumentError("tap layer must be 1..3");
  const Conv2dGeometry g = cfg.geometry(tap.layer - 1);
  const Array& v = tap.values;
  if (v.rank() != 4 || v.dim(0) == 0 || v.dim(1) != g.out_channels || v.dim(2) != g.out_height() ||
      v.dim(3) != g.out_width()) {
    throw ArgumentError("forward_from_tap: tap shape " + shape_string(v.shape()) + " does not match block " +
                        std::to_string(tap.layer) + " output");
  }
  if (bn_mode == BnMode::FrozenBatch) {
    for (std::size_t i = tap.layer; i < kNumBlocks; ++i) check_stats(frozen[i], cfg.widths[i], i);
  }
  Array x = v;
  BnStats used;
  for (std::size_t i = tap.layer; i < kNumBlocks; ++i) x = run_block(model, i, x, bn_mode, &frozen, used, nullptr);
  TapForward out{Array(), global_average_pool(x)};
  out.logits = linear(model, out.embedding);
  out.logits.require_finite("forward_from_tap logits");
  return out;
}

Array head_forward(const ModelState& model, const Array& embedding, const std::optional<DropoutSpec>& dropout) {
  if (embedding.rank() != 2 || embedding.dim(1) != model.config.embedding_dim()) {
    throw ArgumentError("head_forward: embedding shape mismatch");
  }
  return apply_head(model, embedding, dropout, nullptr);
}

void update_running_stats(ModelState& model, const BnCache& cache, double momentum) {
  if (!(momentum > 0.0 && momentum <= 1.0)) throw ArgumentError("BN momentum must lie in (0, 1]");
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    BatchNorm& bn = model.blocks[i].bn;
    const BnStats& s = cache[i];
    check_stats(s, bn.gamma.size(), i);
    const double n = static_cast<double>(s.count);
    const double unbias = s.count > 1 ? n / (n - 1.0) : 1.0;
    for (std::size_t c = 0; c < bn.gamma.size(); ++c) {
      bn.running_mean[c] = (1.0 - momentum) * bn.running_mean[c] + momentum * s.mean[c];
      bn.running_var[c] = (1.0 - momentum) * bn.running_var[c] + momentum * s.var[c] * unbias;
    }
  }
}

double entropy_loss(const Array& logits) {
  if (logits.rank() != 2 || logits.dim(0) == 0) throw ArgumentError("entropy_loss expects [B x K] logits, B >= 1");
  const Array logp = log_softmax_rows(logits);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double lp = logp.at(i, j);
      h -= std::exp(lp) * lp;
    }
    total += h;
  }
  return total / static_cast<double>(b);
}

Array entropy_loss_grad(const Array& logits) {
  // dH/dz_j = -p_j (log p_j + H)
  const Array logp = log_softmax_rows(logits);
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  Array grad(logits.shape());
  for (std::size_t i = 0; i < b; ++i) {
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) h -= std::exp(logp.at(i, j)) * logp.at(i, j);
    for (std::size_t j = 0; j < k; ++j) {
      grad.at(i, j) = -std::exp(logp.at(i, j)) * (logp.at(i, j) + h) / static_cast<double>(b);
    }
  }
  return grad;
}

namespace {

void check_labels(const Array& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || labels.size() != logits.dim(0) || labels.empty()) {
    throw ArgumentError("cross entropy: labels do not match logits");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) throw ArgumentError("cross entropy: label out of range");
  }
}

}  // namespace

double cross_entropy_loss(const Array& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  const Array logp = log_softmax_rows(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total -= logp.at(i, static_cast<std::size_t>(labels[i]));
  return total / static_cast<double>(labels.size());
}

Array cross_entropy_grad(const Array& logits, const std::vector<int>& labels) {
  check_labels(logits, labels);
  Array grad = softmax_rows(logits);
  const double inv_b = 1.0 / static_cast<double>(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) grad.at(i, static_cast<std::size_t>(labels[i])) -= 1.0;
  for (double& v : grad.data()) v *= inv_b;
  return grad;
}

Gradients backward(const ModelState& model, const ForwardResult& fwd, const Array& grad_logits, bool affine_only) {
  if (!fwd.trace) throw ArgumentError("backward requires a forward pass run with keep_trace");
  const Trace& tr = *fwd.trace;
  const ModelConfig& cfg = model.config;
  const std::size_t b = fwd.logits.dim(0), k = cfg.num_classes, d = cfg.embedding_dim();
  if (grad_logits.shape() != fwd.logits.shape()) throw ArgumentError("backward: grad_logits shape mismatch");

  Gradients grads;
  if (!affine_only) {
    grads.fc_weight = Array({k, d});
    grads.fc_bias = Array({k});
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t j = 0; j < k; ++j) {
        const double gv = grad_logits.at(n, j);
        grads.fc_bias[j] += gv;
        for (std::size_t t = 0; t < d; ++t) grads.fc_weight.at(j, t) += gv * tr.dropped.at(n, t);
      }
    }
  }
  Array d_emb({b, d});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t j = 0; j < k; ++j) {
      const double gv = grad_logits.at(n, j);
      for (std::size_t t = 0; t < d; ++t) d_emb.at(n, t) += gv * model.fc_weight.at(j, t);
    }
  }
  if (!tr.dropout_mask.empty()) d_emb = multiply(d_emb, tr.dropout_mask);

  // global average pool
  const Array& last = tr.blocks[kNumBlocks - 1].output;
  const std::size_t hw_last = spatial(last);
  Array d_out(last.shape());
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t c = 0; c < d; ++c) {
      const double gv = d_emb.at(n, c) / static_cast<double>(hw_last);
      double* p = d_out.data().data() + (n * d + c) * hw_last;
      for (std::size_t j = 0; j < hw_last; ++j) p[j] = gv;
    }
  }

  const bool batch_bn = fwd.bn_mode == BnMode::BatchStats;
  for (std::size_t i = kNumBlocks; i-- > 0;) {
    const BlockTrace& bt = tr.blocks[i];
    const ConvBlock& blk = model.blocks[i];
    const std::size_t c = blk.bn.gamma.size(), hw = spatial(bt.pre_bn);
    BlockGradients& bg = grads.blocks[i];
    bg.gamma = Array({c});
    bg.beta = Array({c});
    Array d_pre(bt.pre_bn.shape());
    const double count = static_cast<double>(b * hw);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double gamma = blk.bn.gamma[ch];
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t n = 0; n < b; ++n) {
        const std::size_t off = (n * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double dy = bt.output[off + j] > 0.0 ? d_out[off + j] : 0.0;
          d_out[off + j] = dy;
          sum_dy += dy;
          sum_dy_xh += dy * bt.normalized[off + j];
        }
      }
      bg.gamma[ch] = sum_dy_xh;
      bg.beta[ch] = sum_dy;
      const double is = bt.inv_std[ch];
      // with dxhat = gamma * dy the batch-statistics term reduces to these sums
      const double mean_dxh = gamma * sum_dy / count;
      const double mean_dxh_xh = gamma * sum_dy_xh / count;
      for (std::size_t n = 0; n < b; ++n) {
        const std::size_t off = (n * c + ch) * hw;
        for (std::size_t j = 0; j < hw; ++j) {
          const double dxh = gamma * d_out[off + j];
          d_pre[off + j] = batch_bn ? is * (dxh - mean_dxh - bt.normalized[off + j] * mean_dxh_xh) : is * dxh;
        }
      }
    }
    const Conv2dGeometry g = cfg.geometry(i);
    if (!affine_only) {
      bg.weight = Array(blk.weight.shape());
      bg.bias = Array(blk.bias.shape());
    }
    Array d_in = i > 0 ? Array(bt.input.shape()) : Array();
    if (i > 0 || !affine_only) {
      conv2d_backward(g, b, bt.input.data(), blk.weight.data(), d_pre.data(), d_in.data(), bg.weight.data(),
                      bg.bias.data());
    }
    d_out = std::move(d_in);
  }
  return grads;
}

AffineGradients grad_bn_affine(const ModelState& model, const Array& batch, BnMode bn_mode) {
  ForwardOptions opts;
  opts.bn_mode = bn_mode;
  opts.keep_trace = true;
  const ForwardResult fwd = forward(model, batch, opts);
  const Gradients g = backward(model, fwd, entropy_loss_grad(fwd.logits), true);
  AffineGradients out;
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    out.gamma[i] = g.blocks[i].gamma;
    out.beta[i] = g.blocks[i].beta;
    if (!out.gamma[i].all_finite() || !out.beta[i].all_finite()) {
      throw NumericError("non-finite BN affine gradient in block " + std::to_string(i + 1));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr char kWeightMagic[8] = {'S', 'I', 'C', 'L', 'W', '0', '0', '1'};

template <typename T>
void write_le(std::ostream& os, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  os.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is, const std::filesystem::path& path) {
  std::array<unsigned char, sizeof(T)> bits;
  if (!is.read(reinterpret_cast<char*>(bits.data()), sizeof(T))) {
    throw FormatError(path.string() + ": truncated weight file");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

}  // namespace

void save_weights(const ModelState& model, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os.write(kWeightMagic, sizeof(kWeightMagic));
  const auto arrays = model.named_arrays();
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, arr] : arrays) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(arr->rank()));
    for (std::size_t dim : arr->shape()) write_le<std::uint64_t>(os, dim);
    for (double v : arr->data()) write_le<double>(os, v);
  }
  if (!os) throw FormatError("failed writing " + path.string());
}

ModelState load_weights(const std::filesystem::path& path, const ModelConfig& config) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open weight file " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kWeightMagic, sizeof(magic)) != 0) {
    throw FormatError(path.string() + ": bad magic, not a SICLW001 weight file");
  }
  ModelState model = ModelState::zeros(config);
  auto arrays = model.named_arrays();
  const auto count = read_le<std::uint32_t>(is, path);
  if (count != arrays.size()) {
    throw FormatError(path.string() + ": expected " + std::to_string(arrays.size()) + " arrays, file has " +
                      std::to_string(count));
  }
  for (auto& [expected_name, arr] : arrays) {
    const auto len = read_le<std::uint32_t>(is, path);
    if (len > 4096) throw FormatError(path.string() + ": implausible name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError(path.string() + ": truncated weight file");
    if (name != expected_name) {
      throw FormatError(path.string() + ": layer mismatch, expected " + expected_name + " but found " + name);
    }
    const auto rank = read_le<std::uint32_t>(is, path);
    Shape shape;
    for (std::uint32_t r = 0; r < rank && r < 8; ++r) shape.push_back(read_le<std::uint64_t>(is, path));
    if (shape != arr->shape()) {
      throw FormatError(path.string() + ": layer " + name + " has shape " + shape_string(shape) + ", expected " +
                        shape_string(arr->shape()));
    }
    for (double& v : arr->data()) v = read_le<double>(is, path);
  }
  for (std::size_t i = 0; i < kNumBlocks; ++i) {
    for (double v : model.blocks[i].bn.running_var.data()) {
      if (!(v > 0.0)) throw FormatError(path.string() + ": nonpositive running variance in block " + std::to_string(i + 1));
    }
  }
  return model;
}

}  // namespace sicl::nn
