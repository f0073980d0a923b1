#include "sicl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "sicl/errors.hpp"
#include "sicl/style.hpp"
#include "sicl/train.hpp"

namespace sicl::experiment {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

void say(std::ostream* log, const std::string& line) {
  if (log != nullptr) *log << line << '\n' << std::flush;
}

std::uint64_t substream(std::uint64_t seed, const std::string& label) { return hash_label(seed, 0, label); }

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  return os;
}

template <typename T>
T get_as(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

template <typename T>
void bind_key(std::map<std::string, std::function<void(ExperimentConfig&, const json&)>>& setters,
          std::map<std::string, std::function<json(const ExperimentConfig&)>>& getters, const std::string& key,
          T ExperimentConfig::*member) {
  setters[key] = [key, member](ExperimentConfig& c, const json& v) {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, int>) {
      if (!v.is_number_integer() || (std::is_same_v<T, std::size_t> && v.get<long long>() < 0)) {
        throw ConfigError("config key '" + key + "' must be a nonnegative integer");
      }
    }
    c.*member = get_as<T>(v, key);
  };
  getters[key] = [member](const ExperimentConfig& c) { return json(c.*member); };
}

struct KeyTable {
  std::map<std::string, std::function<void(ExperimentConfig&, const json&)>> set;
  std::map<std::string, std::function<json(const ExperimentConfig&)>> get;
};

const KeyTable& keys() {
  static const KeyTable table = [] {
    KeyTable t;
    bind_key(t.set, t.get, "dataset", &ExperimentConfig::dataset);
    bind_key(t.set, t.get, "cifar10_dir", &ExperimentConfig::cifar10_dir);
    bind_key(t.set, t.get, "image_size", &ExperimentConfig::image_size);
    bind_key(t.set, t.get, "num_classes", &ExperimentConfig::num_classes);
    bind_key(t.set, t.get, "n_train_per_class", &ExperimentConfig::n_train_per_class);
    bind_key(t.set, t.get, "n_val_per_class", &ExperimentConfig::n_val_per_class);
    bind_key(t.set, t.get, "n_test_per_class", &ExperimentConfig::n_test_per_class);
    bind_key(t.set, t.get, "n_ood", &ExperimentConfig::n_ood);
    bind_key(t.set, t.get, "widths", &ExperimentConfig::widths);
    bind_key(t.set, t.get, "tap_block", &ExperimentConfig::tap_block);
    bind_key(t.set, t.get, "epochs", &ExperimentConfig::epochs);
    bind_key(t.set, t.get, "train_lr", &ExperimentConfig::train_lr);
    bind_key(t.set, t.get, "train_batch_size", &ExperimentConfig::train_batch_size);
    bind_key(t.set, t.get, "weight_decay", &ExperimentConfig::weight_decay);
    bind_key(t.set, t.get, "train_dropout", &ExperimentConfig::train_dropout);
    bind_key(t.set, t.get, "adapt_method", &ExperimentConfig::adapt_method);
    bind_key(t.set, t.get, "adapt_lr", &ExperimentConfig::adapt_lr);
    bind_key(t.set, t.get, "bn_momentum", &ExperimentConfig::bn_momentum);
    bind_key(t.set, t.get, "steps_per_batch", &ExperimentConfig::steps_per_batch);
    bind_key(t.set, t.get, "calibrators", &ExperimentConfig::calibrators);
    bind_key(t.set, t.get, "sicl_n", &ExperimentConfig::sicl_n);
    bind_key(t.set, t.get, "sicl_mode", &ExperimentConfig::sicl_mode);
    bind_key(t.set, t.get, "sicl_relaxation", &ExperimentConfig::sicl_relaxation);
    bind_key(t.set, t.get, "sicl_clamp_sigma", &ExperimentConfig::sicl_clamp_sigma);
    bind_key(t.set, t.get, "mc_dropout_rate", &ExperimentConfig::mc_dropout_rate);
    bind_key(t.set, t.get, "mc_dropout_n", &ExperimentConfig::mc_dropout_n);
    bind_key(t.set, t.get, "scenarios", &ExperimentConfig::scenarios);
    bind_key(t.set, t.get, "corruptions", &ExperimentConfig::corruptions);
    bind_key(t.set, t.get, "severity", &ExperimentConfig::severity);
    bind_key(t.set, t.get, "benign_samples", &ExperimentConfig::benign_samples);
    bind_key(t.set, t.get, "dirichlet_alpha", &ExperimentConfig::dirichlet_alpha);
    bind_key(t.set, t.get, "dirichlet_slots", &ExperimentConfig::dirichlet_slots);
    bind_key(t.set, t.get, "dynamic_per_corruption", &ExperimentConfig::dynamic_per_corruption);
    bind_key(t.set, t.get, "ood_fraction", &ExperimentConfig::ood_fraction);
    bind_key(t.set, t.get, "analyze_samples", &ExperimentConfig::analyze_samples);
    bind_key(t.set, t.get, "analyze_n", &ExperimentConfig::analyze_n);
    bind_key(t.set, t.get, "analyze_dropout_rate", &ExperimentConfig::analyze_dropout_rate);
    bind_key(t.set, t.get, "ece_bins", &ExperimentConfig::ece_bins);
    bind_key(t.set, t.get, "ece_per_batch", &ExperimentConfig::ece_per_batch);
    bind_key(t.set, t.get, "seeds", &ExperimentConfig::seeds);
    bind_key(t.set, t.get, "batch_size", &ExperimentConfig::batch_size);
    bind_key(t.set, t.get, "out", &ExperimentConfig::out);
    return t;
  }();
  return table;
}

style::PerturbMode parse_mode(const std::string& s) {
  if (s == "both") return style::PerturbMode::Both;
  if (s == "mu") return style::PerturbMode::MuOnly;
  if (s == "sigma") return style::PerturbMode::SigmaOnly;
  throw ConfigError("unknown sicl_mode '" + s + "' (expected both, mu or sigma)");
}

}  // namespace

// ---------------------------------------------------------------------------
// configuration

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (dataset != "styleshapes" && dataset != "cifar10") fail("dataset must be styleshapes or cifar10");
  if (dataset == "cifar10") {
    if (cifar10_dir.empty()) fail("cifar10 dataset needs cifar10_dir");
    if (image_size != 32 || num_classes != 10) fail("cifar10 requires image_size 32 and num_classes 10");
  }
  if (image_size < 8) fail("image_size must be at least 8");
  if (num_classes < 2 || num_classes > streams::kNumShapes) fail("num_classes must lie in 2..10");
  if (n_train_per_class < 1 || n_val_per_class < 1 || n_test_per_class < 1) fail("per-class sample counts must be positive");
  if (seeds.empty()) fail("seeds must be nonempty");
  if (batch_size == 0) fail("batch_size must be positive");
  if (ece_bins == 0) fail("ece_bins must be positive");
  if (severity < 1 || severity > 5) fail("severity must lie in 1..5");
  if (corruptions.empty()) fail("corruptions must be nonempty");
  for (const auto& c : corruptions) {
    try {
      streams::parse_corruption(c);
    } catch (const ArgumentError& e) {
      fail(e.what());
    }
  }
  for (const auto& s : scenarios) {
    if (s != "benign" && s != "dynamic") fail("unknown scenario '" + s + "'");
  }
  if (calibrators.empty()) fail("calibrators must be nonempty");
  for (const auto& c : calibrators) parse_calibrator(c, *this);
  if (!(ood_fraction >= 0.0 && ood_fraction <= 1.0)) fail("ood_fraction must lie in [0, 1]");
  if (ood_fraction > 0.0 && n_ood == 0) fail("ood_fraction > 0 needs n_ood > 0");
  if (!(dirichlet_alpha > 0.0)) fail("dirichlet_alpha must be positive");
  if (dirichlet_slots == 0) fail("dirichlet_slots must be positive");
  if (!(mc_dropout_rate >= 0.0 && mc_dropout_rate < 1.0)) fail("mc_dropout_rate must lie in [0, 1)");
  if (mc_dropout_n == 0) fail("mc_dropout_n must be positive");
  if (!(analyze_dropout_rate >= 0.0 && analyze_dropout_rate < 1.0)) fail("analyze_dropout_rate must lie in [0, 1)");
  if (analyze_n == 0 || analyze_samples == 0) fail("analyze_n and analyze_samples must be positive");
  if (sicl_n == 0) fail("sicl_n must be positive");
  parse_mode(sicl_mode);
  try {
    model_config().validate();
    adapt_config().validate();
    train::TrainConfig{epochs, train_lr, 0.9, weight_decay, train_batch_size, train_dropout, bn_momentum}.validate();
  } catch (const ArgumentError& e) {
    fail(e.what());
  }
}

nn::ModelConfig ExperimentConfig::model_config() const {
  nn::ModelConfig m;
  m.in_channels = 3;
  m.image_size = image_size;
  m.num_classes = num_classes;
  m.widths = widths;
  m.tap_block = tap_block;
  return m;
}

tta::AdaptConfig ExperimentConfig::adapt_config() const {
  tta::AdaptConfig a;
  try {
    a.method = tta::parse_method(adapt_method);
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  a.lr = adapt_lr;
  a.bn_momentum = bn_momentum;
  a.steps_per_batch = steps_per_batch;
  return a;
}

ExperimentConfig config_from_json(const json& j, ExperimentConfig base) {
  if (!j.is_object()) throw ConfigError("config must be a flat JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = keys().set.find(key);
    if (it == keys().set.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(base, value);
  }
  return base;
}

json config_to_json(const ExperimentConfig& config) {
  json j = json::object();
  for (const auto& [key, getter] : keys().get) j[key] = getter(config);
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* s = std::getenv("SICL_SEED"); s != nullptr && *s != '\0') {
    try {
      std::size_t used = 0;
      const auto seed = std::stoull(s, &used);
      if (used != std::string(s).size()) throw std::invalid_argument(s);
      config.seeds = {seed};
    } catch (const std::exception&) {
      throw ConfigError(std::string("SICL_SEED is not an unsigned integer: ") + s);
    }
  }
  if (const char* o = std::getenv("SICL_OUT"); o != nullptr && *o != '\0') config.out = o;
}

fs::path seed_dir(const ExperimentConfig& config, std::uint64_t seed) {
  return fs::path(config.out) / ("seed_" + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// data and source model

DataBundle make_data(const ExperimentConfig& config, std::uint64_t seed) {
  DataBundle d;
  if (config.dataset == "cifar10") {
    streams::Dataset full = streams::load_cifar10_binary(config.cifar10_dir, streams::Split::Train);
    const std::size_t n_val = std::min(full.size() / 2, config.n_val_per_class * config.num_classes);
    const std::size_t n_train = full.size() - n_val;
    d.train.images = full.images.slice_rows(0, n_train);
    d.train.labels.assign(full.labels.begin(), full.labels.begin() + static_cast<std::ptrdiff_t>(n_train));
    d.train.num_classes = 10;
    d.val.images = full.images.slice_rows(n_train, full.size());
    d.val.labels.assign(full.labels.begin() + static_cast<std::ptrdiff_t>(n_train), full.labels.end());
    d.val.num_classes = 10;
    d.val.split = streams::Split::Val;
    d.test = streams::load_cifar10_binary(config.cifar10_dir, streams::Split::Test);
  } else {
    d.train = streams::gen_styleshapes(substream(seed, "dataset/train"), config.n_train_per_class, config.num_classes,
                                       config.image_size);
    d.val = streams::gen_styleshapes(substream(seed, "dataset/val"), config.n_val_per_class, config.num_classes,
                                     config.image_size);
    d.val.split = streams::Split::Val;
    d.test = streams::gen_styleshapes(substream(seed, "dataset/test"), config.n_test_per_class, config.num_classes,
                                      config.image_size);
    d.test.split = streams::Split::Test;
  }
  d.ood = streams::gen_alien_shapes(substream(seed, "dataset/ood"), config.n_ood, config.image_size);
  return d;
}

GenDataReport cmd_gen_data(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  config.validate();
  const DataBundle d = make_data(config, seed);
  const fs::path dir = seed_dir(config, seed);
  fs::create_directories(dir);
  GenDataReport r;
  const std::pair<const char*, const streams::Dataset*> parts[] = {
      {"train", &d.train}, {"val", &d.val}, {"test", &d.test}, {"ood", &d.ood}};
  for (const auto& [name, ds] : parts) {
    if (ds->size() == 0) continue;
    streams::save_dataset(*ds, dir / (std::string(name) + ".sicld"));
    r.counts[name] = ds->size();
    r.checksums[name] = streams::dataset_checksum(*ds);
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(r.checksums[name]));
    say(log, std::string(name) + ": " + std::to_string(ds->size()) + " samples, checksum " + hex);
  }
  return r;
}

namespace {

json training_fingerprint(const ExperimentConfig& c, std::uint64_t seed) {
  return json{{"schema_version", kSchemaVersion},
              {"seed", seed},
              {"dataset", c.dataset},
              {"cifar10_dir", c.cifar10_dir},
              {"image_size", c.image_size},
              {"num_classes", c.num_classes},
              {"n_train_per_class", c.n_train_per_class},
              {"n_val_per_class", c.n_val_per_class},
              {"widths", c.widths},
              {"tap_block", c.tap_block},
              {"epochs", c.epochs},
              {"train_lr", c.train_lr},
              {"train_batch_size", c.train_batch_size},
              {"weight_decay", c.weight_decay},
              {"train_dropout", c.train_dropout},
              {"bn_momentum", c.bn_momentum}};
}

void write_val_logits(const Array& logits, const std::vector<int>& labels, const fs::path& path) {
  std::ofstream os = open_out(path);
  os << "# schema=" << kSchemaVersion << "\nindex,label";
  for (std::size_t k = 0; k < logits.dim(1); ++k) os << ",logit_" << k;
  os << '\n';
  for (std::size_t i = 0; i < labels.size(); ++i) {
    os << i << ',' << labels[i];
    for (std::size_t k = 0; k < logits.dim(1); ++k) os << ',' << num(logits.at(i, k));
    os << '\n';
  }
}

}  // namespace

Source prepare_source(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  config.validate();
  const fs::path dir = seed_dir(config, seed);
  fs::create_directories(dir);
  Source s;
  s.data = make_data(config, seed);
  const json fingerprint = training_fingerprint(config, seed);
  const fs::path weights = dir / "weights.bin", meta = dir / "train_meta.json";

  bool reuse = false;
  if (fs::exists(weights) && fs::exists(meta)) {
    std::ifstream is(meta);
    try {
      reuse = json::parse(is) == fingerprint;
    } catch (const json::exception&) {
      reuse = false;
    }
  }
  if (reuse) {
    s.model = nn::load_weights(weights, config.model_config());
    s.reused = true;
    say(log, "seed " + std::to_string(seed) + ": reusing " + weights.string());
  } else {
    train::TrainConfig tc;
    tc.epochs = config.epochs;
    tc.lr = config.train_lr;
    tc.batch_size = config.train_batch_size;
    tc.weight_decay = config.weight_decay;
    tc.dropout = config.train_dropout;
    tc.bn_momentum = config.bn_momentum;
    Rng rng = Rng(seed).derive("train");
    std::ofstream tlog = open_out(dir / "train_log.csv");
    tlog << "# schema=" << kSchemaVersion << "\nepoch,loss,train_accuracy\n";
    auto result = train::train_source(config.model_config(), s.data.train, tc, rng, [&](const train::EpochLog& e) {
      tlog << e.epoch << ',' << num(e.loss) << ',' << num(e.train_accuracy) << '\n';
      say(log, "seed " + std::to_string(seed) + " epoch " + std::to_string(e.epoch) + ": loss " + num(e.loss));
    });
    s.model = std::move(result.model);
    nn::save_weights(s.model, weights);
    std::ofstream(meta) << fingerprint.dump(2) << '\n';
  }
  const Array val_logits = train::predict_logits(s.model, s.data.val);
  s.val_accuracy = train::accuracy(val_logits, s.data.val.labels);
  s.temperature = calibration::fit_temperature(val_logits, s.data.val.labels);
  write_val_logits(val_logits, s.data.val.labels, dir / "val_logits.csv");
  say(log, "seed " + std::to_string(seed) + ": clean val accuracy " + num(s.val_accuracy) + ", temperature " +
               num(s.temperature));
  return s;
}

TrainReport cmd_train(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  const Source s = prepare_source(config, seed, log);
  return TrainReport{s.val_accuracy, s.temperature, seed_dir(config, seed) / "weights.bin"};
}

// ---------------------------------------------------------------------------
// stream execution

CalibratorSpec parse_calibrator(const std::string& name, const ExperimentConfig& config) {
  CalibratorSpec spec;
  spec.name = name;
  spec.sicl.n_variants = config.sicl_n;
  spec.sicl.mode = parse_mode(config.sicl_mode);
  spec.sicl.relaxation = config.sicl_relaxation;
  spec.sicl.clamp_sigma = config.sicl_clamp_sigma;
  if (name == "msp") {
    spec.kind = CalibratorKind::Msp;
  } else if (name == "ts") {
    spec.kind = CalibratorKind::Temperature;
  } else if (name == "mcdropout") {
    spec.kind = CalibratorKind::McDropout;
  } else if (name.rfind("sicl", 0) == 0) {
    spec.kind = CalibratorKind::Sicl;
    const std::string suffix = name.substr(4);
    if (suffix.empty()) {
    } else if (suffix == "_mu") {
      spec.sicl.mode = style::PerturbMode::MuOnly;
    } else if (suffix == "_sigma") {
      spec.sicl.mode = style::PerturbMode::SigmaOnly;
    } else if (suffix == "_norelax") {
      spec.sicl.relaxation = false;
    } else if (suffix == "_clamp") {
      spec.sicl.clamp_sigma = true;
    } else if (suffix.rfind("_n", 0) == 0 && suffix.size() > 2 &&
               std::all_of(suffix.begin() + 2, suffix.end(), [](char ch) { return ch >= '0' && ch <= '9'; })) {
      spec.sicl.n_variants = std::stoul(suffix.substr(2));
      if (spec.sicl.n_variants == 0) throw ConfigError("SICL variant count must be positive in '" + name + "'");
    } else {
      throw ConfigError("unknown calibrator '" + name + "'");
    }
  } else {
    throw ConfigError("unknown calibrator '" + name + "' (expected msp, ts, mcdropout or sicl)");
  }
  return spec;
}

namespace {

struct BatchLabel {
  std::string corruption;
  int severity = 0;
};

BatchLabel majority(const streams::Batch& batch) {
  std::map<std::pair<int, int>, std::size_t> counts;
  for (const auto& s : batch.specs) counts[{static_cast<int>(s.kind), s.severity}]++;
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return {streams::corruption_name(static_cast<streams::CorruptionKind>(best->first.first)), best->first.second};
}

}  // namespace

StreamResult run_stream(const nn::ModelState& source, const streams::StreamPlan& plan, const DataBundle& data,
                        const std::vector<CalibratorSpec>& calibrators, double temperature,
                        const ExperimentConfig& config, std::uint64_t seed, const std::string& name,
                        const std::string& scenario, std::ostream* log) {
  if (calibrators.empty()) throw ArgumentError("run_stream needs at least one calibrator");
  nn::ModelState model = source;
  const tta::AdaptConfig adapt = config.adapt_config();
  tta::AdaptState adapt_state;
  const Rng root(substream(seed, "stream/" + name));

  StreamResult result;
  result.name = name;
  result.scenario = scenario;
  std::map<std::string, metrics::EceAccumulator> acc;
  for (const auto& c : calibrators) {
    result.calibrators.push_back(c.name);
    acc.emplace(c.name, metrics::EceAccumulator(config.ece_bins));
    result.records[c.name];
    result.ood_scores[c.name];
  }

  for (std::size_t b = 0; b < plan.num_batches(); ++b) {
    const streams::Batch batch = streams::materialize_batch(plan, b, data.test, &data.ood);
    tta::AdaptResult adapted;
    try {
      adapted = tta::adapt_step(model, batch.images, adapt, b, &adapt_state);
    } catch (const AdaptationError& e) {
      result.skipped_batches.push_back(b);
      say(log, name + ": skipped " + e.what());
      continue;
    }
    const Array& logits = adapted.forward.logits;
    const BatchLabel label = majority(batch);
    std::vector<std::size_t> argmax(logits.dim(0));
    for (std::size_t i = 0; i < argmax.size(); ++i) argmax[i] = argmax_row(logits, i);

    for (const auto& cal : calibrators) {
      std::vector<calibration::Prediction> preds;
      switch (cal.kind) {
        case CalibratorKind::Msp:
          preds = calibration::msp_confidence(logits);
          break;
        case CalibratorKind::Temperature:
          preds = calibration::temperature_confidence(logits, temperature);
          break;
        case CalibratorKind::McDropout: {
          Rng rng = root.derive("mcdropout", b);
          preds = calibration::mc_dropout_confidence(model, adapted.forward.embedding, config.mc_dropout_rate,
                                                     config.mc_dropout_n, rng);
          break;
        }
        case CalibratorKind::Sicl: {
          const auto cp = calibration::sicl_confidence(model, adapted.forward, cal.sicl, root.derive("sicl", b));
          for (const auto& p : cp) preds.push_back({p.predicted_class, p.confidence});
          break;
        }
      }
      if (cal.kind != CalibratorKind::McDropout) {
        for (std::size_t i = 0; i < preds.size(); ++i) {
          if (preds[i].label != argmax[i]) throw std::logic_error(cal.name + " altered a predicted label");
        }
      }

      std::vector<metrics::Record> batch_records;
      for (std::size_t i = 0; i < preds.size(); ++i) {
        if (batch.is_ood[i]) {
          result.ood_scores[cal.name].push_back(preds[i].confidence);
        } else {
          batch_records.push_back({preds[i].confidence, static_cast<int>(preds[i].label) == batch.labels[i]});
        }
      }
      BatchRow row;
      row.batch_idx = b;
      row.calibrator = cal.name;
      row.corruption = label.corruption;
      row.severity = label.severity;
      row.entropy_before = adapted.entropy_before;
      row.entropy_after = adapted.entropy_after;
      metrics::EceAccumulator& a = acc.at(cal.name);
      if (!batch_records.empty()) {
        const metrics::EceStep step = a.update(batch_records);
        row.batch_ece = step.batch_ece;
        row.accuracy = metrics::accuracy(batch_records);
        double conf = 0.0;
        for (const auto& r : batch_records) conf += r.confidence;
        row.mean_conf = conf / static_cast<double>(batch_records.size());
        auto& all = result.records[cal.name];
        all.insert(all.end(), batch_records.begin(), batch_records.end());
        if (cal.kind == CalibratorKind::Msp) result.batch_msp_confidence.push_back(*row.mean_conf);
      }
      row.cumulative_ece = a.cumulative_ece();
      result.rows.push_back(row);
    }
  }

  for (const auto& cal : calibrators) {
    CalibratorSummary s;
    const metrics::EceAccumulator& a = acc.at(cal.name);
    const auto& recs = result.records[cal.name];
    s.final_cumulative_ece = a.cumulative_ece();
    s.mean_batch_ece = a.history().empty() ? 0.0 : a.history().back().mean_batch_ece;
    s.n_records = recs.size();
    s.accuracy = recs.empty() ? 0.0 : metrics::accuracy(recs);
    const auto& ood = result.ood_scores[cal.name];
    if (!ood.empty() && !recs.empty()) {
      std::vector<double> id;
      for (const auto& r : recs) id.push_back(r.confidence);
      s.auroc = metrics::auroc(id, ood);
      s.auroc_null_std = metrics::auroc_null_std(id.size(), ood.size());
    }
    result.summary[cal.name] = s;
  }
  return result;
}

void write_batch_csv(const StreamResult& result, const fs::path& path) {
  std::ofstream os = open_out(path);
  os << "# schema=" << kSchemaVersion << '\n';
  os << "batch_idx,calibrator,corruption,severity,accuracy,batch_ece,cumulative_ece,mean_conf,entropy_before,"
        "entropy_after\n";
  for (const BatchRow& r : result.rows) {
    os << r.batch_idx << ',' << r.calibrator << ',' << r.corruption << ',' << r.severity << ','
       << opt_num(r.accuracy) << ',' << opt_num(r.batch_ece) << ',' << num(r.cumulative_ece) << ','
       << opt_num(r.mean_conf) << ',' << num(r.entropy_before) << ',' << num(r.entropy_after) << '\n';
  }
}

void write_reliability_csv(const StreamResult& result, std::size_t bins, const fs::path& path) {
  std::ofstream os = open_out(path);
  os << "# schema=" << kSchemaVersion << '\n';
  os << "calibrator,bin,lower,upper,count,mean_conf,accuracy\n";
  for (const auto& name : result.calibrators) {
    const auto rb = metrics::reliability_bins(result.records.at(name), bins);
    for (std::size_t k = 0; k < rb.size(); ++k) {
      os << name << ',' << k << ',' << num(rb[k].lower) << ',' << num(rb[k].upper) << ',' << rb[k].count << ','
         << opt_num(rb[k].mean_conf) << ',' << opt_num(rb[k].accuracy) << '\n';
    }
  }
}

namespace {

json summary_json(const CalibratorSummary& s, bool per_batch) {
  json j{{"final_cumulative_ece", s.final_cumulative_ece},
         {"mean_batch_ece", s.mean_batch_ece},
         {"ece", per_batch ? s.mean_batch_ece : s.final_cumulative_ece},
         {"accuracy", s.accuracy},
         {"n_records", s.n_records}};
  if (s.auroc) {
    j["auroc"] = *s.auroc;
    j["auroc_null_std"] = *s.auroc_null_std;
  }
  return j;
}

std::vector<streams::CorruptionSpec> corruption_specs(const ExperimentConfig& config) {
  std::vector<streams::CorruptionSpec> specs;
  for (const auto& c : config.corruptions) specs.push_back({streams::parse_corruption(c), config.severity, 0});
  return specs;
}

}  // namespace

RunReport cmd_run(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  config.validate();
  const Source src = prepare_source(config, seed, log);
  const fs::path dir = seed_dir(config, seed);
  std::vector<CalibratorSpec> cals;
  for (const auto& c : config.calibrators) cals.push_back(parse_calibrator(c, config));
  const auto specs = corruption_specs(config);

  RunReport report;
  auto with_ood = [&](streams::StreamPlan plan, const std::string& name) {
    if (config.ood_fraction > 0.0) {
      plan = streams::inject_ood(plan, src.data.ood.size(), config.ood_fraction, substream(seed, "ood/" + name));
    }
    return plan;
  };
  for (const auto& scenario : config.scenarios) {
    if (scenario == "benign") {
      const std::size_t n = std::min(config.benign_samples, src.data.test.size());
      for (const auto& spec : specs) {
        const std::string name = "benign_" + streams::corruption_name(spec.kind);
        auto plan = with_ood(
            streams::plan_benign(src.data.test, spec, n, config.batch_size, substream(seed, "plan/" + name)), name);
        say(log, "seed " + std::to_string(seed) + ": " + name + " (" + std::to_string(plan.num_batches()) + " batches)");
        report.streams.push_back(
            run_stream(src.model, plan, src.data, cals, src.temperature, config, seed, name, scenario, log));
      }
    } else {
      const std::string name = "dynamic";
      const std::size_t n = std::min(config.dynamic_per_corruption, src.data.test.size());
      auto plan = with_ood(streams::plan_dynamic(src.data.test, specs, config.dirichlet_alpha, config.dirichlet_slots,
                                                 config.batch_size, substream(seed, "plan/dynamic"), n),
                           name);
      say(log, "seed " + std::to_string(seed) + ": dynamic (" + std::to_string(plan.num_batches()) + " batches)");
      report.streams.push_back(
          run_stream(src.model, plan, src.data, cals, src.temperature, config, seed, name, scenario, log));
    }
  }

  json streams_json = json::object();
  std::map<std::string, std::map<std::string, std::vector<const CalibratorSummary*>>> by_scenario;
  std::vector<std::size_t> skipped;
  for (const auto& s : report.streams) {
    write_batch_csv(s, dir / (s.name + ".csv"));
    write_reliability_csv(s, config.ece_bins, dir / (s.name + "_reliability.csv"));
    json cj = json::object();
    for (const auto& [cal, summ] : s.summary) {
      cj[cal] = summary_json(summ, config.ece_per_batch);
      by_scenario[s.scenario][cal].push_back(&summ);
    }
    streams_json[s.name] = json{{"scenario", s.scenario}, {"calibrators", cj}, {"skipped_batches", s.skipped_batches}};
  }
  json scenarios_json = json::object();
  for (const auto& [scenario, cals_map] : by_scenario) {
    json sj = json::object();
    for (const auto& [cal, list] : cals_map) {
      double cum = 0.0, per = 0.0, accuracy = 0.0;
      for (const auto* s : list) {
        cum += s->final_cumulative_ece;
        per += s->mean_batch_ece;
        accuracy += s->accuracy;
      }
      const double n = static_cast<double>(list.size());
      cum /= n;
      per /= n;
      accuracy /= n;
      sj[cal] = json{{"ece", config.ece_per_batch ? per : cum}, {"final_cumulative_ece", cum}, {"mean_batch_ece", per}, {"accuracy", accuracy},
                     {"n_streams", list.size()}};
    }
    scenarios_json[scenario] = sj;
  }

  report.summary = json{{"schema_version", kSchemaVersion},
                        {"seed", seed},
                        {"ece_bins", config.ece_bins},
                        {"ece_headline", config.ece_per_batch ? "per_batch" : "cumulative"},
                        {"temperature", src.temperature},
                        {"val_accuracy", src.val_accuracy},
                        {"config", config_to_json(config)},
                        {"streams", streams_json},
                        {"scenarios", scenarios_json}};
  std::ofstream(dir / "summary.json") << report.summary.dump(2) << '\n';

  // SICL variant-count sweep, when several counts ran side by side
  std::map<std::size_t, std::string> sicl_counts;
  for (const auto& c : cals) {
    if (c.kind == CalibratorKind::Sicl && c.sicl.mode == style::PerturbMode::Both && c.sicl.relaxation &&
        !c.sicl.clamp_sigma) {
      sicl_counts.emplace(c.sicl.n_variants, c.name);
    }
  }
  if (sicl_counts.size() > 1) {
    std::ofstream os = open_out(dir / "n_sweep.csv");
    os << "# schema=" << kSchemaVersion << "\nscenario,n,final_cumulative_ece\n";
    for (const auto& [scenario, cals_map] : by_scenario) {
      for (const auto& [n, cal] : sicl_counts) {
        os << scenario << ',' << n << ',' << num(scenarios_json[scenario][cal]["final_cumulative_ece"].get<double>())
           << '\n';
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// candidate analysis

std::vector<AnalysisRow> cmd_analyze(const ExperimentConfig& config, std::uint64_t seed, std::ostream* log) {
  config.validate();
  const Source src = prepare_source(config, seed, log);
  const nn::ModelState& model = src.model;
  const fs::path dir = seed_dir(config, seed);

  const Array val_emb = train::predict_embeddings(model, src.data.val);
  const auto gaussians = metrics::fit_class_gaussians(val_emb, src.data.val.labels, config.num_classes);

  const tta::AdaptConfig adapt = config.adapt_config();
  nn::ForwardOptions opts;
  opts.bn_mode = adapt.method == tta::AdaptMethod::None ? nn::BnMode::SourceRunning : nn::BnMode::BatchStats;

  const std::vector<std::string> methods{"style_perturb", "mixstyle", "dropout", "content_perturb"};
  std::vector<AnalysisRow> rows;
  for (const auto& spec : corruption_specs(config)) {
    const std::string cname = streams::corruption_name(spec.kind);
    const std::size_t n = std::min(config.analyze_samples, src.data.test.size());
    const auto plan = streams::plan_benign(src.data.test, spec, n, n, substream(seed, "analyze/plan/" + cname));
    const streams::Batch batch = streams::materialize_batch(plan, 0, src.data.test);
    const nn::ForwardResult fwd = nn::forward(model, batch.images, opts);
    const nn::FeatureMap& tap = fwd.tap;
    const std::size_t b = tap.batch();

    std::vector<Array> maps;
    std::vector<style::StyleStats> stats;
    std::vector<const metrics::ClassGaussian*> g(b);
    std::vector<double> base(b);
    for (std::size_t i = 0; i < b; ++i) {
      maps.push_back(style::instance(tap, i));
      stats.push_back(style::channel_stats(maps.back()));
      g[i] = &gaussians.at(argmax_row(fwd.logits, i));
      base[i] = metrics::mahalanobis(fwd.embedding.slab(i), *g[i]);
    }
    const Array delta = style::batch_delta(tap);

    for (const auto& method : methods) {
      const Rng root = Rng(substream(seed, "analyze/" + cname)).derive(method);
      std::vector<double> dist_sum(b, 0.0), sv_sum(b, 0.0);
      for (std::size_t j = 0; j < config.analyze_n; ++j) {
        Rng rng = root.derive("candidate", j);
        std::vector<Array> cand(b);
        for (std::size_t i = 0; i < b; ++i) {
          if (method == "style_perturb") {
            cand[i] = style::perturb_style(maps[i], stats[i], delta, rng);
          } else if (method == "content_perturb") {
            cand[i] = style::perturb_content(maps[i], stats[i], rng);
          } else if (method == "mixstyle") {
            std::size_t partner = i;
            if (b > 1) {
              partner = rng.uniform_index(b - 1);
              if (partner >= i) ++partner;
            }
            const double lambda = sample_dirichlet(rng, 0.1, 2)[0];
            cand[i] = style::mixstyle(maps[i], maps[partner], lambda);
          } else {
            cand[i] = maps[i];
            const double keep = 1.0 / (1.0 - config.analyze_dropout_rate);
            for (double& v : cand[i].data()) v = rng.uniform() >= config.analyze_dropout_rate ? v * keep : 0.0;
          }
          sv_sum[i] += style::style_variance(maps[i], cand[i]);
        }
        const nn::TapForward tf = nn::forward_from_tap(model, nn::FeatureMap{stack(cand), tap.layer}, fwd.bn_cache);
        for (std::size_t i = 0; i < b; ++i) dist_sum[i] += metrics::mahalanobis(tf.embedding.slab(i), *g[i]);
      }
      AnalysisRow row{cname, method, 0.0, 0.0, b};
      for (std::size_t i = 0; i < b; ++i) {
        row.mean_content_variance += std::abs(base[i] - dist_sum[i] / static_cast<double>(config.analyze_n));
        row.mean_style_variance += sv_sum[i] / static_cast<double>(config.analyze_n);
      }
      row.mean_content_variance /= static_cast<double>(b);
      row.mean_style_variance /= static_cast<double>(b);
      rows.push_back(row);
    }
    say(log, "seed " + std::to_string(seed) + ": analyzed " + cname);
  }

  std::ofstream os = open_out(dir / "analysis.csv");
  os << "# schema=" << kSchemaVersion << "\ncorruption,method,mean_content_variance,mean_style_variance,n\n";
  for (const auto& r : rows) {
    os << r.corruption << ',' << r.method << ',' << num(r.mean_content_variance) << ',' << num(r.mean_style_variance)
       << ',' << r.n << '\n';
  }
  return rows;
}

// ---------------------------------------------------------------------------
// report

void check_csv_schema(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string first;
  std::getline(is, first);
  const std::string expected = "# schema=" + std::to_string(kSchemaVersion);
  if (first != expected) {
    throw FormatError(path.string() + ": schema line '" + first + "' does not match '" + expected + "'");
  }
}

std::vector<ReportRow> cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out) {
  if (run_dirs.empty()) throw ArgumentError("report needs at least one run directory");
  std::vector<fs::path> summaries;
  for (const auto& d : run_dirs) {
    if (fs::exists(d / "summary.json")) {
      summaries.push_back(d / "summary.json");
      continue;
    }
    if (!fs::is_directory(d)) throw FormatError("not a run directory: " + d.string());
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(d)) {
      if (entry.is_directory() && entry.path().filename().string().rfind("seed_", 0) == 0 &&
          fs::exists(entry.path() / "summary.json")) {
        found.push_back(entry.path() / "summary.json");
      }
    }
    if (found.empty()) throw FormatError("no summary.json under " + d.string());
    std::sort(found.begin(), found.end());
    summaries.insert(summaries.end(), found.begin(), found.end());
  }

  std::map<std::pair<std::string, std::string>, std::pair<std::vector<double>, std::vector<double>>> values;
  for (const auto& path : summaries) {
    std::ifstream is(path);
    json j;
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
    if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion) {
      throw FormatError(path.string() + ": schema version " +
                        (j.contains("schema_version") ? j["schema_version"].dump() : std::string("missing")) +
                        " does not match " + std::to_string(kSchemaVersion));
    }
    try {
      for (const auto& [scenario, cals] : j.at("scenarios").items()) {
        for (const auto& [cal, v] : cals.items()) {
          auto& slot = values[{scenario, cal}];
          slot.first.push_back(v.at("ece").get<double>());
          slot.second.push_back(v.at("accuracy").get<double>());
        }
      }
    } catch (const json::exception& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }

  auto mean_std = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::pair{m, v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0};
  };
  std::vector<ReportRow> rows;
  for (const auto& [key, v] : values) {
    ReportRow r;
    r.scenario = key.first;
    r.calibrator = key.second;
    r.n_seeds = v.first.size();
    std::tie(r.ece_mean, r.ece_std) = mean_std(v.first);
    std::tie(r.accuracy_mean, r.accuracy_std) = mean_std(v.second);
    rows.push_back(r);
  }
  if (!out.empty()) {
    std::ofstream os = open_out(out);
    os << "# schema=" << kSchemaVersion << "\nscenario,calibrator,n_seeds,ece_mean,ece_std,accuracy_mean,accuracy_std\n";
    for (const auto& r : rows) {
      os << r.scenario << ',' << r.calibrator << ',' << r.n_seeds << ',' << num(r.ece_mean) << ',' << num(r.ece_std)
         << ',' << num(r.accuracy_mean) << ',' << num(r.accuracy_std) << '\n';
    }
  }
  return rows;
}

}  // namespace sicl::experiment
