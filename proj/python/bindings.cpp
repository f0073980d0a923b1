#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "sicl/calibration.hpp"
#include "sicl/errors.hpp"
#include "sicl/experiment.hpp"
#include "sicl/metrics.hpp"
#include "sicl/nn.hpp"
#include "sicl/streams.hpp"
#include "sicl/style.hpp"
#include "sicl/tta.hpp"

namespace py = pybind11;
using namespace sicl;

namespace {

using NpArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array from_numpy(const NpArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Array(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

NpArray to_numpy(const Array& a) {
  NpArray out(std::vector<py::ssize_t>(a.shape().begin(), a.shape().end()));
  std::copy(a.data().begin(), a.data().end(), out.mutable_data());
  return out;
}

style::PerturbMode parse_mode(const std::string& m) {
  if (m == "both") return style::PerturbMode::Both;
  if (m == "mu") return style::PerturbMode::MuOnly;
  if (m == "sigma") return style::PerturbMode::SigmaOnly;
  throw ArgumentError("mode must be both, mu or sigma");
}

nn::BnMode parse_bn(const std::string& m) {
  if (m == "running") return nn::BnMode::SourceRunning;
  if (m == "batch") return nn::BnMode::BatchStats;
  throw ArgumentError("bn_mode must be running or batch");
}

std::vector<metrics::Record> records(const std::vector<double>& conf, const std::vector<bool>& correct) {
  if (conf.size() != correct.size()) throw ArgumentError("confidence and correctness lengths differ");
  std::vector<metrics::Record> r(conf.size());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = {conf[i], correct[i]};
  return r;
}

py::tuple predictions(const std::vector<calibration::Prediction>& p) {
  std::vector<std::size_t> labels;
  std::vector<double> conf;
  for (const auto& x : p) {
    labels.push_back(x.label);
    conf.push_back(x.confidence);
  }
  return py::make_tuple(labels, conf);
}

experiment::ExperimentConfig config_from(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(e.what());
  }
  return experiment::config_from_json(j);
}

// Model parameters with forward, TENT and SICL entry points.
class Model {
 public:
  Model(std::size_t image_size, std::size_t num_classes, std::array<std::size_t, nn::kNumBlocks> widths,
        std::size_t tap_block, std::uint64_t seed) {
    nn::ModelConfig c;
    c.image_size = image_size;
    c.num_classes = num_classes;
    c.widths = widths;
    c.tap_block = tap_block;
    Rng rng(seed);
    state_ = nn::ModelState::initialize(c, rng);
  }

  static Model load(const std::filesystem::path& path, std::size_t image_size, std::size_t num_classes,
                    std::array<std::size_t, nn::kNumBlocks> widths, std::size_t tap_block) {
    Model m(image_size, num_classes, widths, tap_block, 0);
    m.state_ = nn::load_weights(path, m.state_.config);
    return m;
  }

  void save(const std::filesystem::path& path) const { nn::save_weights(state_, path); }

  NpArray forward(const NpArray& images, const std::string& bn_mode) const {
    nn::ForwardOptions o;
    o.bn_mode = parse_bn(bn_mode);
    return to_numpy(nn::forward(state_, from_numpy(images), o).logits);
  }

  py::dict adapt(const NpArray& images, const std::string& method, double lr) {
    tta::AdaptConfig c;
    c.method = tta::parse_method(method);
    c.lr = lr;
    const auto r = tta::adapt_step(state_, from_numpy(images), c, 0);
    py::dict d;
    d["logits"] = to_numpy(r.forward.logits);
    d["entropy_before"] = r.entropy_before;
    d["entropy_after"] = r.entropy_after;
    return d;
  }

  py::dict sicl(const NpArray& images, std::size_t n_variants, const std::string& mode, bool relaxation,
                std::uint64_t seed) const {
    nn::ForwardOptions o;
    o.bn_mode = nn::BnMode::BatchStats;
    const auto fwd = nn::forward(state_, from_numpy(images), o);
    calibration::SiclConfig c;
    c.n_variants = n_variants;
    c.mode = parse_mode(mode);
    c.relaxation = relaxation;
    const auto preds = calibration::sicl_confidence(state_, fwd, c, Rng(seed));
    std::vector<std::size_t> label;
    std::vector<double> conf, gs, gc, omega;
    for (const auto& p : preds) {
      label.push_back(p.predicted_class);
      conf.push_back(p.confidence);
      gs.push_back(p.gamma_style);
      gc.push_back(p.gamma_content);
      omega.push_back(p.omega);
    }
    py::dict d;
    d["label"] = label;
    d["confidence"] = conf;
    d["gamma_style"] = gs;
    d["gamma_content"] = gc;
    d["omega"] = omega;
    return d;
  }

  std::uint64_t digest() const { return nn::parameter_digest(state_); }

 private:
  nn::ModelState state_;
};

}  // namespace

PYBIND11_MODULE(_sicl, m) {
  m.doc() = "Style-invariance calibration for test-time adaptation (C++ core)";

  py::register_exception<ArgumentError>(m, "ArgumentError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_IOError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<AdaptationError>(m, "AdaptationError", PyExc_RuntimeError);

  m.attr("SCHEMA_VERSION") = experiment::kSchemaVersion;

  // style
  m.def("channel_stats", [](const NpArray& f) {
    const auto s = style::channel_stats(from_numpy(f));
    return py::make_tuple(to_numpy(s.mu), to_numpy(s.sigma));
  }, py::arg("f"));
  m.def("perturb_style", [](const NpArray& f, const NpArray& delta, std::uint64_t seed, const std::string& mode,
                            bool clamp_sigma) {
    const Array a = from_numpy(f);
    Rng rng(seed);
    return to_numpy(style::perturb_style(a, style::channel_stats(a), from_numpy(delta), rng,
                                         {parse_mode(mode), clamp_sigma}));
  }, py::arg("f"), py::arg("delta"), py::arg("seed") = 0, py::arg("mode") = "both", py::arg("clamp_sigma") = false);
  m.def("whiten", [](const NpArray& f) {
    const Array a = from_numpy(f);
    return to_numpy(style::whiten(a, style::channel_stats(a)));
  }, py::arg("f"));
  m.def("perturb_content", [](const NpArray& f, std::uint64_t seed) {
    const Array a = from_numpy(f);
    Rng rng(seed);
    return to_numpy(style::perturb_content(a, style::channel_stats(a), rng));
  }, py::arg("f"), py::arg("seed") = 0);
  m.def("mixstyle", [](const NpArray& a, const NpArray& b, double lambda) {
    return to_numpy(style::mixstyle(from_numpy(a), from_numpy(b), lambda));
  }, py::arg("f_a"), py::arg("f_b"), py::arg("lam"));
  m.def("gram", [](const NpArray& f) { return to_numpy(style::gram(from_numpy(f))); }, py::arg("f"));
  m.def("style_variance", [](const NpArray& a, const NpArray& b) {
    return style::style_variance(from_numpy(a), from_numpy(b));
  }, py::arg("f"), py::arg("f_variant"));

  // calibration
  m.def("msp_confidence", [](const NpArray& logits) {
    return predictions(calibration::msp_confidence(from_numpy(logits)));
  }, py::arg("logits"));
  m.def("temperature_confidence", [](const NpArray& logits, double t) {
    return predictions(calibration::temperature_confidence(from_numpy(logits), t));
  }, py::arg("logits"), py::arg("temperature"));
  m.def("fit_temperature", [](const NpArray& logits, const std::vector<int>& labels) {
    return calibration::fit_temperature(from_numpy(logits), labels);
  }, py::arg("logits"), py::arg("labels"));
  m.def("relaxed_confidence", &calibration::relaxed_confidence, py::arg("gamma_style"), py::arg("gamma_content"),
        py::arg("relaxation") = true);

  // metrics
  m.def("ece", [](const std::vector<double>& conf, const std::vector<bool>& correct, std::size_t bins) {
    return metrics::ece(records(conf, correct), bins);
  }, py::arg("confidence"), py::arg("correct"), py::arg("bins") = metrics::kDefaultBins);
  m.def("cumulative_ece", [](const std::vector<std::vector<double>>& conf,
                             const std::vector<std::vector<bool>>& correct, std::size_t bins) {
    if (conf.size() != correct.size()) throw ArgumentError("batch counts differ");
    metrics::EceAccumulator acc(bins);
    std::vector<double> out;
    for (std::size_t b = 0; b < conf.size(); ++b) out.push_back(acc.update(records(conf[b], correct[b])).cumulative_ece);
    return out;
  }, py::arg("confidence_batches"), py::arg("correct_batches"), py::arg("bins") = metrics::kDefaultBins);
  m.def("auroc", [](const std::vector<double>& id, const std::vector<double>& ood) { return metrics::auroc(id, ood); },
        py::arg("scores_id"), py::arg("scores_ood"));
  m.def("spearman", [](const std::vector<double>& x, const std::vector<double>& y) {
    const auto c = metrics::spearman(x, y);
    return py::make_tuple(c.rho, c.p_value);
  }, py::arg("x"), py::arg("y"));

  // data
  m.def("gen_styleshapes", [](std::uint64_t seed, std::size_t n_per_class, std::size_t k, std::size_t size) {
    const auto d = streams::gen_styleshapes(seed, n_per_class, k, size);
    return py::make_tuple(to_numpy(d.images), d.labels);
  }, py::arg("seed"), py::arg("n_per_class"), py::arg("num_classes") = 10, py::arg("size") = 32);
  m.def("corrupt", [](const NpArray& img, const std::string& kind, int severity, std::uint64_t seed) {
    return to_numpy(streams::corrupt(from_numpy(img), {streams::parse_corruption(kind), severity, seed}));
  }, py::arg("image"), py::arg("kind"), py::arg("severity") = 3, py::arg("seed") = 0);
  m.def("corruption_names", [] {
    std::vector<std::string> names;
    for (auto k : streams::all_corruptions()) names.push_back(streams::corruption_name(k));
    return names;
  });

  // model
  py::class_<Model>(m, "Model")
      .def(py::init<std::size_t, std::size_t, std::array<std::size_t, nn::kNumBlocks>, std::size_t, std::uint64_t>(),
           py::arg("image_size") = 16, py::arg("num_classes") = 10,
           py::arg("widths") = std::array<std::size_t, nn::kNumBlocks>{16, 32, 64}, py::arg("tap_block") = 1,
           py::arg("seed") = 0)
      .def_static("load", &Model::load, py::arg("path"), py::arg("image_size") = 16, py::arg("num_classes") = 10,
                  py::arg("widths") = std::array<std::size_t, nn::kNumBlocks>{16, 32, 64}, py::arg("tap_block") = 1)
      .def("save", &Model::save, py::arg("path"))
      .def("forward", &Model::forward, py::arg("images"), py::arg("bn_mode") = "running")
      .def("adapt", &Model::adapt, py::arg("images"), py::arg("method") = "tent", py::arg("lr") = 1e-3)
      .def("sicl", &Model::sicl, py::arg("images"), py::arg("n_variants") = 20, py::arg("mode") = "both",
           py::arg("relaxation") = true, py::arg("seed") = 0)
      .def("digest", &Model::digest);

  // experiment commands; configs and summaries travel as JSON text
  m.def("default_config", [] { return experiment::config_to_json(experiment::ExperimentConfig{}).dump(); });
  m.def("gen_data", [](const std::string& cfg, std::uint64_t seed) {
    const auto r = experiment::cmd_gen_data(config_from(cfg), seed);
    return py::make_tuple(r.counts, r.checksums);
  }, py::arg("config_json"), py::arg("seed"));
  m.def("run", [](const std::string& cfg, std::uint64_t seed) {
    py::gil_scoped_release release;
    return experiment::cmd_run(config_from(cfg), seed).summary.dump();
  }, py::arg("config_json"), py::arg("seed"));
  m.def("analyze", [](const std::string& cfg, std::uint64_t seed) {
    std::vector<py::dict> rows;
    for (const auto& r : experiment::cmd_analyze(config_from(cfg), seed)) {
      py::dict d;
      d["corruption"] = r.corruption;
      d["method"] = r.method;
      d["mean_content_variance"] = r.mean_content_variance;
      d["mean_style_variance"] = r.mean_style_variance;
      d["n"] = r.n;
      rows.push_back(d);
    }
    return rows;
  }, py::arg("config_json"), py::arg("seed"));
  m.def("report", [](const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out) {
    std::vector<py::dict> rows;
    for (const auto& r : experiment::cmd_report(dirs, out)) {
      py::dict d;
      d["scenario"] = r.scenario;
      d["calibrator"] = r.calibrator;
      d["n_seeds"] = r.n_seeds;
      d["ece_mean"] = r.ece_mean;
      d["ece_std"] = r.ece_std;
      d["accuracy_mean"] = r.accuracy_mean;
      d["accuracy_std"] = r.accuracy_std;
      rows.push_back(d);
    }
    return rows;
  }, py::arg("dirs"), py::arg("out") = std::filesystem::path{});
}
