#pragma once

// Probes: small regressors trained to predict non-identity targets (binary
// attributes, landmarks, color histograms) from descriptors alone, plus the
// conventional image-to-landmark CNN used at inversion time. Above-baseline
// probe accuracy is the evidence of leakage.

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "faceleak/common.hpp"
#include "faceleak/image.hpp"
#include "faceleak/landmarks.hpp"
#include "faceleak/metrics.hpp"
#include "faceleak/nn.hpp"
#include "faceleak/soft_histogram.hpp"
#include "faceleak/toy_face.hpp"

namespace faceleak {

enum class ProbeKind { Binary, LandmarksFromId, HistogramFromId, LandmarksFromImage };

inline std::string probe_kind_name(ProbeKind k) {
  switch (k) {
    case ProbeKind::Binary: return "binary";
    case ProbeKind::LandmarksFromId: return "landmarks_from_id";
    case ProbeKind::HistogramFromId: return "histogram_from_id";
    case ProbeKind::LandmarksFromImage: return "landmarks_from_image";
  }
  throw InputError("unknown probe kind");
}

inline ProbeKind probe_kind_from_name(const std::string& s) {
  if (s == "binary") return ProbeKind::Binary;
  if (s == "landmarks_from_id") return ProbeKind::LandmarksFromId;
  if (s == "histogram_from_id") return ProbeKind::HistogramFromId;
  if (s == "landmarks_from_image") return ProbeKind::LandmarksFromImage;
  throw ParseError("unknown probe kind: " + s);
}

struct ProbeSpec {
  ProbeKind kind = ProbeKind::Binary;
  int input_dim = 0;              // descriptor dim; 3*224*224 for the image CNN
  std::vector<int> hidden;        // fully connected hidden widths
  std::vector<int> conv_channels; // image CNN only
  int output_dim = 0;
  std::string optimizer = "adam";
  double lr = 1e-3;
  int batch = 32;
  int epochs = 20;
  HistogramSpec hist;             // histogram head binning

  // Default recipes, one per probe kind.
  static ProbeSpec defaults(ProbeKind kind, int input_dim) {
    ProbeSpec s;
    s.kind = kind;
    s.input_dim = input_dim;
    switch (kind) {
      case ProbeKind::Binary:
        s.hidden = {256, 256, 256};
        s.output_dim = 1;
        s.optimizer = "adam";
        s.lr = 1e-3;
        s.batch = 32;
        s.epochs = 20;
        break;
      case ProbeKind::HistogramFromId:
        s.hidden = {8, 8};
        s.output_dim = 30;
        s.optimizer = "adam";
        s.lr = 1e-6;
        s.batch = 32;
        s.epochs = 20;
        break;
      case ProbeKind::LandmarksFromId:
        s.hidden = {256, 256};
        s.output_dim = 136;
        s.optimizer = "sgd";
        s.lr = 1e-3;
        s.batch = 16;
        s.epochs = 150;
        break;
      case ProbeKind::LandmarksFromImage:
        s.input_dim = 3 * toy::kImageRes * toy::kImageRes;
        s.conv_channels = {16, 32, 64, 64, 128};
        s.hidden = {256};
        s.output_dim = 136;
        s.optimizer = "sgd";
        s.lr = 1e-3;
        s.batch = 16;
        s.epochs = 150;
        break;
    }
    return s;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = probe_kind_name(kind);
    j["input_dim"] = input_dim;
    j["hidden"] = hidden;
    j["conv_channels"] = conv_channels;
    j["output_dim"] = output_dim;
    j["optimizer"] = optimizer;
    j["lr"] = lr;
    j["batch"] = batch;
    j["epochs"] = epochs;
    j["hist"] = {{"min", hist.min}, {"max", hist.max}, {"n", hist.n},
                 {"sigma", hist.sigma}};
    return j;
  }

  static ProbeSpec from_json(const nlohmann::json& j) {
    ProbeSpec s;
    s.kind = probe_kind_from_name(j.at("kind").get<std::string>());
    s.input_dim = j.at("input_dim").get<int>();
    s.hidden = j.at("hidden").get<std::vector<int>>();
    s.conv_channels = j.value("conv_channels", std::vector<int>{});
    s.output_dim = j.at("output_dim").get<int>();
    s.optimizer = j.at("optimizer").get<std::string>();
    s.lr = j.at("lr").get<double>();
    s.batch = j.at("batch").get<int>();
    s.epochs = j.at("epochs").get<int>();
    if (j.contains("hist")) {
      s.hist.min = j["hist"].at("min").get<double>();
      s.hist.max = j["hist"].at("max").get<double>();
      s.hist.n = j["hist"].at("n").get<int>();
      s.hist.sigma = j["hist"].at("sigma").get<double>();
    }
    return s;
  }
};

struct ProbeModel {
  ProbeSpec spec;
  nn::Sequential net;
  std::vector<double> training_log;  // mean loss per epoch
  std::string data_fingerprint;

  static ProbeModel build(const ProbeSpec& spec, std::uint64_t seed) {
    ProbeModel m;
    m.spec = spec;
    Rng rng(seed);
    if (spec.kind == ProbeKind::LandmarksFromImage) {
      int h = toy::kImageRes, w = toy::kImageRes, cin = 3;
      for (int cout : spec.conv_channels) {
        auto* conv = m.net.add<nn::Conv2d>(cin, h, w, cout);
        conv->init_he(rng);
        m.net.add<nn::ReLU>();
        h = conv->out_h();
        w = conv->out_w();
        cin = cout;
      }
      int flat = cin * h * w;
      for (int width : spec.hidden) {
        auto* d = m.net.add<nn::Dense>(flat, width);
        d->init_he(rng);
        m.net.add<nn::ReLU>();
        flat = width;
      }
      auto* out = m.net.add<nn::Dense>(flat, spec.output_dim);
      out->init_he(rng);
    } else {
      int in = spec.input_dim;
      for (int width : spec.hidden) {
        auto* d = m.net.add<nn::Dense>(in, width);
        d->init_he(rng);
        m.net.add<nn::ReLU>();
        in = width;
      }
      auto* out = m.net.add<nn::Dense>(in, spec.output_dim);
      out->init_he(rng);
      if (spec.kind == ProbeKind::Binary) m.net.add<nn::Sigmoid>();
      if (spec.kind == ProbeKind::HistogramFromId)
        m.net.add<nn::GroupSoftmax>(spec.hist.n);
    }
    return m;
  }
};

// Loss dispatch shared by training and the per-epoch log.
inline double probe_loss(const ProbeSpec& spec, const nn::Mat& y, const nn::Mat& t,
                         nn::Mat* dy) {
  return spec.kind == ProbeKind::Binary ? nn::bce_loss(y, t, dy)
                                        : nn::mse_loss(y, t, dy);
}

// Trains a probe on (input column, target column) pairs. Inputs are
// descriptors, or flattened pixels for the image CNN.
inline ProbeModel train_probe(const ProbeSpec& spec, const nn::Mat& x, const nn::Mat& t,
                              std::uint64_t seed, const std::string& data_fingerprint) {
  if (x.cols() == 0) throw InputError("train_probe: empty dataset");
  if (x.cols() != t.cols()) throw ConfigError("train_probe: inputs/targets count mismatch");
  if (x.rows() != spec.input_dim)
    throw ConfigError("train_probe: input dimension does not match spec");
  if (t.rows() != spec.output_dim)
    throw ConfigError("train_probe: target dimension does not match spec.kind");

  ProbeModel m = ProbeModel::build(spec, seed);
  m.data_fingerprint = data_fingerprint;
  std::unique_ptr<nn::Optimizer> opt;
  if (spec.optimizer == "adam")
    opt = std::make_unique<nn::Adam>(spec.lr);
  else if (spec.optimizer == "sgd")
    opt = std::make_unique<nn::Sgd>(spec.lr);
  else
    throw ConfigError("unknown optimizer: " + spec.optimizer);

  auto params = m.net.params();
  Rng rng(seed ^ 0xd1b54a32d192ed03ull);
  std::vector<Eigen::Index> order(std::size_t(x.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = Eigen::Index(i);

  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(spec.batch)) {
      std::size_t bs = std::min<std::size_t>(std::size_t(spec.batch), order.size() - start);
      nn::Mat xb(x.rows(), bs), tb(t.rows(), bs);
      for (std::size_t k = 0; k < bs; ++k) {
        xb.col(Eigen::Index(k)) = x.col(order[start + k]);
        tb.col(Eigen::Index(k)) = t.col(order[start + k]);
      }
      nn::FwdCtx ctx;
      nn::Mat y = m.net.forward(xb, ctx);
      nn::Mat dy;
      epoch_loss += probe_loss(spec, y, tb, &dy);
      ++batches;
      nn::Grads g = m.net.make_grads();
      m.net.backward(dy, ctx, &g);
      opt->step(params, g);
    }
    m.training_log.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return m;
}

// ---- prediction heads ----

inline Eigen::VectorXd predict(const ProbeModel& m, const Eigen::VectorXd& d) {
  if (m.spec.kind == ProbeKind::LandmarksFromImage)
    throw ConfigError("use predict_landmarks_from_image for image probes");
  if (d.size() != m.spec.input_dim) throw InputError("descriptor dimension mismatch");
  return m.net.forward(d).col(0);
}

inline double predict_binary(const ProbeModel& m, const Eigen::VectorXd& d) {
  if (m.spec.kind != ProbeKind::Binary) throw ConfigError("probe is not a binary probe");
  return predict(m, d)[0];
}

inline LandmarkSet predict_landmarks(const ProbeModel& m, const Eigen::VectorXd& d) {
  if (m.spec.kind != ProbeKind::LandmarksFromId)
    throw ConfigError("probe is not an ID-to-landmark probe");
  return LandmarkSet::from_vector(predict(m, d));
}

inline Histogram predict_histogram(const ProbeModel& m, const Eigen::VectorXd& d) {
  if (m.spec.kind != ProbeKind::HistogramFromId)
    throw ConfigError("probe is not an ID-to-histogram probe");
  Eigen::VectorXd y = predict(m, d);
  Histogram h;
  h.spec = m.spec.hist;
  h.bins.resize(3, h.spec.n);
  for (int c = 0; c < 3; ++c)
    h.bins.row(c) = y.segment(Eigen::Index(c) * h.spec.n, h.spec.n).transpose();
  h.normalized = true;  // softmax rows by construction
  return h;
}

inline LandmarkSet predict_landmarks_from_image(const ProbeModel& m,
                                                const ImageTensor& img) {
  if (m.spec.kind != ProbeKind::LandmarksFromImage)
    throw ConfigError("probe is not an image-to-landmark probe");
  if (img.h != toy::kImageRes || img.w != toy::kImageRes)
    throw InputError("image probe expects a 224x224 input");
  return LandmarkSet::from_vector(m.net.forward(img.to_unit().data).col(0));
}

// Forward pass of the image CNN that keeps its activations so a loss can be
// pulled back to the pixels (the landmark-loss path at inversion time).
struct ImageProbeTape {
  Eigen::VectorXd landmarks136;
  nn::FwdCtx ctx;
  const ProbeModel* model = nullptr;

  Eigen::VectorXd backward(const Eigen::VectorXd& dlm) const {
    return model->net.backward(dlm, ctx, nullptr).col(0);
  }
};

inline ImageProbeTape landmarks_from_image_tape(const ProbeModel& m,
                                                const ImageTensor& img) {
  if (m.spec.kind != ProbeKind::LandmarksFromImage)
    throw ConfigError("probe is not an image-to-landmark probe");
  ImageProbeTape tape;
  tape.model = &m;
  tape.landmarks136 = m.net.forward(img.to_unit().data, tape.ctx).col(0);
  return tape;
}

// ---- baselines and evaluation ----

// Constant predictors fit on training targets: majority class, mean
// landmarks, or mean histogram.
struct BaselineStats {
  ProbeKind kind;
  Eigen::VectorXd mean_target;   // landmarks / histogram baselines
  double majority_fraction = 0;  // binary baseline
  bool majority_label = false;
};

inline BaselineStats fit_baseline(ProbeKind kind, const nn::Mat& train_targets) {
  if (train_targets.cols() == 0) throw InputError("fit_baseline: empty training targets");
  BaselineStats b;
  b.kind = kind;
  if (kind == ProbeKind::Binary) {
    double pos = train_targets.row(0).sum() / double(train_targets.cols());
    b.majority_label = pos >= 0.5;
    b.majority_fraction = b.majority_label ? pos : 1.0 - pos;
  } else {
    b.mean_target = train_targets.rowwise().mean();
  }
  return b;
}

inline Eigen::VectorXd baseline_predict(const BaselineStats& b) {
  if (b.kind == ProbeKind::Binary) {
    Eigen::VectorXd v(1);
    v[0] = b.majority_label ? 1.0 : 0.0;
    return v;
  }
  return b.mean_target;
}

struct ProbeMetrics {
  ProbeKind kind;
  double value = 0;     // accuracy % | landmark err % | mean EMD
  double baseline = 0;  // same measure for the constant baseline
  int n_test = 0;
  std::uint64_t seed = 0;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = probe_kind_name(kind);
    const char* key = kind == ProbeKind::Binary ? "accuracy_pct"
                      : kind == ProbeKind::HistogramFromId ? "emd"
                                                           : "landmark_err_pct";
    j[key] = value;
    j["baseline"] = baseline;
    j["n_test"] = n_test;
    j["seed"] = seed;
    return j;
  }
};

inline double binary_accuracy_pct(const Eigen::VectorXd& probs,
                                  const Eigen::VectorXd& labels) {
  int correct = 0;
  for (Eigen::Index i = 0; i < probs.size(); ++i)
    correct += ((probs[i] >= 0.5) == (labels[i] >= 0.5)) ? 1 : 0;
  return 100.0 * double(correct) / double(probs.size());
}

// Test inputs are descriptor columns (or pixel columns for the image CNN).
// Landmark evaluation needs the ground-truth interocular distance, hence
// the full target vectors.
inline ProbeMetrics evaluate_probe(const ProbeModel& m, const nn::Mat& x,
                                   const nn::Mat& t, const std::string& test_fingerprint,
                                   const BaselineStats& baseline,
                                   std::uint64_t seed = 0) {
  if (!m.data_fingerprint.empty() && m.data_fingerprint == test_fingerprint)
    throw UsageError("evaluation data fingerprint equals the training fingerprint");
  if (x.cols() == 0) throw InputError("evaluate_probe: empty test set");
  nn::Mat y = m.net.forward(x);
  ProbeMetrics r;
  r.kind = m.spec.kind;
  r.n_test = int(x.cols());
  r.seed = seed;
  switch (m.spec.kind) {
    case ProbeKind::Binary: {
      r.value = binary_accuracy_pct(y.row(0).transpose(), t.row(0).transpose());
      Eigen::VectorXd bl = Eigen::VectorXd::Constant(
          t.cols(), baseline.majority_label ? 1.0 : 0.0);
      r.baseline = binary_accuracy_pct(bl, t.row(0).transpose());
      break;
    }
    case ProbeKind::LandmarksFromId:
    case ProbeKind::LandmarksFromImage: {
      double err = 0, berr = 0;
      LandmarkSet bl = LandmarkSet::from_vector(baseline.mean_target);
      for (Eigen::Index i = 0; i < x.cols(); ++i) {
        LandmarkSet gt = LandmarkSet::from_vector(t.col(i));
        err += landmark_error(LandmarkSet::from_vector(y.col(i)), gt);
        berr += landmark_error(bl, gt);
      }
      r.value = err / double(x.cols());
      r.baseline = berr / double(x.cols());
      break;
    }
    case ProbeKind::HistogramFromId: {
      double e = 0, be = 0;
      auto unpack = [&](const Eigen::VectorXd& v) {
        Histogram h;
        h.spec = m.spec.hist;
        h.bins.resize(3, h.spec.n);
        for (int c = 0; c < 3; ++c)
          h.bins.row(c) = v.segment(Eigen::Index(c) * h.spec.n, h.spec.n).transpose();
        h.normalized = true;
        return h;
      };
      Histogram bl = unpack(baseline.mean_target);
      for (Eigen::Index i = 0; i < x.cols(); ++i) {
        Histogram gt = unpack(t.col(i));
        e += emd(unpack(y.col(i)), gt);
        be += emd(bl, gt);
      }
      r.value = e / double(x.cols());
      r.baseline = be / double(x.cols());
      break;
    }
  }
  return r;
}

// ---- persistence: spec.json + weights.bin + training_log.csv (+ metrics) ----

inline void save_probe(const ProbeModel& m, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "spec.json");
    nlohmann::ordered_json j = m.spec.to_json();
    j["data_fingerprint"] = m.data_fingerprint;
    os << j.dump(2) << "\n";
  }
  {
    std::ofstream os(dir / "weights.bin", std::ios::binary);
    nn::write_params(m.net, os);
  }
  {
    std::ofstream os(dir / "training_log.csv");
    os << "epoch,loss\n";
    for (std::size_t e = 0; e < m.training_log.size(); ++e)
      os << e + 1 << "," << format_double(m.training_log[e]) << "\n";
  }
}

inline ProbeModel load_probe(const std::filesystem::path& dir) {
  std::ifstream spec_is(dir / "spec.json");
  if (!spec_is) throw DependencyError("probe not found: " + (dir / "spec.json").string());
  nlohmann::json j = nlohmann::json::parse(spec_is);
  ProbeModel m = ProbeModel::build(ProbeSpec::from_json(j), 0);
  m.data_fingerprint = j.value("data_fingerprint", "");
  std::ifstream w(dir / "weights.bin", std::ios::binary);
  if (!w) throw DependencyError("probe weights missing: " + (dir / "weights.bin").string());
  nn::read_params(m.net, w);
  return m;
}

// Normalized hard histogram of an image, the ground-truth label of the
// histogram probe.
inline Eigen::VectorXd image_histogram_target(const ImageTensor& img,
                                              const HistogramSpec& spec) {
  ImageTensor b = img.to_byte();
  std::size_t mpx = b.pixel_count();
  Eigen::VectorXd t(3 * spec.n);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd channel = b.data.segment(Eigen::Index(c) * mpx, Eigen::Index(mpx));
    t.segment(Eigen::Index(c) * spec.n, spec.n) =
        hard_histogram(channel, spec) / double(mpx);
  }
  return t;
}

}  // namespace faceleak
