#pragma once

// Descriptor-to-image inversion: a descriptor-to-latent initialization
// regressor, the ID / landmark / histogram loss terms, and the first-order
// optimization loop over the generator latent.

#include <Eigen/Dense>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>

#include "faceleak/adapters.hpp"
#include "faceleak/common.hpp"
#include "faceleak/probes.hpp"
#include "faceleak/soft_histogram.hpp"

namespace faceleak {

// ---------------------------------------------------------------------------
// Initialization regressor: descriptor -> latent, trained purely on
// synthetic (embed(generate(z)), z) pairs.
// ---------------------------------------------------------------------------

struct InitRegressorConfig {
  int hidden_width = 2048;  // per hidden layer; toy runs shrink this
  int epochs = 50;
  double lr = 1e-3;
  int batch = 32;
};

struct InitRegressor {
  InitRegressorConfig cfg;
  int dim_in = 0;   // descriptor
  int dim_out = 0;  // latent
  nn::Sequential net;
  std::vector<double> training_log;

  static InitRegressor build(const InitRegressorConfig& cfg, int dim_in, int dim_out,
                             std::uint64_t seed) {
    InitRegressor r;
    r.cfg = cfg;
    r.dim_in = dim_in;
    r.dim_out = dim_out;
    Rng rng(seed);
    int in = dim_in;
    for (int i = 0; i < 3; ++i) {
      auto* d = r.net.add<nn::Dense>(in, cfg.hidden_width);
      d->init_he(rng);
      r.net.add<nn::ReLU>();
      in = cfg.hidden_width;
    }
    auto* out = r.net.add<nn::Dense>(in, dim_out);
    out->init_he(rng);
    return r;
  }

  Eigen::VectorXd predict(const Eigen::VectorXd& d) const {
    if (d.size() != dim_in) throw InputError("init regressor: descriptor dimension mismatch");
    return net.forward(d).col(0);
  }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::ordered_json j;
    j["hidden_width"] = cfg.hidden_width;
    j["epochs"] = cfg.epochs;
    j["lr"] = cfg.lr;
    j["batch"] = cfg.batch;
    j["dim_in"] = dim_in;
    j["dim_out"] = dim_out;
    std::ofstream(dir / "spec.json") << j.dump(2) << "\n";
    std::ofstream os(dir / "weights.bin", std::ios::binary);
    nn::write_params(net, os);
    std::ofstream log(dir / "training_log.csv");
    log << "epoch,loss\n";
    for (std::size_t e = 0; e < training_log.size(); ++e)
      log << e + 1 << "," << format_double(training_log[e]) << "\n";
  }

  static InitRegressor load(const std::filesystem::path& dir) {
    std::ifstream is(dir / "spec.json");
    if (!is) throw DependencyError("init regressor not found: " + dir.string());
    nlohmann::json j = nlohmann::json::parse(is);
    InitRegressorConfig cfg;
    cfg.hidden_width = j.at("hidden_width").get<int>();
    cfg.epochs = j.at("epochs").get<int>();
    cfg.lr = j.at("lr").get<double>();
    cfg.batch = j.at("batch").get<int>();
    InitRegressor r = build(cfg, j.at("dim_in").get<int>(), j.at("dim_out").get<int>(), 0);
    std::ifstream w(dir / "weights.bin", std::ios::binary);
    if (!w) throw DependencyError("init regressor weights missing: " + dir.string());
    nn::read_params(r.net, w);
    return r;
  }
};

inline InitRegressor train_init_regressor(const Generator& g, const Embedder& e,
                                          int n_samples, const InitRegressorConfig& cfg,
                                          std::uint64_t seed) {
  if (n_samples <= 0) throw ConfigError("train_init_regressor: n_samples must be positive");
  Rng rng(seed);
  nn::Mat latents(g.dim_in(), n_samples);
  nn::Mat descs(e.dim_out(), n_samples);
  for (int i = 0; i < n_samples; ++i) {
    Eigen::VectorXd z = g.sample_prior(rng);
    latents.col(i) = z;
    descs.col(i) = e.embed(g.generate(z)).values;
  }

  InitRegressor r = InitRegressor::build(cfg, e.dim_out(), g.dim_in(), seed);
  auto params = r.net.params();
  nn::Adam opt(cfg.lr);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_samples));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = Eigen::Index(i);
  Rng shuffle_rng(seed ^ 0xa0761d6478bd642full);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double epoch_loss = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      std::size_t bs = std::min<std::size_t>(std::size_t(cfg.batch), order.size() - start);
      nn::Mat xb(descs.rows(), bs), tb(latents.rows(), bs);
      for (std::size_t k = 0; k < bs; ++k) {
        xb.col(Eigen::Index(k)) = descs.col(order[start + k]);
        tb.col(Eigen::Index(k)) = latents.col(order[start + k]);
      }
      nn::FwdCtx ctx;
      nn::Mat y = r.net.forward(xb, ctx);
      nn::Mat dy;
      epoch_loss += nn::mse_loss(y, tb, &dy);
      ++batches;
      nn::Grads grads = r.net.make_grads();
      r.net.backward(dy, ctx, &grads);
      opt.step(params, grads);
    }
    r.training_log.push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Inversion objective
// ---------------------------------------------------------------------------

struct InversionConfig {
  double w1 = 1.0;
  double w2 = 0.0006;
  double w3 = 0.01;
  double lr = 0.001;
  int steps = 500;
  bool use_landmarks = true;
  bool use_histogram = true;
  std::uint64_t seed = 0;
  // stopping rule: stop when relative total-loss improvement over the
  // window falls below the threshold
  int early_stop_window = 25;
  double early_stop_rel = 1e-6;

  void validate() const {
    if (w1 < 0 || w2 < 0 || w3 < 0) throw ConfigError("loss weights must be nonnegative");
    if (steps <= 0) throw ConfigError("steps must be positive");
    if (lr <= 0) throw ConfigError("learning rate must be positive");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["w1"] = w1;
    j["w2"] = w2;
    j["w3"] = w3;
    j["lr"] = lr;
    j["steps"] = steps;
    j["use_landmarks"] = use_landmarks;
    j["use_histogram"] = use_histogram;
    j["seed"] = seed;
    j["early_stop_window"] = early_stop_window;
    j["early_stop_rel"] = early_stop_rel;
    return j;
  }
};

struct LossBreakdown {
  double id = 0;
  double landmarks = 0;
  double histogram = 0;
  double total = 0;
};

struct InversionResult {
  Eigen::VectorXd latent;  // best-loss iterate
  ImageTensor image;
  std::vector<LossBreakdown> trajectory;  // index = step, entry 0 = init
  int best_step = 0;
  double wall_ms = 0;
  InversionConfig config;
};

// Bundles the models the objective needs. Probe pointers may stay null when
// the corresponding loss term is disabled.
class InversionProblem {
 public:
  InversionProblem(const Generator& g, const Embedder& e,
                   const ProbeModel* id_to_landmarks = nullptr,
                   const ProbeModel* image_to_landmarks = nullptr,
                   const ProbeModel* id_to_histogram = nullptr)
      : gen_(g), emb_(e), id_lm_(id_to_landmarks), img_lm_(image_to_landmarks),
        id_hist_(id_to_histogram) {}

  const Generator& generator() const { return gen_; }
  const Embedder& embedder() const { return emb_; }

  // Targets depend only on the descriptor; computed once per inversion.
  struct Targets {
    Eigen::VectorXd descriptor;
    std::optional<Eigen::VectorXd> landmarks136;
    std::optional<Histogram> histogram;
  };

  Targets make_targets(const Eigen::VectorXd& d, const InversionConfig& cfg) const {
    if (d.size() != emb_.dim_out()) throw InputError("descriptor dimension mismatch");
    Targets t;
    t.descriptor = d;
    if (cfg.use_landmarks && cfg.w2 > 0) {
      if (!id_lm_ || !img_lm_)
        throw DependencyError("landmark loss requires both landmark probes");
      t.landmarks136 = predict_landmarks(*id_lm_, d).to_vector();
    }
    if (cfg.use_histogram && cfg.w3 > 0) {
      if (!id_hist_) throw DependencyError("histogram loss requires the histogram probe");
      t.histogram = predict_histogram(*id_hist_, d);
    }
    return t;
  }

  // Loss terms as standalone scalars (value only).
  double id_loss(const Eigen::VectorXd& z, const Eigen::VectorXd& d) const {
    Eigen::VectorXd desc = emb_.embed(gen_.generate(z)).values;
    if (desc.size() != d.size()) throw InputError("descriptor dimension mismatch");
    return (desc - d).squaredNorm();
  }

  double landmark_loss(const Eigen::VectorXd& z, const Targets& t) const {
    if (!t.landmarks136) throw DependencyError("landmark target not prepared");
    if (!img_lm_) throw DependencyError("image-to-landmark probe missing");
    ImageTensor img = gen_.generate(z);
    Eigen::VectorXd lm = predict_landmarks_from_image(*img_lm_, img).to_vector();
    return (lm - *t.landmarks136).squaredNorm();
  }

  // Histogram bins are compared in percentage points; on raw per-pixel
  // fractions the term is orders of magnitude below the landmark term and the
  // default w3 would never act.
  static constexpr double kHistScale = 100.0;

  double histogram_loss(const Eigen::VectorXd& z, const Targets& t) const {
    if (!t.histogram) throw DependencyError("histogram target not prepared");
    Histogram h = soft_image_histogram(gen_.generate(z), t.histogram->spec);
    return (kHistScale * (h.bins - t.histogram->bins)).squaredNorm();
  }

  // Full objective with analytic gradient w.r.t. z. One generator pass is
  // shared by all enabled terms.
  double loss_and_grad(const Eigen::VectorXd& z, const Targets& t,
                       const InversionConfig& cfg, Eigen::VectorXd* grad,
                       LossBreakdown* breakdown) const {
    auto gen_tape = gen_.generate_tape(z);
    const ImageTensor& img = gen_tape->image();
    Eigen::VectorXd dimg = Eigen::VectorXd::Zero(img.data.size());
    LossBreakdown b;

    {
      auto emb_tape = emb_.embed_tape(img);
      Eigen::VectorXd diff = emb_tape->descriptor() - t.descriptor;
      b.id = diff.squaredNorm();
      if (grad && cfg.w1 > 0) dimg += cfg.w1 * emb_tape->backward(2.0 * diff);
    }
    if (t.landmarks136) {
      ImageProbeTape lm_tape = landmarks_from_image_tape(*img_lm_, img);
      Eigen::VectorXd diff = lm_tape.landmarks136 - *t.landmarks136;
      b.landmarks = diff.squaredNorm();
      if (grad) dimg += cfg.w2 * lm_tape.backward(2.0 * diff);
    }
    if (t.histogram) {
      Histogram h = soft_image_histogram(img, t.histogram->spec);
      Eigen::MatrixXd diff = kHistScale * (h.bins - t.histogram->bins);
      b.histogram = diff.squaredNorm();
      if (grad)
        dimg += cfg.w3 * soft_image_histogram_backward(img, t.histogram->spec,
                                                       2.0 * kHistScale * diff);
    }
    b.total = cfg.w1 * b.id + cfg.w2 * b.landmarks + cfg.w3 * b.histogram;
    if (grad) *grad = gen_tape->backward(dimg);
    if (breakdown) *breakdown = b;
    return b.total;
  }

  InversionResult invert(const Eigen::VectorXd& d, const InversionConfig& cfg,
                         const InitRegressor& init) const {
    cfg.validate();
    auto t0 = std::chrono::steady_clock::now();
    Targets targets = make_targets(d, cfg);
    Eigen::VectorXd z = init.predict(d);

    // Adam state on the latent
    Eigen::VectorXd m = Eigen::VectorXd::Zero(z.size());
    Eigen::VectorXd v = Eigen::VectorXd::Zero(z.size());
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    InversionResult res;
    res.config = cfg;
    double best = std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_z = z;

    for (int step = 0; step <= cfg.steps; ++step) {
      Eigen::VectorXd grad;
      LossBreakdown b;
      double total = loss_and_grad(z, targets, cfg,
                                   step < cfg.steps ? &grad : nullptr, &b);
      if (!std::isfinite(total)) {
        std::ostringstream diag;
        diag << "inversion diverged at step " << step << "; last finite total loss "
             << (res.trajectory.empty() ? 0.0 : res.trajectory.back().total)
             << " at step " << int(res.trajectory.size()) - 1;
        throw DivergenceError(diag.str());
      }
      res.trajectory.push_back(b);
      if (total < best) {
        best = total;
        best_z = z;
        res.best_step = step;
      }
      if (step == cfg.steps) break;
      // early stop on stalled relative improvement
      if (cfg.early_stop_window > 0 &&
          int(res.trajectory.size()) > cfg.early_stop_window) {
        double prev =
            res.trajectory[res.trajectory.size() - 1 - std::size_t(cfg.early_stop_window)]
                .total;
        if (prev > 0 && (prev - total) / prev < cfg.early_stop_rel) break;
      }
      m = b1 * m + (1 - b1) * grad;
      v = b2 * v.array().matrix() +
          (1 - b2) * Eigen::VectorXd(grad.array().square().matrix());
      double bc1 = 1 - std::pow(b1, step + 1), bc2 = 1 - std::pow(b2, step + 1);
      z.array() -= cfg.lr * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + eps);
    }

    res.latent = best_z;
    res.image = gen_.generate(best_z);
    res.wall_ms = std::chrono::duration<double, std::milli>(
                      std::chrono::steady_clock::now() - t0)
                      .count();
    return res;
  }

 private:
  const Generator& gen_;
  const Embedder& emb_;
  const ProbeModel* id_lm_;
  const ProbeModel* img_lm_;
  const ProbeModel* id_hist_;
};

inline void save_inversion_result(const InversionResult& r,
                                  const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_png(r.image, dir / "result.png");
  {
    std::ofstream os(dir / "trajectory.csv");
    os << "step,L_ID,L_lm,L_hist,total\n";
    for (std::size_t i = 0; i < r.trajectory.size(); ++i) {
      const auto& b = r.trajectory[i];
      os << i << "," << format_double(b.id) << "," << format_double(b.landmarks)
         << "," << format_double(b.histogram) << "," << format_double(b.total) << "\n";
    }
  }
  std::ofstream(dir / "config.json") << r.config.to_json().dump(2) << "\n";
  {
    nlohmann::ordered_json j;
    std::vector<double> z(r.latent.data(), r.latent.data() + r.latent.size());
    j["latent"] = z;
    j["best_step"] = r.best_step;
    std::ofstream(dir / "latent.json") << j.dump(2) << "\n";
  }
}

}  // namespace faceleak
