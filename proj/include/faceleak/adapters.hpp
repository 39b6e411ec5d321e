#pragma once

// Embedder/Generator abstractions plus the desk-scale toy implementations.
// Real pretrained models plug in behind the same two interfaces; the toy
// stack keeps the whole test suite self-contained.

#include <Eigen/Dense>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "faceleak/common.hpp"
#include "faceleak/image.hpp"
#include "faceleak/nn.hpp"
#include "faceleak/toy_face.hpp"

namespace faceleak {

struct Descriptor {
  Eigen::VectorXd values;
  std::string source_tag;
};

// Tape objects capture one forward pass so gradients can be pulled back
// through it later. Each tape is independent; models stay const.
class EmbedderTape {
 public:
  virtual ~EmbedderTape() = default;
  virtual const Eigen::VectorXd& descriptor() const = 0;
  // d(loss)/d(pixels) of the embedded image, given d(loss)/d(descriptor).
  virtual Eigen::VectorXd backward(const Eigen::VectorXd& ddesc) const = 0;
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual int dim_out() const = 0;
  virtual std::string name() const = 0;
  virtual std::unique_ptr<EmbedderTape> embed_tape(const ImageTensor& img) const = 0;

  Descriptor embed(const ImageTensor& img) const {
    return Descriptor{embed_tape(img)->descriptor(), name()};
  }
};

class GeneratorTape {
 public:
  virtual ~GeneratorTape() = default;
  virtual const ImageTensor& image() const = 0;
  // d(loss)/d(latent) given d(loss)/d(pixels).
  virtual Eigen::VectorXd backward(const Eigen::VectorXd& dimage) const = 0;
};

class Generator {
 public:
  virtual ~Generator() = default;
  virtual int dim_in() const = 0;
  virtual std::string name() const = 0;
  virtual std::unique_ptr<GeneratorTape> generate_tape(const Eigen::VectorXd& z) const = 0;
  // One draw from the generator's documented latent prior.
  virtual Eigen::VectorXd sample_prior(Rng& rng) const = 0;

  ImageTensor generate(const Eigen::VectorXd& z) const {
    return generate_tape(z)->image();
  }
};

inline Eigen::VectorXd sample_latent(const Generator& g, std::uint64_t seed) {
  Rng rng(seed);
  return g.sample_prior(rng);
}

inline void check_embedder_input(const ImageTensor& img) {
  if (img.h != toy::kImageRes || img.w != toy::kImageRes)
    throw InputError("embedder input must be 224x224");
  if (!img.finite()) throw InputError("embedder input has non-finite pixels");
}

// ---------------------------------------------------------------------------
// Toy generator: standard normal latent, squashed into renderer parameter
// bounds, rendered analytically. Latent dimension 12.
// ---------------------------------------------------------------------------

class ToyGenerator : public Generator {
 public:
  int dim_in() const override { return toy::kParamCount; }
  std::string name() const override { return "toy_generator"; }

  Eigen::VectorXd sample_prior(Rng& rng) const override {
    Eigen::VectorXd z(toy::kParamCount);
    for (int i = 0; i < toy::kParamCount; ++i) z[i] = rng.normal();
    return z;
  }

  // latent -> bounded renderer parameters
  static toy::ToyFaceParams latent_to_params(const Eigen::VectorXd& z) {
    Eigen::VectorXd p(toy::kParamCount);
    for (int i = 0; i < toy::kParamCount; ++i)
      p[i] = toy::param_lo()[i] +
             (toy::param_hi()[i] - toy::param_lo()[i]) * sigmoid(z[i]);
    return toy::ToyFaceParams::from_vector(p);
  }

  // Ground-truth landmarks of the face a latent renders; evaluation only.
  static Eigen::Matrix<double, toy::kLandmarkCount, 2> latent_landmarks(
      const Eigen::VectorXd& z) {
    return toy::toy_landmarks(latent_to_params(z));
  }

  std::unique_ptr<GeneratorTape> generate_tape(const Eigen::VectorXd& z) const override;

 private:
  class Tape;
};

class ToyGenerator::Tape : public GeneratorTape {
 public:
  explicit Tape(const Eigen::VectorXd& z) {
    if (z.size() != toy::kParamCount) throw InputError("toy latent must have 12 entries");
    if (!z.allFinite()) throw InputError("latent contains non-finite values");
    // squash into bounds with seeded duals, then render with the tangents
    std::array<toy::Dual, toy::kParamCount> p;
    for (int i = 0; i < toy::kParamCount; ++i) {
      toy::Dual zi = toy::Dual::seed(z[i], i);
      double lo = toy::param_lo()[i], hi = toy::param_hi()[i];
      p[i] = toy::Dual(lo) + toy::Dual(hi - lo) * toy::smooth_step(zi);
    }
    constexpr int res = toy::kNativeRes;
    std::vector<toy::Dual> out(3 * res * res);
    toy::render_native<toy::Dual>(p.data(), res, out.data());
    Eigen::VectorXd native(3 * res * res);
    jac_.resize(3 * res * res, toy::kParamCount);
    for (std::size_t i = 0; i < out.size(); ++i) {
      native[Eigen::Index(i)] = out[i].v;
      jac_.row(Eigen::Index(i)) = out[i].d.transpose();
    }
    image_ = toy::upsample_nearest(native, res, toy::kUpsample);
  }

  const ImageTensor& image() const override { return image_; }

  Eigen::VectorXd backward(const Eigen::VectorXd& dimage) const override {
    if (dimage.size() != image_.data.size()) throw InputError("image gradient size mismatch");
    constexpr int res = toy::kNativeRes;
    constexpr int f = toy::kUpsample;
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(3 * res * res);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < res * f; ++y)
        for (int x = 0; x < res * f; ++x)
          pooled[(std::size_t(c) * res + y / f) * res + x / f] +=
              dimage[(std::size_t(c) * res * f + y) * (res * f) + x];
    return jac_.transpose() * pooled;
  }

 private:
  ImageTensor image_;
  Eigen::MatrixXd jac_;  // native pixels × latent
};

inline std::unique_ptr<GeneratorTape> ToyGenerator::generate_tape(
    const Eigen::VectorXd& z) const {
  return std::make_unique<Tape>(z);
}

// ---------------------------------------------------------------------------
// Toy embedder: avg-pool + two dense layers, L2-normalized descriptor.
// Trained with a classification head over toy identities.
// ---------------------------------------------------------------------------

struct ToyEmbedderConfig {
  int desc_dim = 128;
  int hidden = 256;
  int pool = 16;
  int epochs = 30;
  double lr = 1e-3;
  int batch = 32;
};

class ToyEmbedder : public Embedder {
 public:
  explicit ToyEmbedder(const ToyEmbedderConfig& cfg, std::uint64_t seed)
      : cfg_(cfg) {
    int pooled = 3 * (toy::kImageRes / cfg.pool) * (toy::kImageRes / cfg.pool);
    trunk_.add<nn::AvgPool2d>(3, toy::kImageRes, toy::kImageRes, cfg.pool);
    auto* d1 = trunk_.add<nn::Dense>(pooled, cfg.hidden);
    trunk_.add<nn::ReLU>();
    auto* d2 = trunk_.add<nn::Dense>(cfg.hidden, cfg.desc_dim);
    Rng rng(seed);
    d1->init_he(rng);
    d2->init_he(rng);
  }

  int dim_out() const override { return cfg_.desc_dim; }
  std::string name() const override { return "toy_embedder"; }

  std::unique_ptr<EmbedderTape> embed_tape(const ImageTensor& img) const override {
    check_embedder_input(img);
    return std::make_unique<Tape>(*this, img.to_unit());
  }

  nn::Sequential& trunk() { return trunk_; }
  const nn::Sequential& trunk() const { return trunk_; }
  const ToyEmbedderConfig& config() const { return cfg_; }
  const std::vector<double>& training_log() const { return training_log_; }
  std::vector<double>& training_log() { return training_log_; }

  void save(std::ostream& os) const { nn::write_params(trunk_, os); }
  void load(std::istream& is) { nn::read_params(trunk_, is); }

 private:
  class Tape : public EmbedderTape {
   public:
    Tape(const ToyEmbedder& e, const ImageTensor& img) : owner_(e) {
      raw_ = owner_.trunk_.forward(img.data, ctx_);
      norm_ = raw_.col(0).norm();
      desc_ = norm_ > 1e-12 ? Eigen::VectorXd(raw_.col(0) / norm_)
                            : Eigen::VectorXd(raw_.col(0));
    }
    const Eigen::VectorXd& descriptor() const override { return desc_; }
    Eigen::VectorXd backward(const Eigen::VectorXd& ddesc) const override {
      if (ddesc.size() != desc_.size()) throw InputError("descriptor gradient size mismatch");
      Eigen::VectorXd draw = ddesc;
      if (norm_ > 1e-12) draw = (ddesc - desc_ * desc_.dot(ddesc)) / norm_;
      return owner_.trunk_.backward(draw, ctx_, nullptr).col(0);
    }

   private:
    const ToyEmbedder& owner_;
    nn::FwdCtx ctx_;
    nn::Mat raw_;
    Eigen::VectorXd desc_;
    double norm_ = 0;
  };

  ToyEmbedderConfig cfg_;
  nn::Sequential trunk_;
  std::vector<double> training_log_;
};

// Descriptors for a batch of images, one column per image.
inline Eigen::MatrixXd embed_batch(const Embedder& e, const std::vector<ImageTensor>& imgs) {
  Eigen::MatrixXd out(e.dim_out(), Eigen::Index(imgs.size()));
  for (std::size_t i = 0; i < imgs.size(); ++i)
    out.col(Eigen::Index(i)) = e.embed(imgs[i]).values;
  return out;
}

// Trains the toy embedder as an identity classifier; the descriptor is the
// normalized penultimate feature. Recommended scale for the verification
// contract: >= 50 identities with >= 10 varied renders each.
inline std::unique_ptr<ToyEmbedder> train_toy_embedder(
    const std::vector<ImageTensor>& images, const std::vector<int>& identity_ids,
    const ToyEmbedderConfig& cfg, std::uint64_t seed) {
  if (images.empty()) throw InputError("empty training set");
  if (images.size() != identity_ids.size())
    throw InputError("images/labels length mismatch");
  int n_ids = 0;
  for (int id : identity_ids) {
    if (id < 0) throw ConfigError("identity ids must be nonnegative");
    n_ids = std::max(n_ids, id + 1);
  }
  if (n_ids < 2) throw ConfigError("need at least two distinct toy identities");

  auto embedder = std::make_unique<ToyEmbedder>(cfg, seed);
  nn::Sequential& trunk = embedder->trunk();
  nn::Dense head(cfg.desc_dim, n_ids);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  head.init_he(rng);

  std::vector<nn::Mat*> params = trunk.params();
  params.push_back(&head.weight);
  params.push_back(&head.bias);
  nn::Adam opt(cfg.lr);

  std::vector<std::size_t> order(images.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += std::size_t(cfg.batch)) {
      std::size_t bs = std::min<std::size_t>(cfg.batch, order.size() - start);
      nn::Mat x(images[0].data.size(), bs);
      std::vector<int> labels(bs);
      for (std::size_t k = 0; k < bs; ++k) {
        const ImageTensor& img = images[order[start + k]];
        check_embedder_input(img);
        x.col(Eigen::Index(k)) =
            img.range == RangeTag::Unit ? img.data : Eigen::VectorXd(img.data / 255.0);
        labels[k] = identity_ids[order[start + k]];
      }
      nn::FwdCtx ctx;
      nn::Mat feat = trunk.forward(x, ctx);
      nn::Mat head_cache;
      nn::Mat logits = head.forward(feat, head_cache);
      nn::Mat dlogits;
      epoch_loss += nn::softmax_ce_loss(logits, labels, &dlogits);
      ++batches;

      nn::Grads tg = trunk.make_grads();
      nn::Grads hg;
      hg.g.push_back(nn::Mat::Zero(head.weight.rows(), head.weight.cols()));
      hg.g.push_back(nn::Mat::Zero(head.bias.rows(), head.bias.cols()));
      std::size_t hidx = 0;
      nn::Mat dfeat = head.backward(dlogits, head_cache, &hg, &hidx);
      trunk.backward(dfeat, ctx, &tg);

      nn::Grads all = tg;
      all.g.push_back(hg.g[0]);
      all.g.push_back(hg.g[1]);
      opt.step(params, all);
    }
    embedder->training_log().push_back(batches > 0 ? epoch_loss / batches : 0.0);
  }
  return embedder;
}

// Same/different verification accuracy at the best threshold over sampled
// cosine similarities; the held-out check behind the toy embedder contract.
inline double verification_accuracy(const Embedder& e,
                                    const std::vector<ImageTensor>& images,
                                    const std::vector<int>& identity_ids,
                                    int n_pairs, std::uint64_t seed) {
  if (images.size() < 2) throw InputError("need at least two images");
  Eigen::MatrixXd d = embed_batch(e, images);
  Rng rng(seed);
  std::vector<std::pair<double, bool>> scored;  // (cosine, same-identity)
  for (int k = 0; k < n_pairs; ++k) {
    std::size_t i = std::size_t(rng.below(images.size()));
    std::size_t j = std::size_t(rng.below(images.size()));
    while (j == i) j = std::size_t(rng.below(images.size()));
    double c = d.col(Eigen::Index(i)).dot(d.col(Eigen::Index(j))) /
               (d.col(Eigen::Index(i)).norm() * d.col(Eigen::Index(j)).norm());
    scored.emplace_back(c, identity_ids[i] == identity_ids[j]);
  }
  std::sort(scored.begin(), scored.end());
  // sweep: pairs above the threshold are predicted "same"
  int total_same = 0;
  for (auto& [c, same] : scored) total_same += same ? 1 : 0;
  int best = 0;
  int same_below = 0;
  for (std::size_t t = 0; t <= scored.size(); ++t) {
    // threshold between scored[t-1] and scored[t]
    int correct = int(t) - same_below                 // diff pairs below
                  + (total_same - same_below);        // same pairs above
    best = std::max(best, correct);
    if (t < scored.size() && scored[t].second) ++same_below;
  }
  return double(best) / double(scored.size());
}

}  // namespace faceleak
