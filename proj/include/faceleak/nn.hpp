#pragma once

// Minimal dense/conv network engine. Double precision, Eigen-backed.
// Batches are stored column-wise (feature dim × batch). Layers hold only
// parameters; per-call activations live in an external context, so a
// trained model is const and safe to run from multiple workers at once.

#include <Eigen/Dense>
#include <cstdint>
#include <iostream>
#include <memory>
#include <vector>

#include "faceleak/common.hpp"

namespace faceleak::nn {

using Mat = Eigen::MatrixXd;

// Parameter gradients, aligned with the flattened parameter list of the
// network that produced them.
struct Grads {
  std::vector<Mat> g;
};

class Layer {
 public:
  virtual ~Layer() = default;

  // cache receives whatever backward needs (typically the input).
  virtual Mat forward(const Mat& x, Mat& cache) const = 0;

  // param_grads may be null (backprop to input only, e.g. at inversion
  // time). When non-null, *param_idx indexes into param_grads->g and must
  // be advanced by n_params().
  virtual Mat backward(const Mat& dy, const Mat& cache, Grads* param_grads,
                       std::size_t* param_idx) const = 0;

  virtual std::size_t n_params() const { return 0; }
  virtual void collect_params(std::vector<Mat*>& out) {}
  virtual void collect_params(std::vector<const Mat*>& out) const {}
  virtual int out_dim(int in_dim) const = 0;
};

class Dense : public Layer {
 public:
  Dense(int in, int out) : weight(Mat::Zero(out, in)), bias(Mat::Zero(out, 1)) {}

  void init_he(Rng& rng) {
    double s = std::sqrt(2.0 / double(weight.cols()));
    for (Eigen::Index i = 0; i < weight.rows(); ++i)
      for (Eigen::Index j = 0; j < weight.cols(); ++j)
        weight(i, j) = s * rng.normal();
    bias.setZero();
  }

  Mat forward(const Mat& x, Mat& cache) const override {
    cache = x;
    return (weight * x).colwise() + Eigen::VectorXd(bias.col(0));
  }

  Mat backward(const Mat& dy, const Mat& cache, Grads* pg,
               std::size_t* idx) const override {
    if (pg) {
      pg->g[*idx] += dy * cache.transpose();
      pg->g[*idx + 1] += dy.rowwise().sum();
      *idx += 2;
    }
    return weight.transpose() * dy;
  }

  std::size_t n_params() const override { return 2; }
  void collect_params(std::vector<Mat*>& out) override {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  void collect_params(std::vector<const Mat*>& out) const override {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  int out_dim(int) const override { return int(weight.rows()); }

  Mat weight, bias;
};

class ReLU : public Layer {
 public:
  Mat forward(const Mat& x, Mat& cache) const override {
    cache = x;
    return x.cwiseMax(0.0);
  }
  Mat backward(const Mat& dy, const Mat& cache, Grads*, std::size_t*) const override {
    return (cache.array() > 0.0).select(dy, Mat::Zero(dy.rows(), dy.cols()));
  }
  int out_dim(int in) const override { return in; }
};

class Sigmoid : public Layer {
 public:
  Mat forward(const Mat& x, Mat& cache) const override {
    Mat y = x.unaryExpr([](double t) { return sigmoid(t); });
    cache = y;
    return y;
  }
  Mat backward(const Mat& dy, const Mat& cache, Grads*, std::size_t*) const override {
    return dy.array() * cache.array() * (1.0 - cache.array());
  }
  int out_dim(int in) const override { return in; }
};

// y = x / ||x||, per column. Used to normalize descriptors.
class L2Normalize : public Layer {
 public:
  Mat forward(const Mat& x, Mat& cache) const override {
    cache = x;
    Mat y = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      double n = x.col(c).norm();
      y.col(c) /= (n > 1e-12 ? n : 1.0);
    }
    return y;
  }
  Mat backward(const Mat& dy, const Mat& cache, Grads*, std::size_t*) const override {
    Mat dx = dy;
    for (Eigen::Index c = 0; c < cache.cols(); ++c) {
      double n = cache.col(c).norm();
      if (n <= 1e-12) continue;
      Eigen::VectorXd y = cache.col(c) / n;
      dx.col(c) = (dy.col(c) - y * y.dot(dy.col(c))) / n;
    }
    return dx;
  }
  int out_dim(int in) const override { return in; }
};

// Softmax within consecutive groups of group_size rows (three channel rows
// of a histogram head, or one group covering everything).
class GroupSoftmax : public Layer {
 public:
  explicit GroupSoftmax(int group_size) : group_size_(group_size) {}

  Mat forward(const Mat& x, Mat& cache) const override {
    Mat y = x;
    for (Eigen::Index c = 0; c < x.cols(); ++c)
      for (Eigen::Index g = 0; g < x.rows(); g += group_size_) {
        auto seg = y.col(c).segment(g, group_size_);
        double m = seg.maxCoeff();
        seg = (seg.array() - m).exp();
        seg /= seg.sum();
      }
    cache = y;
    return y;
  }
  Mat backward(const Mat& dy, const Mat& cache, Grads*, std::size_t*) const override {
    Mat dx = dy;
    for (Eigen::Index c = 0; c < dy.cols(); ++c)
      for (Eigen::Index g = 0; g < dy.rows(); g += group_size_) {
        auto y = cache.col(c).segment(g, group_size_);
        auto d = dy.col(c).segment(g, group_size_);
        double dot = y.dot(d);
        dx.col(c).segment(g, group_size_) = y.array() * (d.array() - dot);
      }
    return dx;
  }
  int out_dim(int in) const override { return in; }

 private:
  int group_size_;
};

// Non-overlapping average pooling on planar (C,H,W) columns.
class AvgPool2d : public Layer {
 public:
  AvgPool2d(int c, int h, int w, int k) : c_(c), h_(h), w_(w), k_(k) {
    if (h % k != 0 || w % k != 0) throw ConfigError("pool size must divide image");
  }

  Mat forward(const Mat& x, Mat& cache) const override {
    cache.resize(0, 0);  // nothing needed
    int ho = h_ / k_, wo = w_ / k_;
    Mat y = Mat::Zero(std::size_t(c_) * ho * wo, x.cols());
    double inv = 1.0 / double(k_ * k_);
    for (Eigen::Index s = 0; s < x.cols(); ++s)
      for (int c = 0; c < c_; ++c)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            double acc = 0;
            for (int dy = 0; dy < k_; ++dy)
              for (int dx = 0; dx < k_; ++dx)
                acc += x((std::size_t(c) * h_ + oy * k_ + dy) * w_ + ox * k_ + dx, s);
            y((std::size_t(c) * ho + oy) * wo + ox, s) = acc * inv;
          }
    return y;
  }

  Mat backward(const Mat& dy, const Mat&, Grads*, std::size_t*) const override {
    int ho = h_ / k_, wo = w_ / k_;
    Mat dx = Mat::Zero(std::size_t(c_) * h_ * w_, dy.cols());
    double inv = 1.0 / double(k_ * k_);
    for (Eigen::Index s = 0; s < dy.cols(); ++s)
      for (int c = 0; c < c_; ++c)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            double g = dy((std::size_t(c) * ho + oy) * wo + ox, s) * inv;
            for (int py = 0; py < k_; ++py)
              for (int px = 0; px < k_; ++px)
                dx((std::size_t(c) * h_ + oy * k_ + py) * w_ + ox * k_ + px, s) += g;
          }
    return dx;
  }
  int out_dim(int) const override { return c_ * (h_ / k_) * (w_ / k_); }

 private:
  int c_, h_, w_, k_;
};

// 3x3 convolution via im2col + GEMM. Stride and zero padding configurable.
class Conv2d : public Layer {
 public:
  Conv2d(int cin, int h, int w, int cout, int k = 3, int stride = 2, int pad = 1)
      : cin_(cin), h_(h), w_(w), cout_(cout), k_(k), stride_(stride), pad_(pad),
        weight(Mat::Zero(cout, std::size_t(cin) * k * k)), bias(Mat::Zero(cout, 1)) {
    ho_ = (h + 2 * pad - k) / stride + 1;
    wo_ = (w + 2 * pad - k) / stride + 1;
  }

  void init_he(Rng& rng) {
    double s = std::sqrt(2.0 / double(weight.cols()));
    for (Eigen::Index i = 0; i < weight.rows(); ++i)
      for (Eigen::Index j = 0; j < weight.cols(); ++j)
        weight(i, j) = s * rng.normal();
    bias.setZero();
  }

  int out_h() const { return ho_; }
  int out_w() const { return wo_; }

  Mat forward(const Mat& x, Mat& cache) const override {
    cache = x;
    Mat y(std::size_t(cout_) * ho_ * wo_, x.cols());
    Mat col(std::size_t(cin_) * k_ * k_, std::size_t(ho_) * wo_);
    for (Eigen::Index s = 0; s < x.cols(); ++s) {
      im2col(x.col(s), col);
      Mat out = weight * col;  // cout × (ho*wo)
      out.colwise() += Eigen::VectorXd(bias.col(0));
      for (int c = 0; c < cout_; ++c)
        y.col(s).segment(std::size_t(c) * ho_ * wo_, std::size_t(ho_) * wo_) =
            out.row(c).transpose();
    }
    return y;
  }

  Mat backward(const Mat& dy, const Mat& cache, Grads* pg,
               std::size_t* idx) const override {
    Mat dx = Mat::Zero(cache.rows(), cache.cols());
    Mat col(std::size_t(cin_) * k_ * k_, std::size_t(ho_) * wo_);
    Mat dout(cout_, std::size_t(ho_) * wo_);
    for (Eigen::Index s = 0; s < dy.cols(); ++s) {
      for (int c = 0; c < cout_; ++c)
        dout.row(c) = dy.col(s)
                          .segment(std::size_t(c) * ho_ * wo_, std::size_t(ho_) * wo_)
                          .transpose();
      if (pg) {
        im2col(cache.col(s), col);
        pg->g[*idx] += dout * col.transpose();
        pg->g[*idx + 1] += dout.rowwise().sum();
      }
      Mat dcol = weight.transpose() * dout;
      col2im(dcol, dx.col(s));
    }
    if (pg) *idx += 2;
    return dx;
  }

  std::size_t n_params() const override { return 2; }
  void collect_params(std::vector<Mat*>& out) override {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  void collect_params(std::vector<const Mat*>& out) const override {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  int out_dim(int) const override { return cout_ * ho_ * wo_; }

  Mat weight, bias;

 private:
  void im2col(const Eigen::Ref<const Eigen::VectorXd>& x, Mat& col) const {
    col.setZero();
    for (int oy = 0; oy < ho_; ++oy)
      for (int ox = 0; ox < wo_; ++ox) {
        Eigen::Index oc = Eigen::Index(oy) * wo_ + ox;
        int base_y = oy * stride_ - pad_;
        int base_x = ox * stride_ - pad_;
        for (int c = 0; c < cin_; ++c)
          for (int ky = 0; ky < k_; ++ky) {
            int iy = base_y + ky;
            if (iy < 0 || iy >= h_) continue;
            for (int kx = 0; kx < k_; ++kx) {
              int ix = base_x + kx;
              if (ix < 0 || ix >= w_) continue;
              col((std::size_t(c) * k_ + ky) * k_ + kx, oc) =
                  x((std::size_t(c) * h_ + iy) * w_ + ix);
            }
          }
      }
  }

  void col2im(const Mat& dcol, Eigen::Ref<Eigen::VectorXd> dx) const {
    for (int oy = 0; oy < ho_; ++oy)
      for (int ox = 0; ox < wo_; ++ox) {
        Eigen::Index oc = Eigen::Index(oy) * wo_ + ox;
        int base_y = oy * stride_ - pad_;
        int base_x = ox * stride_ - pad_;
        for (int c = 0; c < cin_; ++c)
          for (int ky = 0; ky < k_; ++ky) {
            int iy = base_y + ky;
            if (iy < 0 || iy >= h_) continue;
            for (int kx = 0; kx < k_; ++kx) {
              int ix = base_x + kx;
              if (ix < 0 || ix >= w_) continue;
              dx((std::size_t(c) * h_ + iy) * w_ + ix) +=
                  dcol((std::size_t(c) * k_ + ky) * k_ + kx, oc);
            }
          }
      }
  }

  int cin_, h_, w_, cout_, k_, stride_, pad_, ho_, wo_;
};

// Per-call activation storage; one cache slot per layer.
struct FwdCtx {
  std::vector<Mat> caches;
};

class Sequential {
 public:
  Sequential() = default;
  Sequential(Sequential&&) = default;
  Sequential& operator=(Sequential&&) = default;

  template <typename L, typename... Args>
  L* add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L* raw = layer.get();
    layers_.push_back(std::move(layer));
    return raw;
  }

  Mat forward(const Mat& x, FwdCtx& ctx) const {
    ctx.caches.resize(layers_.size());
    Mat cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i)
      cur = layers_[i]->forward(cur, ctx.caches[i]);
    return cur;
  }

  Mat forward(const Mat& x) const {
    FwdCtx ctx;
    return forward(x, ctx);
  }

  // Returns gradient w.r.t. the input. pg may be null.
  Mat backward(const Mat& dy, const FwdCtx& ctx, Grads* pg) const {
    std::size_t idx = 0;
    std::size_t total = 0;
    for (auto& l : layers_) total += l->n_params();
    if (pg && pg->g.size() != total) throw InputError("grad sink size mismatch");
    // walk backwards; param index follows forward order, so precompute offsets
    std::vector<std::size_t> offsets(layers_.size());
    std::size_t off = 0;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      offsets[i] = off;
      off += layers_[i]->n_params();
    }
    Mat cur = dy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
      idx = offsets[i];
      cur = layers_[i]->backward(cur, ctx.caches[i], pg, &idx);
    }
    return cur;
  }

  std::vector<Mat*> params() {
    std::vector<Mat*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }
  std::vector<const Mat*> params() const {
    std::vector<const Mat*> out;
    for (auto& l : layers_) l->collect_params(out);
    return out;
  }

  Grads make_grads() const {
    Grads g;
    for (auto* p : params()) g.g.push_back(Mat::Zero(p->rows(), p->cols()));
    return g;
  }

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---- losses (value + gradient w.r.t. predictions) ----

// Mean over all elements.
inline double mse_loss(const Mat& y, const Mat& t, Mat* dy = nullptr) {
  Mat diff = y - t;
  double n = double(y.rows() * y.cols());
  if (dy) *dy = diff * (2.0 / n);
  return diff.squaredNorm() / n;
}

// Binary cross entropy on probabilities in (0,1); targets 0/1. Mean over batch.
inline double bce_loss(const Mat& p, const Mat& t, Mat* dp = nullptr) {
  const double eps = 1e-12;
  double n = double(p.rows() * p.cols());
  double loss = 0;
  if (dp) dp->resize(p.rows(), p.cols());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    double pi = std::min(1.0 - eps, std::max(eps, p(i)));
    loss += -(t(i) * std::log(pi) + (1.0 - t(i)) * std::log(1.0 - pi));
    if (dp) (*dp)(i) = (pi - t(i)) / (pi * (1.0 - pi)) / n;
  }
  return loss / n;
}

// Softmax cross entropy on logits; labels are class indices per column.
inline double softmax_ce_loss(const Mat& logits, const std::vector<int>& labels,
                              Mat* dlogits = nullptr) {
  double loss = 0;
  Eigen::Index b = logits.cols();
  if (dlogits) dlogits->resize(logits.rows(), b);
  for (Eigen::Index c = 0; c < b; ++c) {
    Eigen::VectorXd col = logits.col(c);
    double m = col.maxCoeff();
    Eigen::VectorXd e = (col.array() - m).exp();
    double z = e.sum();
    Eigen::VectorXd p = e / z;
    loss += -std::log(std::max(1e-300, p[labels[std::size_t(c)]]));
    if (dlogits) {
      Eigen::VectorXd d = p;
      d[labels[std::size_t(c)]] -= 1.0;
      dlogits->col(c) = d / double(b);
    }
  }
  return loss / double(b);
}

// ---- optimizers ----

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(std::vector<Mat*>& params, const Grads& grads) = 0;
};

class Sgd : public Optimizer {
 public:
  explicit Sgd(double lr) : lr_(lr) {}
  void step(std::vector<Mat*>& params, const Grads& grads) override {
    for (std::size_t i = 0; i < params.size(); ++i)
      *params[i] -= lr_ * grads.g[i];
  }

 private:
  double lr_;
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

  void step(std::vector<Mat*>& params, const Grads& grads) override {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Mat::Zero(p->rows(), p->cols()));
        v_.push_back(Mat::Zero(p->rows(), p->cols()));
      }
    }
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, t_);
    double bc2 = 1.0 - std::pow(b2_, t_);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grads.g[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grads.g[i].cwiseProduct(grads.g[i]);
      Mat mhat = m_[i] / bc1;
      Mat vhat = v_[i] / bc2;
      params[i]->array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  int t_ = 0;
  std::vector<Mat> m_, v_;
};

// ---- parameter (de)serialization: raw little-endian doubles ----

inline void write_params(const Sequential& net, std::ostream& os) {
  auto ps = net.params();
  std::uint64_t n = ps.size();
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (auto* p : ps) {
    std::uint64_t r = std::uint64_t(p->rows()), c = std::uint64_t(p->cols());
    os.write(reinterpret_cast<const char*>(&r), sizeof r);
    os.write(reinterpret_cast<const char*>(&c), sizeof c);
    os.write(reinterpret_cast<const char*>(p->data()),
             std::streamsize(sizeof(double)) * p->size());
  }
}

inline void read_params(Sequential& net, std::istream& is) {
  auto ps = net.params();
  std::uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  if (n != ps.size()) throw ParseError("weights blob does not match architecture");
  for (auto* p : ps) {
    std::uint64_t r = 0, c = 0;
    is.read(reinterpret_cast<char*>(&r), sizeof r);
    is.read(reinterpret_cast<char*>(&c), sizeof c);
    if (Eigen::Index(r) != p->rows() || Eigen::Index(c) != p->cols())
      throw ParseError("weights tensor shape mismatch");
    is.read(reinterpret_cast<char*>(p->data()),
            std::streamsize(sizeof(double)) * p->size());
  }
  if (!is) throw ParseError("truncated weights blob");
}

}  // namespace faceleak::nn
