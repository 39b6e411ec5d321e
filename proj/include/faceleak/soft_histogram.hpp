#pragma once

// Hard and differentiable soft RGB histograms plus the 1-D Earth Mover's
// distance used to score histogram predictions.
//
// Soft assignment of value x to bin k:
//   H(x)_k = sum_j f(x_j - c_k + d/2) - f(x_j - c_k - d/2),  f(t) = sigmoid(sigma*t)
// so total mass telescopes to sum_j [f(x_j - min) - f(x_j - max)].

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "faceleak/common.hpp"
#include "faceleak/image.hpp"

namespace faceleak {

struct HistogramSpec {
  double min = 0.0;
  double max = 255.0;
  int n = 10;
  double sigma = 1.85;

  void validate() const {
    if (max <= min) throw InputError("histogram spec requires max > min");
    if (n < 1) throw InputError("histogram spec requires n >= 1");
    if (sigma <= 0) throw InputError("histogram spec requires sigma > 0");
  }

  double delta() const { return (max - min) / n; }
  // k is 0-based; matches c_i = min + delta*(i - 0.5) with i = k+1
  double center(int k) const { return min + delta() * (k + 0.5); }

  bool operator==(const HistogramSpec& o) const {
    return min == o.min && max == o.max && n == o.n && sigma == o.sigma;
  }
};

struct Histogram {
  HistogramSpec spec;
  Eigen::MatrixXd bins;  // 3×N, one row per color channel
  bool normalized = false;

  void check_normalized() const {
    if (!normalized) throw InputError("histogram is not normalized");
    for (int c = 0; c < 3; ++c) {
      if (std::abs(bins.row(c).sum() - 1.0) > 1e-6)
        throw InputError("normalized histogram row does not sum to 1");
      if (bins.row(c).minCoeff() < 0) throw InputError("negative histogram bin");
    }
  }
};

// Counting histogram on [min, max]. Boundary ties go to the higher-index
// bin (half-open bins, last bin closed); out-of-range values are rejected.
inline Eigen::VectorXd hard_histogram(const Eigen::VectorXd& values,
                                      const HistogramSpec& spec) {
  spec.validate();
  Eigen::VectorXd h = Eigen::VectorXd::Zero(spec.n);
  double d = spec.delta();
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    double v = values[j];
    if (!(v >= spec.min && v <= spec.max))
      throw InputError("hard_histogram: value out of range");
    int k = int(std::floor((v - spec.min) / d));
    if (k >= spec.n) k = spec.n - 1;  // v == max
    h[k] += 1.0;
  }
  return h;
}

inline Eigen::VectorXd soft_histogram(const Eigen::VectorXd& values,
                                      const HistogramSpec& spec) {
  spec.validate();
  if (!values.allFinite()) throw InputError("soft_histogram: non-finite values");
  Eigen::VectorXd h = Eigen::VectorXd::Zero(spec.n);
  double half = spec.delta() / 2.0;
  for (Eigen::Index j = 0; j < values.size(); ++j)
    for (int k = 0; k < spec.n; ++k) {
      double t = values[j] - spec.center(k);
      h[k] += sigmoid(spec.sigma * (t + half)) - sigmoid(spec.sigma * (t - half));
    }
  return h;
}

// Pulls a gradient w.r.t. the soft histogram back to the input values.
inline Eigen::VectorXd soft_histogram_backward(const Eigen::VectorXd& values,
                                               const HistogramSpec& spec,
                                               const Eigen::VectorXd& dh) {
  spec.validate();
  if (dh.size() != spec.n) throw InputError("histogram gradient size mismatch");
  Eigen::VectorXd dv = Eigen::VectorXd::Zero(values.size());
  double half = spec.delta() / 2.0;
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    double acc = 0;
    for (int k = 0; k < spec.n; ++k) {
      double t = values[j] - spec.center(k);
      double sp = sigmoid(spec.sigma * (t + half));
      double sm = sigmoid(spec.sigma * (t - half));
      acc += dh[k] * spec.sigma * (sp * (1 - sp) - sm * (1 - sm));
    }
    dv[j] = acc;
  }
  return dv;
}

// Per-channel soft histogram of an image, computed on the byte scale and
// divided by pixel count. Row sums sit slightly below 1 because the sigmoid
// tails leak mass past the range ends, so the result is not flagged as
// normalized; it is meant as a differentiable loss input, not an EMD operand.
inline Histogram soft_image_histogram(const ImageTensor& img,
                                      const HistogramSpec& spec = {}) {
  img.check_valid();
  ImageTensor b = img.to_byte();
  std::size_t m = b.pixel_count();
  Histogram out;
  out.spec = spec;
  out.bins.resize(3, spec.n);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd channel = b.data.segment(Eigen::Index(c) * m, Eigen::Index(m));
    out.bins.row(c) = soft_histogram(channel, spec).transpose() / double(m);
  }
  out.normalized = false;
  return out;
}

// Gradient of a scalar w.r.t. unit-range pixels, given its gradient w.r.t.
// the normalized 3×N histogram bins.
inline Eigen::VectorXd soft_image_histogram_backward(const ImageTensor& img,
                                                     const HistogramSpec& spec,
                                                     const Eigen::MatrixXd& dbins) {
  if (dbins.rows() != 3 || dbins.cols() != spec.n)
    throw InputError("histogram gradient shape mismatch");
  ImageTensor b = img.to_byte();
  std::size_t m = b.pixel_count();
  Eigen::VectorXd dpix(b.data.size());
  double unit_scale = img.range == RangeTag::Unit ? 255.0 : 1.0;
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd channel = b.data.segment(Eigen::Index(c) * m, Eigen::Index(m));
    Eigen::VectorXd dh = dbins.row(c).transpose() / double(m);
    dpix.segment(Eigen::Index(c) * m, Eigen::Index(m)) =
        soft_histogram_backward(channel, spec, dh) * unit_scale;
  }
  return dpix;
}

// 1-D EMD between normalized histograms: L1 distance of the cumulative
// sums, in bin-index units, averaged over the three channels.
inline double emd(const Histogram& a, const Histogram& b) {
  if (!(a.spec == b.spec)) throw InputError("emd: histogram specs differ");
  a.check_normalized();
  b.check_normalized();
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    double cum = 0, dist = 0;
    for (int k = 0; k < a.spec.n; ++k) {
      cum += a.bins(c, k) - b.bins(c, k);
      dist += std::abs(cum);
    }
    total += dist;
  }
  return total / 3.0;
}

inline nlohmann::ordered_json histogram_to_json(const Histogram& h) {
  nlohmann::ordered_json j;
  j["spec"] = {{"min", h.spec.min}, {"max", h.spec.max}, {"n", h.spec.n},
               {"sigma", h.spec.sigma}};
  j["bins"] = nlohmann::ordered_json::array();
  for (int c = 0; c < 3; ++c) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (int k = 0; k < h.spec.n; ++k) row.push_back(h.bins(c, k));
    j["bins"].push_back(row);
  }
  j["normalized"] = h.normalized;
  return j;
}

inline Histogram histogram_from_json(const nlohmann::json& j) {
  Histogram h;
  h.spec.min = j.at("spec").at("min").get<double>();
  h.spec.max = j.at("spec").at("max").get<double>();
  h.spec.n = j.at("spec").at("n").get<int>();
  h.spec.sigma = j.at("spec").at("sigma").get<double>();
  h.spec.validate();
  auto rows = j.at("bins");
  if (rows.size() != 3) throw ParseError("histogram json must have 3 channel rows");
  h.bins.resize(3, h.spec.n);
  for (int c = 0; c < 3; ++c) {
    if (int(rows[std::size_t(c)].size()) != h.spec.n)
      throw ParseError("histogram row length mismatch");
    for (int k = 0; k < h.spec.n; ++k)
      h.bins(c, k) = rows[std::size_t(c)][std::size_t(k)].get<double>();
  }
  h.normalized = j.at("normalized").get<bool>();
  return h;
}

}  // namespace faceleak
