#pragma once

// Scalar evaluation measures: MSE/PSNR/SSIM on image pairs, descriptor
// cosine similarity and its distribution summary, and interocular-
// normalized landmark error.

#include <Eigen/Dense>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <vector>

#include "faceleak/common.hpp"
#include "faceleak/image.hpp"
#include "faceleak/landmarks.hpp"

namespace faceleak {

struct MetricsRecord {
  double mse = 0;       // byte scale
  double psnr = 0;      // dB; meaningless when psnr_inf
  bool psnr_inf = false;
  double ssim = 0;
};

namespace detail {

// 11-tap gaussian window, sigma 1.5, normalized (the standard SSIM window).
inline const std::vector<double>& ssim_window() {
  static const std::vector<double> w = [] {
    std::vector<double> k(11);
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
      double d = i - 5;
      k[std::size_t(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += k[std::size_t(i)];
    }
    for (auto& v : k) v /= sum;
    return k;
  }();
  return w;
}

// Separable valid-mode gaussian filtering of one channel plane.
inline Eigen::MatrixXd ssim_filter(const Eigen::MatrixXd& plane) {
  const auto& k = ssim_window();
  int h = int(plane.rows()), w = int(plane.cols());
  Eigen::MatrixXd tmp(h, w - 10);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x + 10 < w; ++x) {
      double acc = 0;
      for (int i = 0; i < 11; ++i) acc += k[std::size_t(i)] * plane(y, x + i);
      tmp(y, x) = acc;
    }
  Eigen::MatrixXd out(h - 10, w - 10);
  for (int y = 0; y + 10 < h; ++y)
    for (int x = 0; x < w - 10; ++x) {
      double acc = 0;
      for (int i = 0; i < 11; ++i) acc += k[std::size_t(i)] * tmp(y + i, x);
      out(y, x) = acc;
    }
  return out;
}

inline Eigen::MatrixXd channel_plane(const ImageTensor& img, int c) {
  Eigen::MatrixXd m(img.h, img.w);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) m(y, x) = img.at(c, y, x);
  return m;
}

}  // namespace detail

// SSIM with the standard windowed formulation on byte scale,
// C1 = (0.01*255)^2, C2 = (0.03*255)^2, averaged over channels.
inline double ssim(const ImageTensor& a, const ImageTensor& b) {
  if (a.h != b.h || a.w != b.w || a.range != b.range)
    throw InputError("ssim: image shape/range mismatch");
  if (a.h < 11 || a.w < 11) throw InputError("ssim: image smaller than window");
  ImageTensor ab = a.to_byte(), bb = b.to_byte();
  const double c1 = 6.5025, c2 = 58.5225;
  double total = 0;
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd x = detail::channel_plane(ab, c);
    Eigen::MatrixXd y = detail::channel_plane(bb, c);
    Eigen::MatrixXd mx = detail::ssim_filter(x);
    Eigen::MatrixXd my = detail::ssim_filter(y);
    Eigen::MatrixXd mxx = detail::ssim_filter(x.cwiseProduct(x));
    Eigen::MatrixXd myy = detail::ssim_filter(y.cwiseProduct(y));
    Eigen::MatrixXd mxy = detail::ssim_filter(x.cwiseProduct(y));
    Eigen::ArrayXXd vx = mxx.array() - mx.array().square();
    Eigen::ArrayXXd vy = myy.array() - my.array().square();
    Eigen::ArrayXXd cov = mxy.array() - (mx.array() * my.array());
    Eigen::ArrayXXd num =
        (2.0 * mx.array() * my.array() + c1) * (2.0 * cov + c2);
    Eigen::ArrayXXd den =
        (mx.array().square() + my.array().square() + c1) * (vx + vy + c2);
    total += (num / den).mean();
  }
  return total / 3.0;
}

inline MetricsRecord image_metrics(const ImageTensor& a, const ImageTensor& b) {
  if (a.h != b.h || a.w != b.w || a.range != b.range)
    throw InputError("image_metrics: shape/range mismatch");
  ImageTensor ab = a.to_byte(), bb = b.to_byte();
  MetricsRecord r;
  r.mse = (ab.data - bb.data).squaredNorm() / double(ab.data.size());
  if (r.mse > 0) {
    r.psnr = 10.0 * std::log10(255.0 * 255.0 / r.mse);
  } else {
    r.psnr_inf = true;
  }
  r.ssim = ssim(a, b);
  return r;
}

inline double cosine_similarity(const Eigen::VectorXd& d1, const Eigen::VectorXd& d2) {
  if (d1.size() != d2.size()) throw InputError("cosine: dimension mismatch");
  double n1 = d1.norm(), n2 = d2.norm();
  if (n1 == 0.0 || n2 == 0.0) throw InputError("cosine: zero vector");
  return d1.dot(d2) / (n1 * n2);
}

// Mean per-point Euclidean distance as a percentage of the ground-truth
// interocular distance.
inline double landmark_error(const LandmarkSet& pred, const LandmarkSet& gt) {
  double iod = gt.interocular();
  if (!(iod > 0)) throw InputError("landmark_error: degenerate interocular distance");
  double sum = 0;
  for (int i = 0; i < LandmarkSet::kCount; ++i)
    sum += (pred.points.row(i) - gt.points.row(i)).norm();
  return sum / LandmarkSet::kCount / iod * 100.0;
}

struct SimilaritySummary {
  std::vector<double> scores;
  double mean = 0;
  double median = 0;
  Eigen::VectorXd hist;  // 20 bins over [-1, 1]
};

inline SimilaritySummary similarity_report(
    const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& pairs) {
  if (pairs.empty()) throw InputError("similarity_report: no pairs");
  SimilaritySummary s;
  for (auto& [a, b] : pairs) s.scores.push_back(cosine_similarity(a, b));
  double sum = 0;
  for (double v : s.scores) sum += v;
  s.mean = sum / double(s.scores.size());
  std::vector<double> sorted = s.scores;
  std::sort(sorted.begin(), sorted.end());
  std::size_t n = sorted.size();
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  s.hist = Eigen::VectorXd::Zero(20);
  for (double v : s.scores) {
    int k = int(std::floor((v + 1.0) / 2.0 * 20.0));
    k = std::min(19, std::max(0, k));
    s.hist[k] += 1.0;
  }
  return s;
}

// Bar-chart rendering of a score distribution, written as a PNG.
inline void write_similarity_plot(const SimilaritySummary& s,
                                  const std::filesystem::path& path) {
  int w = 400, h = 240, margin = 20;
  ImageTensor img(h, w, RangeTag::Unit);
  img.data.setConstant(1.0);
  double peak = s.hist.maxCoeff();
  if (peak <= 0) peak = 1;
  int bins = int(s.hist.size());
  int bw = (w - 2 * margin) / bins;
  for (int k = 0; k < bins; ++k) {
    int bh = int((h - 2 * margin) * s.hist[k] / peak);
    for (int y = h - margin - bh; y < h - margin; ++y)
      for (int x = margin + k * bw; x < margin + (k + 1) * bw - 1; ++x) {
        img.at(0, y, x) = 0.20;
        img.at(1, y, x) = 0.35;
        img.at(2, y, x) = 0.70;
      }
  }
  // axis
  for (int x = margin; x < w - margin; ++x)
    for (int c = 0; c < 3; ++c) img.at(c, h - margin, x) = 0.0;
  write_png(img, path);
}

inline void write_similarity_csv(const SimilaritySummary& s,
                                 const std::filesystem::path& path) {
  std::ofstream os(path);
  os << "pair,cosine\n";
  for (std::size_t i = 0; i < s.scores.size(); ++i)
    os << i << "," << format_double(s.scores[i]) << "\n";
}

}  // namespace faceleak
