#pragma once

// ImageTensor: the H×W×3 unit flowing between generator, embedder, probes
// and metrics. Planar channel-major storage (c, y, x), double precision.
// Canonical in-memory range is unit [0,1]; byte [0,255] appears only at
// histogram computation and file I/O.

#include <Eigen/Dense>
#include <filesystem>
#include <string>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "faceleak/common.hpp"

namespace faceleak {

enum class RangeTag { Unit, Byte };

struct ImageTensor {
  int h = 0;
  int w = 0;
  RangeTag range = RangeTag::Unit;
  Eigen::VectorXd data;  // size 3*h*w, planar [c][y][x]

  ImageTensor() = default;
  ImageTensor(int h_, int w_, RangeTag r = RangeTag::Unit)
      : h(h_), w(w_), range(r), data(Eigen::VectorXd::Zero(3LL * h_ * w_)) {
    if (h_ <= 0 || w_ <= 0) throw InputError("image dimensions must be positive");
  }

  double& at(int c, int y, int x) { return data[(std::size_t(c) * h + y) * w + x]; }
  double at(int c, int y, int x) const { return data[(std::size_t(c) * h + y) * w + x]; }

  std::size_t pixel_count() const { return std::size_t(h) * w; }

  double range_max() const { return range == RangeTag::Unit ? 1.0 : 255.0; }

  bool finite() const { return data.allFinite(); }

  void check_valid() const {
    if (!finite()) throw InputError("image contains non-finite pixels");
    double hi = range_max();
    if (data.minCoeff() < 0.0 || data.maxCoeff() > hi)
      throw InputError("pixel values outside declared range");
  }

  ImageTensor to_unit() const {
    if (range == RangeTag::Unit) return *this;
    ImageTensor out(h, w, RangeTag::Unit);
    out.data = data / 255.0;
    return out;
  }

  ImageTensor to_byte() const {
    if (range == RangeTag::Byte) return *this;
    ImageTensor out(h, w, RangeTag::Byte);
    out.data = data * 255.0;
    return out;
  }
};

// PNG round trip quantizes to 8 bits. Decoded pixels are what determinism
// checks compare, so quantization happens with a fixed rule (round-half-up).
inline void write_png(const ImageTensor& img, const std::filesystem::path& path) {
  ImageTensor b = img.to_byte();
  cv::Mat mat(img.h, img.w, CV_8UC3);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      auto q = [&](int c) {
        double v = std::floor(b.at(c, y, x) + 0.5);
        return static_cast<unsigned char>(std::min(255.0, std::max(0.0, v)));
      };
      mat.at<cv::Vec3b>(y, x) = cv::Vec3b(q(2), q(1), q(0));  // BGR on disk
    }
  if (!cv::imwrite(path.string(), mat))
    throw InputError("failed to write PNG: " + path.string());
}

inline ImageTensor read_png(const std::filesystem::path& path,
                            RangeTag range = RangeTag::Unit) {
  cv::Mat mat = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (mat.empty()) throw InputError("failed to read image: " + path.string());
  ImageTensor img(mat.rows, mat.cols, RangeTag::Byte);
  for (int y = 0; y < mat.rows; ++y)
    for (int x = 0; x < mat.cols; ++x) {
      cv::Vec3b px = mat.at<cv::Vec3b>(y, x);
      img.at(0, y, x) = px[2];
      img.at(1, y, x) = px[1];
      img.at(2, y, x) = px[0];
    }
  return range == RangeTag::Unit ? img.to_unit() : img;
}

}  // namespace faceleak
