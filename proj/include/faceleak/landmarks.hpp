#pragma once

// 68-point landmark sets in 224-crop pixel coordinates, serializable as a
// flat 136-vector (x0, y0, x1, y1, ...).

#include <Eigen/Dense>

#include "faceleak/common.hpp"

namespace faceleak {

struct LandmarkSet {
  static constexpr int kCount = 68;
  Eigen::Matrix<double, kCount, 2> points;

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(kCount * 2);
    for (int i = 0; i < kCount; ++i) {
      v[2 * i] = points(i, 0);
      v[2 * i + 1] = points(i, 1);
    }
    return v;
  }

  static LandmarkSet from_vector(const Eigen::VectorXd& v) {
    if (v.size() != kCount * 2) throw InputError("landmark vector must have 136 entries");
    LandmarkSet s;
    for (int i = 0; i < kCount; ++i) {
      s.points(i, 0) = v[2 * i];
      s.points(i, 1) = v[2 * i + 1];
    }
    return s;
  }

  // centroids of the 36-41 / 42-47 eye contours (0-indexed convention)
  Eigen::Vector2d left_eye_center() const {
    return points.block<6, 2>(36, 0).colwise().mean().transpose();
  }
  Eigen::Vector2d right_eye_center() const {
    return points.block<6, 2>(42, 0).colwise().mean().transpose();
  }

  double interocular() const {
    return (left_eye_center() - right_eye_center()).norm();
  }
};

}  // namespace faceleak
