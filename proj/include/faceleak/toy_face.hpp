#pragma once

// Analytic procedural face renderer. Smooth composition of sigmoid/gaussian
// blobs over a background, so the image is differentiable in every
// parameter and landmarks plus binary labels are exact by construction.
//
// Rendering happens at a low native resolution and is upsampled by pixel
// replication to the 224×224 embedder input size. The replication map is
// linear, so gradients pool back onto the native grid.

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "faceleak/common.hpp"
#include "faceleak/image.hpp"

namespace faceleak::toy {

constexpr int kParamCount = 12;
constexpr int kIdParams = 5;  // leading id_part entries of the vector
constexpr int kNativeRes = 56;
constexpr int kImageRes = 224;
constexpr int kUpsample = kImageRes / kNativeRes;
constexpr int kLandmarkCount = 68;

constexpr double kSmileThreshold = 0.15;  // label rule: smiling iff smile > τ
constexpr double kHatThreshold = 0.5;     // wearing_hat iff hat strength > τ

// Parameter order in the flat vector (id_part first, then nonid_part).
enum ParamIndex {
  kFaceRx = 0,
  kFaceRy,
  kEyeSpacing,
  kEyeSize,
  kSkinTone,
  kYaw,
  kSmile,
  kHat,
  kBgR,
  kBgG,
  kBgB,
  kBrightness,
};

inline const std::array<double, kParamCount>& param_lo() {
  static const std::array<double, kParamCount> lo = {
      0.26, 0.30, 0.14, 0.022, 0.0, -0.12, -1.0, 0.0, 0.0, 0.0, 0.0, 0.85};
  return lo;
}
inline const std::array<double, kParamCount>& param_hi() {
  static const std::array<double, kParamCount> hi = {
      0.40, 0.46, 0.28, 0.045, 1.0, 0.12, 1.0, 1.0, 1.0, 1.0, 1.0, 1.00};
  return hi;
}

struct ToyFaceParams {
  // face_rx, face_ry, eye_spacing, eye_size, skin_tone
  Eigen::VectorXd id_part;
  // yaw, smile, hat, bg_r, bg_g, bg_b, brightness
  Eigen::VectorXd nonid_part;

  ToyFaceParams()
      : id_part(Eigen::VectorXd::Zero(kIdParams)),
        nonid_part(Eigen::VectorXd::Zero(kParamCount - kIdParams)) {}

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd v(kParamCount);
    v << id_part, nonid_part;
    return v;
  }

  static ToyFaceParams from_vector(const Eigen::VectorXd& v) {
    if (v.size() != kParamCount) throw InputError("toy param vector must have 12 entries");
    ToyFaceParams p;
    p.id_part = v.head(kIdParams);
    p.nonid_part = v.tail(kParamCount - kIdParams);
    return p;
  }

  void check_bounds() const {
    Eigen::VectorXd v = to_vector();
    for (int i = 0; i < kParamCount; ++i)
      if (v[i] < param_lo()[i] - 1e-12 || v[i] > param_hi()[i] + 1e-12)
        throw InputError("toy face parameter " + std::to_string(i) + " out of bounds");
  }

  bool smiling() const { return nonid_part[kSmile - kIdParams] > kSmileThreshold; }
  bool wearing_hat() const { return nonid_part[kHat - kIdParams] > kHatThreshold; }
};

// Forward-mode dual number with a fixed 12-dimensional tangent.
struct Dual {
  double v = 0;
  Eigen::Matrix<double, kParamCount, 1> d = Eigen::Matrix<double, kParamCount, 1>::Zero();

  Dual() = default;
  Dual(double value) : v(value) {}  // NOLINT: implicit constants are the point
  static Dual seed(double value, int i) {
    Dual x(value);
    x.d[i] = 1.0;
    return x;
  }

  Dual operator-() const {
    Dual r(-v);
    r.d = -d;
    return r;
  }
  friend Dual operator+(const Dual& a, const Dual& b) {
    Dual r(a.v + b.v);
    r.d = a.d + b.d;
    return r;
  }
  friend Dual operator-(const Dual& a, const Dual& b) {
    Dual r(a.v - b.v);
    r.d = a.d - b.d;
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r(a.v * b.v);
    r.d = a.d * b.v + b.d * a.v;
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r(a.v / b.v);
    r.d = (a.d * b.v - b.d * a.v) / (b.v * b.v);
    return r;
  }
};

inline Dual exp(const Dual& a) {
  Dual r(std::exp(a.v));
  r.d = a.d * r.v;
  return r;
}
inline double value_of(double x) { return x; }
inline double value_of(const Dual& x) { return x.v; }

using std::exp;

template <typename T>
T smooth_step(const T& t) {  // sigmoid gate
  return T(1.0) / (T(1.0) + exp(-t));
}

namespace detail {

template <typename T>
struct Rgb {
  T r, g, b;
};

template <typename T>
Rgb<T> mix(const Rgb<T>& a, const Rgb<T>& b, const T& m) {
  return {a.r + (b.r - a.r) * m, a.g + (b.g - a.g) * m, a.b + (b.b - a.b) * m};
}

// One pixel of the face composition at normalized coordinates (u, v),
// v growing downwards. p is the flat 12-parameter vector.
template <typename T>
Rgb<T> shade(const T* p, double u, double v) {
  const T& rx = p[kFaceRx];
  const T& ry = p[kFaceRy];
  const T& spacing = p[kEyeSpacing];
  const T& esz = p[kEyeSize];
  const T& tone = p[kSkinTone];
  const T& yaw = p[kYaw];
  const T& smile = p[kSmile];
  const T& hat = p[kHat];

  const double cx = 0.5, cy = 0.56;

  Rgb<T> col{p[kBgR], p[kBgG], p[kBgB]};

  // head: soft ellipse filled with skin tone
  T qx = (T(u) - T(cx)) / rx;
  T qy = (T(v) - T(cy)) / ry;
  T face_mask = smooth_step(T(10.0) * (T(1.0) - qx * qx - qy * qy));
  Rgb<T> skin{T(0.45) + tone * T(0.53), T(0.30) + tone * T(0.55),
              T(0.22) + tone * T(0.53)};
  col = mix(col, skin, face_mask);

  // hat: soft band sitting on top of the head
  T hat_bot = T(cy) - ry - T(0.01);
  T hat_mask = hat * smooth_step(T(55.0) * (hat_bot - T(v))) *
               smooth_step(T(55.0) * (T(v) - (hat_bot - T(0.20)))) *
               smooth_step(T(55.0) * ((rx * T(1.35)) * (rx * T(1.35)) -
                                      (T(u) - T(cx)) * (T(u) - T(cx))));
  col = mix(col, Rgb<T>{T(0.16), T(0.16), T(0.62)}, hat_mask);

  // eyes
  T ex_l = T(cx) + yaw - spacing * T(0.5);
  T ex_r = T(cx) + yaw + spacing * T(0.5);
  T ey = T(cy) - ry * T(0.35);
  auto eye_blob = [&](const T& ex) {
    T du = T(u) - ex;
    T dv = T(v) - ey;
    return exp((du * du + dv * dv) / (esz * esz * T(-2.0)));
  };
  Rgb<T> eye_col{T(0.06), T(0.06), T(0.10)};
  col = mix(col, eye_col, eye_blob(ex_l));
  col = mix(col, eye_col, eye_blob(ex_r));

  // nose: small darker blob
  T nx = T(cx) + yaw;
  T ny = T(cy) + ry * T(0.10);
  T ndu = T(u) - nx, ndv = T(v) - ny;
  T nose_mask = exp((ndu * ndu + ndv * ndv) * T(-1.0 / (2.0 * 0.03 * 0.03))) * T(0.5);
  col = mix(col, Rgb<T>{skin.r * T(0.75), skin.g * T(0.70), skin.b * T(0.70)}, nose_mask);

  // mouth: gaussian band along a parabola; smile > 0 lifts the corners
  T mx = T(cx) + yaw;
  T my = T(cy) + ry * T(0.55);
  T mw = rx * T(0.55);
  T t = (T(u) - mx) / mw;
  T curve = my - smile * T(0.055) * (t * t - T(0.5));
  T dv_m = T(v) - curve;
  T mouth_mask = exp(t * t * T(-2.0)) * exp(dv_m * dv_m * T(-1.0 / (2.0 * 0.016 * 0.016)));
  col = mix(col, Rgb<T>{T(0.55), T(0.15), T(0.17)}, mouth_mask);

  const T& bright = p[kBrightness];
  return {col.r * bright, col.g * bright, col.b * bright};
}

}  // namespace detail

// Renders the native-resolution planar image (3*res*res values in [0,1]).
template <typename T>
void render_native(const T* params, int res, T* out) {
  for (int y = 0; y < res; ++y)
    for (int x = 0; x < res; ++x) {
      double u = (x + 0.5) / res;
      double v = (y + 0.5) / res;
      detail::Rgb<T> c = detail::shade(params, u, v);
      out[(0 * res + y) * res + x] = c.r;
      out[(1 * res + y) * res + x] = c.g;
      out[(2 * res + y) * res + x] = c.b;
    }
}

inline ImageTensor upsample_nearest(const Eigen::VectorXd& native, int res, int factor) {
  ImageTensor img(res * factor, res * factor, RangeTag::Unit);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < res * factor; ++y)
      for (int x = 0; x < res * factor; ++x)
        img.at(c, y, x) = native[(std::size_t(c) * res + y / factor) * res + x / factor];
  return img;
}

// Exact landmark positions (68 points, iBUG-style grouping) in 224-pixel
// crop coordinates. Depends only on geometry parameters; background,
// brightness, skin tone and hat leave landmarks untouched.
inline Eigen::Matrix<double, kLandmarkCount, 2> toy_landmarks(const ToyFaceParams& p) {
  Eigen::VectorXd q = p.to_vector();
  double rx = q[kFaceRx], ry = q[kFaceRy], spacing = q[kEyeSpacing],
         esz = q[kEyeSize], yaw = q[kYaw], smile = q[kSmile];
  const double cx = 0.5, cy = 0.56;
  Eigen::Matrix<double, kLandmarkCount, 2> lm;
  int i = 0;
  // 0-16 jaw, left ear over the chin to right ear
  for (int t = 0; t <= 16; ++t, ++i) {
    double phi = 3.14159265358979323846 * (1.0 - t / 16.0);
    lm(i, 0) = cx + rx * std::cos(phi);
    lm(i, 1) = cy + ry * std::sin(phi);
  }
  double ex_l = cx + yaw - spacing * 0.5;
  double ex_r = cx + yaw + spacing * 0.5;
  double ey = cy - ry * 0.35;
  // 17-21 / 22-26 eyebrows
  for (int side = 0; side < 2; ++side) {
    double ex = side == 0 ? ex_l : ex_r;
    for (int t = 0; t < 5; ++t, ++i) {
      lm(i, 0) = ex + esz * 1.6 * (t - 2);
      lm(i, 1) = ey - esz * 3.0 - esz * 0.6 * (1.0 - std::abs(t - 2) / 2.0);
    }
  }
  // 27-30 nose bridge, 31-35 nose base
  double nx = cx + yaw, ny = cy + ry * 0.10;
  for (int t = 0; t < 4; ++t, ++i) {
    lm(i, 0) = nx;
    lm(i, 1) = ey + (ny - ey) * (t + 1) / 4.0;
  }
  for (int t = 0; t < 5; ++t, ++i) {
    lm(i, 0) = nx + 0.02 * (t - 2);
    lm(i, 1) = ny + 0.015;
  }
  // 36-41 / 42-47 eye contours (centroid = eye centre, used for interocular)
  for (int side = 0; side < 2; ++side) {
    double ex = side == 0 ? ex_l : ex_r;
    for (int t = 0; t < 6; ++t, ++i) {
      double a = 2.0 * 3.14159265358979323846 * t / 6.0;
      lm(i, 0) = ex + esz * std::cos(a);
      lm(i, 1) = ey + esz * 0.7 * std::sin(a);
    }
  }
  // 48-67 mouth: 12 outer + 8 inner along the smile parabola
  double mx = cx + yaw, my = cy + ry * 0.55, mw = rx * 0.55;
  auto mouth_y = [&](double t) { return my - smile * 0.055 * (t * t - 0.5); };
  for (int t = 0; t < 12; ++t, ++i) {
    double a = 2.0 * 3.14159265358979323846 * t / 12.0;
    double tu = std::cos(a);
    lm(i, 0) = mx + mw * tu;
    lm(i, 1) = mouth_y(tu) + 0.018 * std::sin(a);
  }
  for (int t = 0; t < 8; ++t, ++i) {
    double a = 2.0 * 3.14159265358979323846 * t / 8.0;
    double tu = std::cos(a);
    lm(i, 0) = mx + mw * 0.7 * tu;
    lm(i, 1) = mouth_y(0.7 * tu) + 0.008 * std::sin(a);
  }
  return lm * double(kImageRes);
}

struct ToyRender {
  ImageTensor image;  // 224×224 unit range
  Eigen::Matrix<double, kLandmarkCount, 2> landmarks;
  bool smiling = false;
  bool wearing_hat = false;
};

inline ToyRender render_toy_face(const ToyFaceParams& p) {
  p.check_bounds();
  Eigen::VectorXd q = p.to_vector();
  Eigen::VectorXd native(3 * kNativeRes * kNativeRes);
  render_native<double>(q.data(), kNativeRes, native.data());
  ToyRender out;
  out.image = upsample_nearest(native, kNativeRes, kUpsample);
  out.landmarks = toy_landmarks(p);
  out.smiling = p.smiling();
  out.wearing_hat = p.wearing_hat();
  return out;
}

}  // namespace faceleak::toy
