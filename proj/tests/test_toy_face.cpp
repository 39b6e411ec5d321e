#include <catch2/catch_amalgamated.hpp>

#include "faceleak/adapters.hpp"
#include "faceleak/landmarks.hpp"
#include "faceleak/toy_face.hpp"

using namespace faceleak;

namespace {

toy::ToyFaceParams mid_params() {
  toy::ToyFaceParams p;
  const auto& lo = toy::param_lo();
  const auto& hi = toy::param_hi();
  Eigen::VectorXd v(toy::kParamCount);
  for (int i = 0; i < toy::kParamCount; ++i) v[i] = 0.5 * (lo[std::size_t(i)] + hi[std::size_t(i)]);
  return toy::ToyFaceParams::from_vector(v);
}

}  // namespace

TEST_CASE("rendered images stay in unit range at the full resolution") {
  toy::ToyRender r = toy::render_toy_face(mid_params());
  REQUIRE(r.image.h == toy::kImageRes);
  REQUIRE(r.image.w == toy::kImageRes);
  REQUIRE(r.image.data.minCoeff() >= 0.0);
  REQUIRE(r.image.data.maxCoeff() <= 1.0);
}

TEST_CASE("rendering is deterministic") {
  toy::ToyRender a = toy::render_toy_face(mid_params());
  toy::ToyRender b = toy::render_toy_face(mid_params());
  REQUIRE((a.image.data - b.image.data).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((a.landmarks - b.landmarks).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("landmark eye blocks give interocular equal to eye spacing") {
  toy::ToyFaceParams p = mid_params();
  LandmarkSet lm;
  lm.points = toy::toy_landmarks(p);
  double spacing = p.id_part[toy::kEyeSpacing];
  REQUIRE(lm.interocular() ==
          Catch::Approx(spacing * toy::kImageRes).epsilon(1e-9));
}

TEST_CASE("yaw shifts eye landmarks horizontally") {
  toy::ToyFaceParams p = mid_params();
  auto base = toy::toy_landmarks(p);
  p.nonid_part[toy::kYaw - toy::kIdParams] = 0.1;
  auto moved = toy::toy_landmarks(p);
  // left eye contour (36-41) translates by yaw * resolution in x
  for (int i = 36; i <= 47; ++i) {
    REQUIRE(moved(i, 0) - base(i, 0) ==
            Catch::Approx(0.1 * toy::kImageRes).epsilon(1e-9));
    REQUIRE(moved(i, 1) == Catch::Approx(base(i, 1)).margin(1e-12));
  }
}

TEST_CASE("background parameters do not move landmarks") {
  toy::ToyFaceParams p = mid_params();
  auto base = toy::toy_landmarks(p);
  p.nonid_part[toy::kBgR - toy::kIdParams] = 0.9;
  p.nonid_part[toy::kBrightness - toy::kIdParams] = 0.9;
  auto moved = toy::toy_landmarks(p);
  REQUIRE((moved - base).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("label thresholds") {
  toy::ToyFaceParams p = mid_params();
  p.nonid_part[toy::kSmile - toy::kIdParams] = toy::kSmileThreshold + 0.01;
  REQUIRE(p.smiling());
  p.nonid_part[toy::kSmile - toy::kIdParams] = toy::kSmileThreshold - 0.01;
  REQUIRE_FALSE(p.smiling());
  p.nonid_part[toy::kHat - toy::kIdParams] = toy::kHatThreshold + 0.01;
  REQUIRE(p.wearing_hat());
  p.nonid_part[toy::kHat - toy::kIdParams] = toy::kHatThreshold - 0.01;
  REQUIRE_FALSE(p.wearing_hat());
}

TEST_CASE("bounds checking rejects out-of-range parameters") {
  toy::ToyFaceParams p = mid_params();
  REQUIRE_NOTHROW(p.check_bounds());
  p.id_part[0] = toy::param_hi()[0] + 0.1;
  REQUIRE_THROWS_AS(p.check_bounds(), InputError);
}

TEST_CASE("parameter vector round trip") {
  toy::ToyFaceParams p = mid_params();
  toy::ToyFaceParams q = toy::ToyFaceParams::from_vector(p.to_vector());
  REQUIRE((p.to_vector() - q.to_vector()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("upsampling replicates native pixels") {
  toy::ToyFaceParams p = mid_params();
  Eigen::VectorXd q = p.to_vector();
  Eigen::VectorXd native(3 * toy::kNativeRes * toy::kNativeRes);
  toy::render_native<double>(q.data(), toy::kNativeRes, native.data());
  ImageTensor up = toy::upsample_nearest(native, toy::kNativeRes, toy::kUpsample);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < toy::kNativeRes; ++y)
      for (int x = 0; x < toy::kNativeRes; ++x) {
        double v = native[(std::size_t(c) * toy::kNativeRes + y) * toy::kNativeRes + x];
        for (int dy = 0; dy < toy::kUpsample; ++dy)
          for (int dx = 0; dx < toy::kUpsample; ++dx)
            REQUIRE(up.at(c, y * toy::kUpsample + dy, x * toy::kUpsample + dx) == v);
      }
}

TEST_CASE("generator tape jacobian matches finite differences") {
  ToyGenerator gen;
  Eigen::VectorXd z = sample_latent(gen, 31);
  auto tape = gen.generate_tape(z);
  const ImageTensor& img = tape->image();

  // probe the jacobian through a random pixel-space direction
  Rng rng(32);
  Eigen::VectorXd dimg(img.data.size());
  for (Eigen::Index i = 0; i < dimg.size(); ++i) dimg[i] = rng.normal();
  Eigen::VectorXd analytic = tape->backward(dimg);

  double eps = 1e-6;
  for (int i = 0; i < gen.dim_in(); ++i) {
    Eigen::VectorXd zp = z, zm = z;
    zp[i] += eps;
    zm[i] -= eps;
    double fd = (dimg.dot(gen.generate(zp).data) - dimg.dot(gen.generate(zm).data)) /
                (2 * eps);
    REQUIRE(analytic[i] == Catch::Approx(fd).margin(1e-4 * (1.0 + std::abs(fd))));
  }
}

TEST_CASE("latent squash maps any real latent into parameter bounds") {
  Rng rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd z(toy::kParamCount);
    for (int i = 0; i < toy::kParamCount; ++i) z[i] = rng.normal() * 5.0;
    toy::ToyFaceParams p = ToyGenerator::latent_to_params(z);
    REQUIRE_NOTHROW(p.check_bounds());
  }
}
