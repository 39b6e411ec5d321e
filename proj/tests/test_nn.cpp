#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "faceleak/nn.hpp"

using namespace faceleak;
using nn::Mat;

namespace {

Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  Mat m(r, c);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Central-difference check of parameter and input gradients under MSE.
void grad_check(nn::Sequential& net, Eigen::Index in_dim, int batch, std::uint64_t seed,
                double tol = 1e-6) {
  Mat x = random_mat(in_dim, batch, seed);
  nn::FwdCtx ctx;
  Mat y0 = net.forward(x, ctx);
  Mat t = random_mat(y0.rows(), y0.cols(), seed + 1);
  Mat dy;
  nn::mse_loss(y0, t, &dy);
  nn::Grads grads = net.make_grads();
  Mat dx = net.backward(dy, ctx, &grads);

  auto loss_at = [&](const Mat& xx) {
    Mat y = net.forward(xx);
    return nn::mse_loss(y, t);
  };

  const double eps = 1e-6;
  // input gradient, a handful of entries
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(6, x.size()); ++i) {
    Mat xp = x, xm = x;
    xp.data()[i] += eps;
    xm.data()[i] -= eps;
    double fd = (loss_at(xp) - loss_at(xm)) / (2 * eps);
    REQUIRE(dx.data()[i] == Catch::Approx(fd).margin(tol));
  }
  // parameter gradients, a few entries of every parameter
  auto params = net.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::Index n = params[p]->size();
    for (Eigen::Index i = 0; i < n; i += std::max<Eigen::Index>(1, n / 3)) {
      double saved = params[p]->data()[i];
      params[p]->data()[i] = saved + eps;
      double lp = loss_at(x);
      params[p]->data()[i] = saved - eps;
      double lm = loss_at(x);
      params[p]->data()[i] = saved;
      double fd = (lp - lm) / (2 * eps);
      REQUIRE(grads.g[p].data()[i] == Catch::Approx(fd).margin(tol));
    }
  }
}

}  // namespace

TEST_CASE("dense + relu + sigmoid gradients match finite differences") {
  nn::Sequential net;
  Rng rng(1);
  net.add<nn::Dense>(6, 5)->init_he(rng);
  net.add<nn::ReLU>();
  net.add<nn::Dense>(5, 3)->init_he(rng);
  net.add<nn::Sigmoid>();
  grad_check(net, 6, 4, 100);
}

TEST_CASE("l2 normalize gradients match finite differences") {
  nn::Sequential net;
  Rng rng(2);
  net.add<nn::Dense>(5, 4)->init_he(rng);
  net.add<nn::L2Normalize>();
  grad_check(net, 5, 3, 200);
}

TEST_CASE("group softmax gradients and row sums") {
  nn::Sequential net;
  Rng rng(3);
  net.add<nn::Dense>(4, 9)->init_he(rng);
  net.add<nn::GroupSoftmax>(3);
  grad_check(net, 4, 2, 300);

  Mat y = net.forward(random_mat(4, 5, 301));
  for (Eigen::Index col = 0; col < 5; ++col)
    for (int g = 0; g < 3; ++g) {
      double sum = y.block(g * 3, col, 3, 1).sum();
      REQUIRE(sum == Catch::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("conv and avgpool gradients match finite differences") {
  nn::Sequential net;
  Rng rng(4);
  net.add<nn::AvgPool2d>(2, 8, 8, 2);
  net.add<nn::Conv2d>(2, 4, 4, 3, 3, 2, 1)->init_he(rng);
  net.add<nn::ReLU>();
  net.add<nn::Dense>(3 * 2 * 2, 2)->init_he(rng);
  grad_check(net, 2 * 8 * 8, 2, 400, 1e-5);
}

TEST_CASE("avgpool averages blocks exactly") {
  nn::Sequential net;
  net.add<nn::AvgPool2d>(1, 4, 4, 2);
  Mat x(16, 1);
  for (int i = 0; i < 16; ++i) x(i, 0) = i;
  Mat y = net.forward(x);
  REQUIRE(y.rows() == 4);
  // block at rows {0,1} x cols {0,1} of the row-major 4x4 grid
  REQUIRE(y(0, 0) == Catch::Approx((0 + 1 + 4 + 5) / 4.0));
  REQUIRE(y(3, 0) == Catch::Approx((10 + 11 + 14 + 15) / 4.0));
}

TEST_CASE("losses match hand-computed values") {
  Mat y(2, 1), t(2, 1);
  y << 1.0, 3.0;
  t << 0.0, 1.0;
  Mat dy;
  REQUIRE(nn::mse_loss(y, t, &dy) == Catch::Approx((1.0 + 4.0) / 2.0));
  REQUIRE(dy(0, 0) == Catch::Approx(2.0 * 1.0 / 2.0));
  REQUIRE(dy(1, 0) == Catch::Approx(2.0 * 2.0 / 2.0));

  Mat p(1, 2), lbl(1, 2);
  p << 0.8, 0.3;
  lbl << 1.0, 0.0;
  double bce = nn::bce_loss(p, lbl);
  double naive = (-std::log(0.8) - std::log(0.7)) / 2.0;
  REQUIRE(bce == Catch::Approx(naive).epsilon(1e-12));
}

TEST_CASE("softmax cross entropy agrees with log-sum-exp oracle") {
  Mat logits = random_mat(4, 3, 7);
  std::vector<int> labels = {1, 3, 0};
  double loss = nn::softmax_ce_loss(logits, labels);
  double naive = 0;
  for (int c = 0; c < 3; ++c) {
    double mx = logits.col(c).maxCoeff();
    double lse = std::log((logits.col(c).array() - mx).exp().sum()) + mx;
    naive += lse - logits(labels[std::size_t(c)], c);
  }
  naive /= 3.0;
  REQUIRE(loss == Catch::Approx(naive).epsilon(1e-12));
}

TEST_CASE("parameter serialization round trip") {
  nn::Sequential a;
  Rng rng(5);
  a.add<nn::Dense>(7, 4)->init_he(rng);
  a.add<nn::ReLU>();
  a.add<nn::Dense>(4, 2)->init_he(rng);
  std::stringstream buf;
  nn::write_params(a, buf);

  nn::Sequential b;
  b.add<nn::Dense>(7, 4);
  b.add<nn::ReLU>();
  b.add<nn::Dense>(4, 2);
  nn::read_params(b, buf);
  Mat x = random_mat(7, 3, 6);
  REQUIRE((a.forward(x) - b.forward(x)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("serialization rejects mismatched shapes") {
  nn::Sequential a;
  a.add<nn::Dense>(3, 3);
  std::stringstream buf;
  nn::write_params(a, buf);
  nn::Sequential b;
  b.add<nn::Dense>(3, 4);
  REQUIRE_THROWS(nn::read_params(b, buf));
}

TEST_CASE("adam and sgd reduce a quadratic") {
  for (bool use_adam : {false, true}) {
    nn::Sequential net;
    Rng rng(8);
    net.add<nn::Dense>(3, 1)->init_he(rng);
    Mat x = random_mat(3, 16, 9);
    Mat t = 2.0 * x.row(0) + 0.5 * x.row(1) - x.row(2);
    std::unique_ptr<nn::Optimizer> opt;
    if (use_adam)
      opt = std::make_unique<nn::Adam>(0.05);
    else
      opt = std::make_unique<nn::Sgd>(0.05);
    auto params = net.params();
    double first = 0, last = 0;
    for (int it = 0; it < 200; ++it) {
      nn::FwdCtx ctx;
      Mat y = net.forward(x, ctx);
      Mat dy;
      double loss = nn::mse_loss(y, t, &dy);
      if (it == 0) first = loss;
      last = loss;
      nn::Grads g = net.make_grads();
      net.backward(dy, ctx, &g);
      opt->step(params, g);
    }
    REQUIRE(last < 0.01 * first);
  }
}

TEST_CASE("const forward is reentrant across contexts") {
  nn::Sequential net;
  Rng rng(10);
  net.add<nn::Dense>(4, 4)->init_he(rng);
  net.add<nn::ReLU>();
  const nn::Sequential& cnet = net;
  Mat x1 = random_mat(4, 2, 11), x2 = random_mat(4, 2, 12);
  nn::FwdCtx c1, c2;
  Mat y1 = cnet.forward(x1, c1);
  cnet.forward(x2, c2);  // must not disturb the first context
  Mat dx = cnet.backward(Mat::Ones(4, 2), c1, nullptr);
  nn::FwdCtx c3;
  Mat y1b = cnet.forward(x1, c3);
  Mat dxb = cnet.backward(Mat::Ones(4, 2), c3, nullptr);
  REQUIRE((y1 - y1b).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE((dx - dxb).cwiseAbs().maxCoeff() == 0.0);
}
