#include <catch2/catch_amalgamated.hpp>

#include "faceleak/soft_histogram.hpp"

using namespace faceleak;

namespace {

// Brute-force 1-D optimal transport between two normalized histograms with
// |i-j| ground cost: greedy north-west-corner fill, optimal in 1-D.
double ot_emd_1d(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  Eigen::VectorXd supply = a, demand = b;
  double cost = 0;
  int i = 0, j = 0;
  while (i < supply.size() && j < demand.size()) {
    double moved = std::min(supply[i], demand[j]);
    cost += moved * std::abs(i - j);
    supply[i] -= moved;
    demand[j] -= moved;
    if (supply[i] <= 1e-15) ++i;
    if (demand[j] <= 1e-15) ++j;
  }
  return cost;
}

Histogram one_hot(int k, const HistogramSpec& spec) {
  Histogram h;
  h.spec = spec;
  h.bins = Eigen::MatrixXd::Zero(3, spec.n);
  h.bins.col(k).setConstant(1.0);
  h.normalized = true;
  return h;
}

}  // namespace

TEST_CASE("hard histogram counts and boundary convention") {
  HistogramSpec spec;  // [0,255], 10 bins
  Eigen::VectorXd v(5);
  v << 0.0, 25.5, 25.4, 255.0, 128.0;
  Eigen::VectorXd h = hard_histogram(v, spec);
  REQUIRE(h.sum() == 5.0);
  REQUIRE(h[0] == 2.0);  // 0.0 and 25.4; the tie at 25.5 goes up
  REQUIRE(h[1] == 1.0);
  REQUIRE(h[5] == 1.0);
  REQUIRE(h[9] == 1.0);  // max lands in the last (closed) bin
}

TEST_CASE("hard histogram rejects out-of-range values") {
  HistogramSpec spec;
  Eigen::VectorXd v(1);
  v << -0.001;
  REQUIRE_THROWS_AS(hard_histogram(v, spec), InputError);
  v << 255.001;
  REQUIRE_THROWS_AS(hard_histogram(v, spec), InputError);
}

TEST_CASE("spec validation") {
  HistogramSpec s;
  s.max = s.min;
  REQUIRE_THROWS_AS(s.validate(), InputError);
  s = {};
  s.n = 0;
  REQUIRE_THROWS_AS(s.validate(), InputError);
  s = {};
  s.sigma = 0;
  REQUIRE_THROWS_AS(s.validate(), InputError);
}

TEST_CASE("sharp soft histogram matches hard histogram away from boundaries") {
  HistogramSpec spec;
  spec.sigma = 50.0;
  double delta = spec.delta();
  Rng rng(123);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd v(100);
    for (int j = 0; j < 100; ++j) {
      // keep samples at least delta/4 away from every bin edge
      double x;
      do {
        x = rng.uniform(0.0, 255.0);
      } while (std::abs(x / delta - std::round(x / delta)) * delta < delta / 4.0);
      v[j] = x;
    }
    Eigen::VectorXd hard = hard_histogram(v, spec);
    Eigen::VectorXd soft = soft_histogram(v, spec);
    REQUIRE((hard - soft).cwiseAbs().maxCoeff() < 1e-3);
  }
}

TEST_CASE("telescoping mass identity") {
  HistogramSpec spec;
  for (double sigma : {1.85, 10.0, 50.0}) {
    spec.sigma = sigma;
    Rng rng(5);
    Eigen::VectorXd v(200);
    for (int j = 0; j < 200; ++j) v[j] = rng.uniform(0.0, 255.0);
    double total = soft_histogram(v, spec).sum();
    double expected = 0;
    for (int j = 0; j < 200; ++j)
      expected += sigmoid(sigma * (v[j] - spec.min)) - sigmoid(sigma * (v[j] - spec.max));
    REQUIRE(total == Catch::Approx(expected).margin(1e-6));
  }
}

TEST_CASE("softness decreases monotonically with sigma") {
  // distance between soft and hard histograms shrinks as sigma grows
  HistogramSpec spec;
  Rng rng(9);
  Eigen::VectorXd v(150);
  for (int j = 0; j < 150; ++j) v[j] = rng.uniform(1.0, 254.0);
  Eigen::VectorXd hard = hard_histogram(v, spec);
  double prev = std::numeric_limits<double>::infinity();
  for (double sigma : {1.85, 10.0, 50.0, 200.0}) {
    spec.sigma = sigma;
    double dist = (hard - soft_histogram(v, spec)).norm();
    REQUIRE(dist < prev);
    prev = dist;
  }
}

TEST_CASE("soft histogram gradient matches finite differences") {
  HistogramSpec spec;
  spec.sigma = 1.85;
  Rng rng(77);
  Eigen::VectorXd v(20);
  for (int j = 0; j < 20; ++j) v[j] = rng.uniform(0.0, 255.0);
  Eigen::VectorXd dh(spec.n);
  for (int k = 0; k < spec.n; ++k) dh[k] = rng.uniform(-1.0, 1.0);

  Eigen::VectorXd analytic = soft_histogram_backward(v, spec, dh);
  double eps = 1e-5;
  for (int j = 0; j < 20; ++j) {
    Eigen::VectorXd vp = v, vm = v;
    vp[j] += eps;
    vm[j] -= eps;
    double fd = (dh.dot(soft_histogram(vp, spec)) - dh.dot(soft_histogram(vm, spec))) /
                (2 * eps);
    REQUIRE(analytic[j] == Catch::Approx(fd).margin(1e-6));
  }
}

TEST_CASE("image histogram is near-normalized and matches per-channel computation") {
  ImageTensor img(8, 8, RangeTag::Unit);
  Rng rng(3);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] = rng.uniform();
  Histogram h = soft_image_histogram(img);
  REQUIRE_FALSE(h.normalized);  // sigmoid tails leak a little mass off-range
  for (int c = 0; c < 3; ++c) REQUIRE(h.bins.row(c).sum() == Catch::Approx(1.0).margin(0.05));
  ImageTensor b = img.to_byte();
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd channel = b.data.segment(Eigen::Index(c) * 64, 64);
    Eigen::VectorXd expect = soft_histogram(channel, h.spec) / 64.0;
    REQUIRE((h.bins.row(c).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("emd equals brute-force transport on all one-hot pairs") {
  HistogramSpec spec;
  for (int i = 0; i < spec.n; ++i)
    for (int j = 0; j < spec.n; ++j) {
      Histogram a = one_hot(i, spec), b = one_hot(j, spec);
      double d = emd(a, b);
      REQUIRE(d == double(std::abs(i - j)));
      Eigen::VectorXd va = a.bins.row(0), vb = b.bins.row(0);
      REQUIRE(d == ot_emd_1d(va, vb));
    }
}

TEST_CASE("emd matches transport oracle on random histograms and is a metric") {
  HistogramSpec spec;
  Rng rng(21);
  auto random_hist = [&] {
    Histogram h;
    h.spec = spec;
    h.bins.resize(3, spec.n);
    for (int c = 0; c < 3; ++c) {
      for (int k = 0; k < spec.n; ++k) h.bins(c, k) = rng.uniform();
      h.bins.row(c) /= h.bins.row(c).sum();
    }
    h.normalized = true;
    return h;
  };
  for (int trial = 0; trial < 20; ++trial) {
    Histogram a = random_hist(), b = random_hist(), c = random_hist();
    double oracle = 0;
    for (int ch = 0; ch < 3; ++ch)
      oracle += ot_emd_1d(a.bins.row(ch), b.bins.row(ch));
    oracle /= 3.0;
    REQUIRE(emd(a, b) == Catch::Approx(oracle).margin(1e-9));
    REQUIRE(emd(a, b) == Catch::Approx(emd(b, a)).margin(1e-12));
    REQUIRE(emd(a, a) == Catch::Approx(0.0).margin(1e-12));
    REQUIRE(emd(a, c) <= emd(a, b) + emd(b, c) + 1e-12);
  }
}

TEST_CASE("emd refuses mismatched specs and unnormalized inputs") {
  HistogramSpec s1, s2;
  s2.n = 5;
  Histogram a = one_hot(0, s1);
  Histogram b;
  b.spec = s2;
  b.bins = Eigen::MatrixXd::Zero(3, 5);
  b.bins.col(0).setConstant(1.0);
  b.normalized = true;
  REQUIRE_THROWS_AS(emd(a, b), InputError);
  Histogram c = one_hot(1, s1);
  c.normalized = false;
  REQUIRE_THROWS_AS(emd(a, c), InputError);
}

TEST_CASE("histogram json round trip") {
  HistogramSpec spec;
  spec.sigma = 3.5;
  Histogram h;
  h.spec = spec;
  h.bins.resize(3, spec.n);
  Rng rng(2);
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < spec.n; ++k) h.bins(c, k) = rng.uniform();
    h.bins.row(c) /= h.bins.row(c).sum();
  }
  h.normalized = true;
  Histogram back = histogram_from_json(histogram_to_json(h));
  REQUIRE(back.spec == h.spec);
  REQUIRE(back.normalized);
  REQUIRE((back.bins - h.bins).cwiseAbs().maxCoeff() == 0.0);
}
