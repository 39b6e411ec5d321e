#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "faceleak/probes.hpp"

using namespace faceleak;

namespace {

nn::Mat random_mat(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  nn::Mat m(r, c);
  Rng rng(seed);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("probe spec defaults follow the recipes") {
  ProbeSpec b = ProbeSpec::defaults(ProbeKind::Binary, 128);
  REQUIRE(b.hidden == std::vector<int>{256, 256, 256});
  REQUIRE(b.output_dim == 1);
  REQUIRE(b.optimizer == "adam");
  REQUIRE(b.lr == 1e-3);
  REQUIRE(b.epochs == 20);
  REQUIRE(b.batch == 32);

  ProbeSpec h = ProbeSpec::defaults(ProbeKind::HistogramFromId, 128);
  REQUIRE(h.hidden == std::vector<int>{8, 8});
  REQUIRE(h.output_dim == 30);
  REQUIRE(h.lr == 1e-6);

  ProbeSpec l = ProbeSpec::defaults(ProbeKind::LandmarksFromId, 128);
  REQUIRE(l.hidden == std::vector<int>{256, 256});
  REQUIRE(l.output_dim == 136);
  REQUIRE(l.optimizer == "sgd");
  REQUIRE(l.epochs == 150);
  REQUIRE(l.batch == 16);

  ProbeSpec c = ProbeSpec::defaults(ProbeKind::LandmarksFromImage, 0);
  REQUIRE(c.conv_channels == std::vector<int>{16, 32, 64, 64, 128});
  REQUIRE(c.input_dim == 3 * 224 * 224);
  REQUIRE(c.output_dim == 136);
}

TEST_CASE("probe spec json round trip") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::HistogramFromId, 64);
  s.epochs = 7;
  s.lr = 0.123;
  ProbeSpec back = ProbeSpec::from_json(s.to_json());
  REQUIRE(back.kind == s.kind);
  REQUIRE(back.input_dim == s.input_dim);
  REQUIRE(back.hidden == s.hidden);
  REQUIRE(back.epochs == 7);
  REQUIRE(back.lr == 0.123);
  REQUIRE(back.hist == s.hist);
}

TEST_CASE("untrained binary probe answers one half on the zero descriptor") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::Binary, 16);
  ProbeModel m = ProbeModel::build(s, 1);
  // biases are zero at init, so the sigmoid sits exactly at 0.5
  REQUIRE(predict_binary(m, Eigen::VectorXd::Zero(16)) == 0.5);
}

TEST_CASE("histogram probe output rows sum to one per channel") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::HistogramFromId, 8);
  ProbeModel m = ProbeModel::build(s, 2);
  Histogram h = predict_histogram(m, random_mat(8, 1, 3).col(0));
  h.check_normalized();
}

TEST_CASE("training reduces loss and logs every epoch") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::Binary, 4);
  s.epochs = 30;
  nn::Mat x = random_mat(4, 64, 5);
  nn::Mat t(1, 64);
  for (int i = 0; i < 64; ++i) t(0, i) = x(0, i) > 0 ? 1.0 : 0.0;
  ProbeModel m = train_probe(s, x, t, 6, "fp-train");
  REQUIRE(int(m.training_log.size()) == 30);
  REQUIRE(m.training_log.back() < 0.5 * m.training_log.front());
}

TEST_CASE("zero-epoch training is a no-op with an empty log") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::Binary, 4);
  s.epochs = 0;
  nn::Mat x = random_mat(4, 8, 7), t = nn::Mat::Zero(1, 8);
  ProbeModel m = train_probe(s, x, t, 8, "fp");
  REQUIRE(m.training_log.empty());
  REQUIRE(predict_binary(m, Eigen::VectorXd::Zero(4)) == 0.5);
}

TEST_CASE("train_probe validates shapes") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::Binary, 4);
  REQUIRE_THROWS_AS(train_probe(s, nn::Mat(4, 0), nn::Mat(1, 0), 0, "fp"), InputError);
  REQUIRE_THROWS_AS(train_probe(s, random_mat(4, 3, 1), nn::Mat::Zero(1, 2), 0, "fp"),
                    ConfigError);
  REQUIRE_THROWS_AS(train_probe(s, random_mat(5, 3, 1), nn::Mat::Zero(1, 3), 0, "fp"),
                    ConfigError);
  REQUIRE_THROWS_AS(train_probe(s, random_mat(4, 3, 1), nn::Mat::Zero(2, 3), 0, "fp"),
                    ConfigError);
}

TEST_CASE("evaluation refuses the training fingerprint") {
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::Binary, 4);
  s.epochs = 1;
  nn::Mat x = random_mat(4, 8, 9), t = nn::Mat::Zero(1, 8);
  ProbeModel m = train_probe(s, x, t, 10, "same-data");
  BaselineStats b = fit_baseline(ProbeKind::Binary, t);
  REQUIRE_THROWS_AS(evaluate_probe(m, x, t, "same-data", b), UsageError);
  REQUIRE_NOTHROW(evaluate_probe(m, x, t, "other-data", b));
}

TEST_CASE("majority baseline for binary probes") {
  nn::Mat t(1, 10);
  t << 1, 1, 1, 1, 1, 1, 1, 0, 0, 0;
  BaselineStats b = fit_baseline(ProbeKind::Binary, t);
  nn::Mat test(1, 4);
  test << 1, 1, 0, 0;
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::Binary, 2);
  s.epochs = 0;
  ProbeModel m = train_probe(s, nn::Mat::Zero(2, 10), t, 0, "fp");
  ProbeMetrics metrics = evaluate_probe(m, nn::Mat::Zero(2, 4), test, "fp2", b);
  REQUIRE(metrics.baseline == 50.0);  // majority class 1 matches half the test labels
}

TEST_CASE("probe save/load round trip preserves predictions") {
  namespace fs = std::filesystem;
  ProbeSpec s = ProbeSpec::defaults(ProbeKind::LandmarksFromId, 8);
  s.epochs = 2;
  nn::Mat x = random_mat(8, 16, 11), t = random_mat(136, 16, 12);
  ProbeModel m = train_probe(s, x, t, 13, "fp-save");
  fs::path dir = fs::temp_directory_path() / "faceleak_probe_test";
  fs::remove_all(dir);
  save_probe(m, dir);
  ProbeModel back = load_probe(dir);
  REQUIRE(back.data_fingerprint == "fp-save");
  Eigen::VectorXd d = random_mat(8, 1, 14).col(0);
  REQUIRE((predict(m, d) - predict(back, d)).cwiseAbs().maxCoeff() == 0.0);
  fs::remove_all(dir);
}

TEST_CASE("loading a missing probe names the dependency") {
  REQUIRE_THROWS_AS(load_probe("/nonexistent/probe/dir"), DependencyError);
}

TEST_CASE("image histogram target is the normalized counting histogram") {
  ImageTensor img(8, 8, RangeTag::Unit);
  Rng rng(15);
  for (Eigen::Index i = 0; i < img.data.size(); ++i) img.data[i] = rng.uniform();
  HistogramSpec spec;
  Eigen::VectorXd t = image_histogram_target(img, spec);
  REQUIRE(t.size() == 30);
  ImageTensor b = img.to_byte();
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd channel = b.data.segment(Eigen::Index(c) * 64, 64);
    Eigen::VectorXd expect = hard_histogram(channel, spec) / 64.0;
    REQUIRE((t.segment(c * 10, 10) - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}
