#include <doctest.h>

#include <cmath>
#include <fstream>

#include "mqc/augment.hpp"
#include "mqc/probe.hpp"
#include "test_helpers.hpp"

using namespace mqc;
using mqc::testing::gaussian_phantom;

namespace {

std::vector<LayerSpec> toy_arch(int in, int out) {
  LayerSpec h;
  h.in = in;
  h.out = 16;
  h.relu = true;
  h.batch_norm = true;
  LayerSpec o;
  o.in = 16;
  o.out = out;
  return {h, o};
}

/// Synthetic regression set: score is a smooth function of the features.
PretrainData make_pretrain_data(int n, std::uint64_t seed) {
  PretrainData d;
  d.x.resize(n, 4);
  d.scores.resize(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 4; ++j) d.x(i, j) = rng.uniform(-1, 1);
    d.scores[i] = 2.0 + 1.5 * d.x(i, 0) - 0.8 * d.x(i, 1) +
                  0.5 * d.x(i, 2) * d.x(i, 3);
  }
  return d;
}

}  // namespace

TEST_CASE("feature extractor basics") {
  CHECK(feature_count() == 8);
  CHECK(static_cast<int>(feature_names().size()) == 8);

  const Volume3D v = gaussian_phantom({24, 24, 24});
  const auto f = extract_features(v);
  REQUIRE(static_cast<int>(f.size()) == 8);
  for (const double x : f) CHECK(std::isfinite(x));

  SUBCASE("deterministic") { CHECK(extract_features(v) == f); }

  SUBCASE("constant volume is handled") {
    Volume3D c = Volume3D::zeros({8, 8, 8});
    const auto fc = extract_features(c);
    for (const double x : fc) CHECK(std::isfinite(x));
  }

  SUBCASE("motion corruption raises high-frequency energy features") {
    MotionParams params;
    params.n_transforms_min = params.n_transforms_max = 3;
    const MotionTrace trace = sample_motion_trace(params, 24, 19);
    const Volume3D bad = corrupt_with_motion(v, trace);
    const auto fb = extract_features(bad);
    // per-axis HF ratios are the first three features
    CHECK(fb[0] + fb[1] + fb[2] > f[0] + f[1] + f[2]);
  }
}

TEST_CASE("mlp construction, save/load, and hashing") {
  MlpModel m = MlpModel::make(toy_arch(4, 50), 3);
  m.validate();
  CHECK(m.input_dim() == 4);
  CHECK(m.output_dim() == 50);

  const std::uint64_t h = param_hash(m);
  CHECK(param_hash(m) == h);
  MlpModel m2 = MlpModel::make(toy_arch(4, 50), 4);
  CHECK(param_hash(m2) != h);

  mqc::testing::TempDir tmp("model");
  m.input_mean = Eigen::VectorXd::Constant(4, 0.5);
  m.input_std = Eigen::VectorXd::Constant(4, 2.0);
  save_model(m, tmp.str("m.bin"), tmp.str("m.json"));
  const MlpModel back = load_model(tmp.str("m.bin"), tmp.str("m.json"));
  CHECK(param_hash(back) == param_hash(m));
  CHECK(back.feature_version == m.feature_version);
  CHECK(back.bins.n_bins == m.bins.n_bins);
  CHECK(back.input_mean.isApprox(m.input_mean));
  REQUIRE(back.layers.size() == m.layers.size());
  CHECK(back.layers[0].w.isApprox(m.layers[0].w));
  CHECK(back.layers[0].bn_run_mean.isApprox(m.layers[0].bn_run_mean));

  SUBCASE("corrupted binary is rejected") {
    save_model(m, tmp.str("c.bin"), tmp.str("c.json"));
    std::ofstream f(tmp.str("c.bin"), std::ios::binary | std::ios::trunc);
    f << "junk";
    f.close();
    CHECK_THROWS_AS(load_model(tmp.str("c.bin"), tmp.str("c.json")),
                    CorruptFileError);
  }
}

TEST_CASE("forward pass produces valid softmax rows") {
  MlpModel m = MlpModel::make(toy_arch(4, 10), 1);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(8, 4);
  const Eigen::MatrixXd p = mlp_forward(m, x, Mode::Eval);
  REQUIRE(p.rows() == 8);
  REQUIRE(p.cols() == 10);
  for (int i = 0; i < p.rows(); ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(p.row(i).minCoeff() > 0.0);
  }
  // eval mode is deterministic and state-free
  const Eigen::MatrixXd p2 = mlp_forward(m, x, Mode::Eval);
  CHECK(p.isApprox(p2));

  const Eigen::MatrixXd e = mlp_embed(m, x);
  CHECK(e.rows() == 8);
  CHECK(e.cols() == 16);
}

TEST_CASE("analytic gradients match finite differences") {
  // dropout off so the loss is a deterministic function of the parameters
  auto arch = toy_arch(3, 6);
  MlpModel m = MlpModel::make(arch, 9);
  const int n = 7;
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(n, 3);
  Eigen::MatrixXd targets = Eigen::MatrixXd::Zero(n, 6);
  Rng rng(5);
  for (int i = 0; i < n; ++i) {
    double s = 0.0;
    for (int j = 0; j < 6; ++j) {
      targets(i, j) = rng.uniform(0.01, 1.0);
      s += targets(i, j);
    }
    targets.row(i) /= s;
  }

  Gradients g;
  mlp_loss_and_gradients(m, x, targets, g, Mode::Train);

  auto loss_at = [&](MlpModel& model) {
    Gradients scratch;
    return mlp_loss_and_gradients(model, x, targets, scratch, Mode::Train);
  };

  const double eps = 1e-6;
  double max_rel = 0.0;
  auto check_param = [&](double& p, double analytic) {
    const double orig = p;
    p = orig + eps;
    const double lp = loss_at(m);
    p = orig - eps;
    const double lm = loss_at(m);
    p = orig;
    const double numeric = (lp - lm) / (2 * eps);
    // parameters with an exactly-zero gradient (e.g. a bias feeding batch
    // norm) are compared absolutely; finite differences only resolve ~1e-10
    if (std::abs(analytic) < 1e-7 && std::abs(numeric) < 1e-7) return;
    const double denom = std::abs(analytic) + std::abs(numeric);
    max_rel = std::max(max_rel, std::abs(analytic - numeric) / denom);
  };

  for (std::size_t l = 0; l < m.layers.size(); ++l) {
    auto& layer = m.layers[l];
    for (int r = 0; r < layer.w.rows(); r += 3)
      for (int c = 0; c < layer.w.cols(); c += 2)
        check_param(layer.w(r, c), g.layers[l].w(r, c));
    for (int i = 0; i < layer.b.size(); i += 2)
      check_param(layer.b(i), g.layers[l].b(i));
    if (layer.spec.batch_norm) {
      for (int i = 0; i < layer.bn_gamma.size(); i += 3)
        check_param(layer.bn_gamma(i), g.layers[l].bn_gamma(i));
      for (int i = 0; i < layer.bn_beta.size(); i += 3)
        check_param(layer.bn_beta(i), g.layers[l].bn_beta(i));
    }
  }
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("softmax + KL logits gradient equals (p - t) / n") {
  // single linear layer, no BN/ReLU: d(loss)/d(b) is exactly the summed
  // per-sample (p - t) / n
  LayerSpec lin;
  lin.in = 4;
  lin.out = 5;
  MlpModel m = MlpModel::make({lin}, 2);
  const int n = 6;
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(n, 4);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(n, 5);
  for (int i = 0; i < n; ++i) t(i, i % 5) = 1.0;

  const Eigen::MatrixXd p = mlp_forward(m, x, Mode::Eval);
  Gradients g;
  mlp_loss_and_gradients(m, x, t, g, Mode::Eval);
  const Eigen::VectorXd expect = ((p - t).colwise().sum() / n).transpose();
  CHECK((g.layers[0].b - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("AdamW drives the loss down on a toy problem") {
  MlpModel m = MlpModel::make(toy_arch(4, 8), 1);
  AdamW opt(m, 1e-2, 0.01);
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(32, 4);
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(32, 8);
  for (int i = 0; i < 32; ++i) t(i, i % 8) = 1.0;

  Gradients g;
  const double initial = mlp_loss_and_gradients(m, x, t, g, Mode::Train);
  double last = initial;
  for (int step = 0; step < 200; ++step) {
    last = mlp_loss_and_gradients(m, x, t, g, Mode::Train);
    opt.step(m, g);
  }
  CHECK(last < 0.5 * initial);
}

TEST_CASE("pretrain learns a predictable score and reports history") {
  const PretrainData train = make_pretrain_data(400, 1);
  const PretrainData val = make_pretrain_data(100, 2);
  BinSpec bins;
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.batch_size = 32;
  cfg.max_epochs = 60;
  cfg.seed = 7;
  const PretrainResult res = pretrain(train, val, toy_arch(4, bins.n_bins),
                                      bins, cfg);
  CHECK(res.best_val_r2 > 0.5);
  CHECK(!res.history.empty());
  CHECK(res.best_epoch >= 0);
  // input normalization was fitted
  CHECK(res.best_model.input_mean.size() == 4);

  SUBCASE("training is deterministic under a fixed seed") {
    const PretrainResult res2 = pretrain(train, val, toy_arch(4, bins.n_bins),
                                         bins, cfg);
    CHECK(param_hash(res2.best_model) == param_hash(res.best_model));
    CHECK(res2.best_val_r2 == res.best_val_r2);
  }

  SUBCASE("transfer keeps the trunk frozen and fits the head") {
    MlpModel trunk = res.best_model;
    const std::uint64_t trunk_hash = param_hash(trunk);

    auto classify = [](const PretrainData& d) {
      ClassifyData c;
      c.x = d.x;
      c.labels.resize(d.scores.size());
      for (std::size_t i = 0; i < d.scores.size(); ++i)
        c.labels[i] = d.scores[i] < 1.3 ? 0 : (d.scores[i] < 2.7 ? 1 : 2);
      return c;
    };
    const ClassifyData ctrain = classify(train);
    const ClassifyData cval = classify(val);

    TrainConfig tcfg;
    tcfg.learning_rate = 3e-3;
    tcfg.batch_size = 24;
    tcfg.max_epochs = 40;
    tcfg.seed = 3;
    const TransferResult tr =
        transfer_train(trunk, ctrain, cval, 3, tcfg, 0.3, 16);
    CHECK(param_hash(trunk) == trunk_hash);
    CHECK(tr.best_val_balanced_accuracy > 1.0 / 3.0);
    CHECK(tr.val_confusion.total() == static_cast<long long>(cval.labels.size()));
    CHECK(tr.val_f1.size() == 3);

    const TransferResult sc = scratch_train(toy_arch(4, bins.n_bins), ctrain,
                                            cval, 3, tcfg, 0.3, 16);
    CHECK(sc.best_val_balanced_accuracy > 0.0);

    const ComparisonReport rep = compare_transfer_vs_scratch(
        trunk, toy_arch(4, bins.n_bins), ctrain, cval, 3, tcfg, tcfg, {1, 2});
    // 2 arms x 2 seeds + 2 median rows
    CHECK(rep.rows.size() == 6);
    const std::string csvtext = rep.to_csv();
    CHECK(csvtext.find("transfer") != std::string::npos);
    CHECK(csvtext.find("scratch") != std::string::npos);
    CHECK(csvtext.find("_median") != std::string::npos);
  }
}

TEST_CASE("train config validation") {
  TrainConfig cfg;
  cfg.validate();
  TrainConfig bad = cfg;
  bad.learning_rate = 0.0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  TrainConfig bad2 = cfg;
  bad2.batch_size = 0;
  CHECK_THROWS_AS(bad2.validate(), ArgumentError);
}
