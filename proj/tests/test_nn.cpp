#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sneakdoor/datasets.hpp"
#include "sneakdoor/errors.hpp"
#include "sneakdoor/nn.hpp"
#include "test_util.hpp"

using namespace sneakdoor;
namespace fs = std::filesystem;

namespace {

nn::Architecture linear_arch(ImageShape in, std::size_t embed) {
  nn::Architecture a;
  a.kind = nn::ArchKind::linear;
  a.widths = {embed};
  a.input = in;
  return a;
}

fs::path temp_dir(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("sneakdoor_nn_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(InitModel, DeterministicPerSeed) {
  const nn::Architecture arch;
  const auto a = nn::init_model(arch, 4, 11);
  const auto b = nn::init_model(arch, 4, 11);
  const auto c = nn::init_model(arch, 4, 12);
  EXPECT_EQ(a.flat_params(), b.flat_params());
  EXPECT_NE(a.flat_params(), c.flat_params());
}

TEST(InitModel, LinearParamCount) {
  const std::size_t e = 3;
  const auto m = nn::init_model(linear_arch({1, 2, 2}, e), 2, 1);
  EXPECT_EQ(m.embed_dim, e);
  EXPECT_EQ(m.num_params(), 4 * e + e + e * 2 + 2);
}

TEST(InitModel, ConvSmallEmbedDim) {
  const auto m = nn::init_model(nn::Architecture{}, 4, 1);
  EXPECT_EQ(m.embed_dim, 16u * 4 * 4);
}

TEST(Forward, IdentityLinearEmbedsInput) {
  auto m = nn::init_model(linear_arch({1, 2, 2}, 4), 2, 1);
  std::fill(m.feature_params.begin(), m.feature_params.end(), 0.0);
  for (std::size_t i = 0; i < 4; ++i) m.feature_params[i * 4 + i] = 1.0;
  Tensor x({2, 1, 2, 2}, std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.9, 0.8, 0.7, 0.6});
  const auto f = nn::forward_features(m, x);
  ASSERT_EQ(f.shape(), (Shape{2, 4}));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_DOUBLE_EQ(f[k], x[k]);
}

TEST(Forward, ZeroInputConvGivesZeroEmbedding) {
  const auto m = nn::init_model(nn::Architecture{}, 4, 5);
  const auto f = nn::forward_features(m, Tensor({3, 1, 16, 16}, 0.0));
  for (double v : f.values()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandSetMlp) {
  nn::Architecture a;
  a.kind = nn::ArchKind::mlp;
  a.widths = {2, 2};
  a.input = {1, 1, 2};
  auto m = nn::init_model(a, 2, 1);
  // W1 = [[1, -1], [2, 0.5]], b1 = [0, -1]; W2 = [[1, 1], [-1, 2]], b2 = [0.5, 0]
  m.feature_params = {1, -1, 2, 0.5, 0, -1, 1, 1, -1, 2, 0.5, 0};
  Tensor x({1, 1, 1, 2}, std::vector<double>{0.3, 0.8});
  // h1 = relu([0.3 - 0.8, 0.6 + 0.4 - 1]) = [0, 0]
  // second input: [1, 0.2] -> h1 = relu([0.8, 2.1 - 1]) = [0.8, 1.1]
  //   h2 = relu([0.8 + 1.1 + 0.5, -0.8 + 2.2]) = [2.4, 1.4]
  auto f = nn::forward_features(m, x);
  EXPECT_DOUBLE_EQ(f[0], 0.5);
  EXPECT_DOUBLE_EQ(f[1], 0.0);
  Tensor x2({1, 1, 1, 2}, std::vector<double>{1.0, 0.2});
  f = nn::forward_features(m, x2);
  EXPECT_NEAR(f[0], 2.4, 1e-15);
  EXPECT_NEAR(f[1], 1.4, 1e-15);
}

TEST(Classifier, HandSetHeadAndArgmax) {
  auto m = nn::init_model(linear_arch({1, 1, 2}, 2), 2, 1);
  // W = [[1, 2], [3, -1]], b = [0.5, -0.5]
  m.classifier_params = {1, 2, 3, -1, 0.5, -0.5};
  Tensor emb({1, 2}, std::vector<double>{0.1, 0.9});
  const auto logits = nn::classifier_head(m, emb);
  EXPECT_NEAR(logits[0], 0.1 + 1.8 + 0.5, 1e-15);
  EXPECT_NEAR(logits[1], 0.3 - 0.9 - 0.5, 1e-15);
  EXPECT_EQ(nn::argmax_rows(Tensor({1, 2}, std::vector<double>{2.0, 2.0}))[0], 0);
  EXPECT_EQ(nn::argmax_rows(emb)[0], 1);
}

TEST(CrossEntropy, Oracles) {
  const double expected = -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  EXPECT_NEAR(expected, 0.40761, 1e-4);
  Tensor logits({1, 3}, std::vector<double>{1, 2, 3});
  const std::vector<std::int32_t> label{2};
  EXPECT_NEAR(nn::cross_entropy(logits, label), expected, 1e-12);
  Tensor uniform({1, 5}, 0.7);
  const std::vector<std::int32_t> l0{0};
  EXPECT_NEAR(nn::cross_entropy(uniform, l0), std::log(5.0), 1e-12);
}

TEST(CrossEntropy, DecreasesWithMargin) {
  double prev = std::numeric_limits<double>::infinity();
  const std::vector<std::int32_t> l0{0};
  for (double margin : {0.0, 1.0, 2.0, 5.0, 10.0, 30.0}) {
    const double v = nn::cross_entropy(Tensor({1, 3}, std::vector<double>{margin, 0, 0}), l0);
    EXPECT_LT(v, prev);
    prev = v;
  }
  EXPECT_LT(prev, 1e-12);
}

TEST(CrossEntropy, StableOnHugeLogits) {
  const std::vector<std::int32_t> l1{1};
  const double v = nn::cross_entropy(Tensor({1, 2}, std::vector<double>{1e4, 0}), l1);
  EXPECT_NEAR(v, 1e4, 1e-6);
}

TEST(Grad, QuadraticAndConstant) {
  const std::vector<double> p{0.5, -2.0, 3.0};
  const nn::Objective half_sq = [](std::span<const double> x, std::span<double> g) {
    double v = 0;
    for (std::size_t i = 0; i < x.size(); ++i) v += 0.5 * x[i] * x[i], g[i] = x[i];
    return v;
  };
  EXPECT_EQ(nn::grad(half_sq, p), p);
  const nn::Objective flat = [](std::span<const double>, std::span<double>) { return 1.0; };
  for (double g : nn::grad(flat, p)) EXPECT_EQ(g, 0.0);
  const nn::Objective bad = [](std::span<const double>, std::span<double>) { return NAN; };
  EXPECT_THROW(nn::grad(bad, p), NumericError);
}

// Analytic parameter and input gradients against central differences.
TEST(Grad, FiniteDifferencesOnRandomTinyModels) {
  Rng rng(2024);
  double worst = 0.0;
  for (int inst = 0; inst < 24; ++inst) {
    nn::Architecture a;
    a.input = {1 + static_cast<std::size_t>(inst % 2), 4, 4};
    switch (inst % 4) {
      case 0: a.kind = nn::ArchKind::conv_small, a.widths = {2}; break;
      case 1: a.kind = nn::ArchKind::conv_small, a.widths = {2, 3}, a.activation = nn::Activation::tanh; break;
      case 2: a.kind = nn::ArchKind::mlp, a.widths = {5, 3}, a.activation = nn::Activation::tanh; break;
      default: a.kind = nn::ArchKind::linear, a.widths = {3}; break;
    }
    const int k = 3;
    auto model = nn::init_model(a, k, 100 + inst);
    const std::size_t n = 1 + inst % 3;
    Tensor x = testutil::random_tensor({n, a.input.channels, 4, 4}, rng);
    std::vector<std::int32_t> y(n);
    for (auto& v : y) v = static_cast<std::int32_t>(rng.below(k));

    nn::ModelGrad mg;
    Tensor gx;
    nn::classification_backward(model, x, y, &mg, &gx);
    std::vector<double> analytic = mg.features;
    analytic.insert(analytic.end(), mg.classifier.begin(), mg.classifier.end());
    auto loss_at = [&](const std::vector<double>& flat) {
      auto m = model;
      m.set_flat_params(flat);
      return nn::cross_entropy(nn::forward_logits(m, x), y);
    };
    const auto numeric = testutil::central_diff(loss_at, model.flat_params());
    worst = std::max(worst, testutil::max_rel_error(analytic, numeric));

    auto loss_x = [&](const std::vector<double>& xs) {
      return nn::cross_entropy(nn::forward_logits(model, Tensor(x.shape(), xs)), y);
    };
    const auto numeric_x = testutil::central_diff(loss_x, x.storage());
    worst = std::max(worst, testutil::max_rel_error(gx.storage(), numeric_x));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(Grad, GeneratorBackwardMatchesFiniteDifferences) {
  Rng rng(8);
  const auto gen = nn::init_generator({1, 4, 4}, {4, 1.0}, 5);
  const Tensor x = testutil::random_tensor({2, 1, 4, 4}, rng);
  const Tensor w = testutil::random_tensor({2, 1, 4, 4}, rng, -1, 1);
  auto value = [&](const std::vector<double>& p) {
    auto g = gen;
    g.params = p;
    const Tensor out = nn::generator_forward(g, x);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += w[i] * out[i];
    return s;
  };
  nn::Network::Tape tape;
  nn::generator_forward(gen, x, &tape);
  std::vector<double> analytic(gen.params.size(), 0.0);
  gen.net.backward(gen.params, tape, w, analytic, false);
  EXPECT_LT(testutil::max_rel_error(analytic, testutil::central_diff(value, gen.params)), 1e-4);
}

TEST(Sgd, Arithmetic) {
  nn::SgdState st;
  std::vector<double> p{1.0};
  const std::vector<double> g{0.5};
  nn::sgd_step(p, g, {0.0, 0.9, 0.0}, st);
  EXPECT_EQ(p[0], 1.0);
  nn::SgdState plain;
  nn::sgd_step(p, g, {0.1, 0.0, 0.0}, plain);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
}

TEST(Sgd, MomentumUnrolled) {
  // v1 = g, p1 = p0 - lr g; v2 = 0.9 v1 + g, p2 = p1 - lr v2
  const double p0 = 1.0, g = 0.5, lr = 0.1;
  const double v1 = g, p1 = p0 - lr * v1;
  const double v2 = 0.9 * v1 + g, p2 = p1 - lr * v2;
  nn::SgdState st;
  std::vector<double> p{p0};
  const std::vector<double> gv{g};
  nn::sgd_step(p, gv, {lr, 0.9, 0.0}, st);
  EXPECT_DOUBLE_EQ(p[0], p1);
  nn::sgd_step(p, gv, {lr, 0.9, 0.0}, st);
  EXPECT_DOUBLE_EQ(p[0], p2);
  EXPECT_NEAR(p2, 0.855, 1e-15);
}

TEST(Sgd, RejectsNonFinite) {
  nn::SgdState st;
  std::vector<double> p{1.0};
  const std::vector<double> g{INFINITY};
  EXPECT_THROW(nn::sgd_step(p, g, {}, st), NumericError);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  nn::AdamState st;
  std::vector<double> p{1.0, -1.0};
  const std::vector<double> g{0.3, -2.0};
  nn::adam_step(p, g, {0.1, 0.9, 0.999, 1e-8}, st);
  EXPECT_NEAR(p[0], 1.0 - 0.1 * 0.3 / (0.3 + 1e-8), 1e-12);
  EXPECT_NEAR(p[1], -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-12);
  EXPECT_EQ(st.step, 1);
}

TEST(Train, SeparableBlobsReachHighAccuracy) {
  auto ds = generate_blobs(2, 40, {1, 8, 8}, 0.05, 3);
  nn::Architecture a;
  a.input = {1, 8, 8};
  nn::TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.seed = 4;
  const auto r = nn::train_classifier(nn::init_model(a, 2, 9), ds, cfg);
  const auto preds = nn::predict(r.model, ds.images());
  std::size_t ok = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) ok += preds[i] == ds.labels()[i];
  EXPECT_GE(static_cast<double>(ok) / preds.size(), 0.99);
  EXPECT_EQ(r.epoch_losses.size(), 50u);
}

TEST(Train, ZeroEpochsAndDeterminism) {
  auto ds = generate_blobs(2, 10, {1, 4, 4}, 0.1, 1);
  nn::Architecture a;
  a.input = {1, 4, 4};
  a.widths = {2};
  const auto init = nn::init_model(a, 2, 3);
  nn::TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(nn::train_classifier(init, ds, cfg).model, init);
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 10;
  EXPECT_EQ(nn::train_classifier(init, ds, cfg).model, nn::train_classifier(init, ds, cfg).model);
}

TEST(Checkpoint, ModelAndGeneratorRoundTrip) {
  const auto dir = temp_dir("ckpt");
  const auto m = nn::init_model(nn::Architecture{}, 4, 21);
  nn::save_model(dir / "m.ckpt", m);
  EXPECT_EQ(nn::load_model(dir / "m.ckpt"), m);
  const auto g = nn::init_generator({1, 16, 16}, {8, 0.5}, 22);
  nn::save_generator(dir / "g.ckpt", g);
  EXPECT_EQ(nn::load_generator(dir / "g.ckpt"), g);
  EXPECT_THROW(nn::load_generator(dir / "m.ckpt"), FormatError);
  // Truncate the payload.
  const auto size = fs::file_size(dir / "m.ckpt");
  fs::resize_file(dir / "m.ckpt", size - 9);
  EXPECT_THROW(nn::load_model(dir / "m.ckpt"), FormatError);
}

TEST(Architecture, JsonRoundTripAndValidation) {
  nn::Architecture a;
  a.kind = nn::ArchKind::mlp;
  a.widths = {7, 5};
  a.activation = nn::Activation::tanh;
  EXPECT_EQ(nn::architecture_from_json(nn::to_json(a)), a);
  a.widths.clear();
  EXPECT_THROW(nn::validate(a), ArgumentError);
}
