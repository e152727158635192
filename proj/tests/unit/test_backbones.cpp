#include <gtest/gtest.h>

#include "support.hpp"
#include "tiger/backbones.hpp"
#include "tiger/errors.hpp"
#include "tiger/tensor_archive.hpp"

using namespace tiger;
using namespace testing_support;

namespace {

BackboneSpec stub(std::uint64_t seed) {
  auto s = BackboneSpec::defaults(BackboneKind::TinyStub);
  s.seed = seed;
  return s;
}

VitArch small_vit(std::int64_t image_size, std::int64_t patch, std::int64_t depth) {
  VitArch a;
  a.width = 16;
  a.depth = depth;
  a.heads = 2;
  a.patch = patch;
  a.image_size = image_size;
  a.mlp_dim = 32;
  return a;
}

}  // namespace

TEST(LoadBackbone, TinyStubIsDeterministicPerSeed) {
  auto a = load_backbone(stub(3));
  auto b = load_backbone(stub(3));
  auto c = load_backbone(stub(4));
  EXPECT_EQ(a->digest(), b->digest());
  EXPECT_NE(a->digest(), c->digest());
  EXPECT_EQ(a->digest(), a->load_digest());
}

TEST(LoadBackbone, DefaultTaps) {
  EXPECT_EQ(default_taps(BackboneKind::ClipVit), (std::vector<std::int64_t>{2, 5, 9}));
  EXPECT_EQ(default_taps(BackboneKind::DinoVit), (std::vector<std::int64_t>{1, 5, 9}));
  EXPECT_EQ(default_taps(BackboneKind::TinyStub), (std::vector<std::int64_t>{1, 2, 3, 4}));
}

TEST(LoadBackbone, TinyStubTapShapes) {
  auto b = load_backbone(stub(0));
  auto shapes = b->tap_shapes();
  ASSERT_EQ(shapes.size(), 4u);
  const std::int64_t channels[] = {16, 32, 64, 128};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(shapes[i][0], channels[i]);
    EXPECT_EQ(shapes[i][1], 64 >> (i + 1));
  }
}

TEST(LoadBackbone, TapBeyondDepthIsAConfigError) {
  auto s = stub(0);
  s.layer_taps = {2, 5};
  EXPECT_THROW(load_backbone(s), ConfigError);

  TempDir dir("vit_depth");
  write_synthetic_vit_weights(dir / "v.tta", small_vit(32, 8, 4), 1);
  auto v = BackboneSpec::defaults(BackboneKind::ClipVit);
  v.input_resolution = 32;
  v.weights_path = (dir / "v.tta").string();
  EXPECT_THROW(load_backbone(v), ConfigError);  // taps 2/5/9 on a 4-block model
}

TEST(LoadBackbone, MissingOrCorruptWeights) {
  auto v = BackboneSpec::defaults(BackboneKind::ClipVit);
  v.weights_path = "/nonexistent/weights.tta";
  EXPECT_THROW(load_backbone(v), IoError);

  TempDir dir("vit_corrupt");
  write_synthetic_vit_weights(dir / "v.tta", small_vit(32, 8, 12), 1);
  auto ar = read_archive(dir / "v.tta");
  ar.tensors.erase(ar.tensors.begin());
  const auto dropped = read_archive(dir / "v.tta").tensors.begin()->first;
  write_archive(dir / "broken.tta", ar);
  v.input_resolution = 32;
  v.weights_path = (dir / "broken.tta").string();
  try {
    load_backbone(v);
    FAIL() << "expected a FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(dropped), std::string::npos) << e.what();
  }
}

TEST(BackboneSpec, ValidationRules) {
  auto s = stub(0);
  s.layer_taps = {2, 2};
  EXPECT_THROW(s.validate(), ConfigError);
  s.layer_taps = {0, 1};
  EXPECT_THROW(s.validate(), ConfigError);
  s = stub(0);
  s.weights_path = "x.tta";
  EXPECT_THROW(s.validate(), ConfigError);
  auto v = BackboneSpec::defaults(BackboneKind::DinoVit);
  v.weights_path.reset();
  EXPECT_THROW(v.validate(), ConfigError);
}

TEST(Preprocess, ArithmeticOfTheNormalization) {
  auto s = stub(0);
  auto lo = preprocess(torch::full({1, 3, 64, 64}, -1.0, torch::kFloat64), s);
  auto hi = preprocess(torch::full({1, 3, 64, 64}, 1.0, torch::kFloat64), s);
  EXPECT_TRUE(torch::all(lo == -1.0).item<bool>());
  EXPECT_TRUE(torch::all(hi == 1.0).item<bool>());
}

TEST(Preprocess, GradientMatchesFiniteDifferences) {
  auto s = stub(0);
  s.input_resolution = 6;
  s.mean = {0.4, 0.5, 0.6};
  s.std = {0.2, 0.3, 0.25};
  auto w = randn({1, 3, 6, 6}, 2);
  auto x = randn({1, 3, 4, 4}, 1).requires_grad_(true);
  auto grad = torch::autograd::grad({(preprocess(x, s) * w).sum()}, {x})[0];
  auto f = [&](const oracle::Nd& z) { return (preprocess(oracle::to_tensor(z), s) * w).sum().item<double>(); };
  auto fd = oracle::finite_difference_gradient(f, oracle::from_tensor(x.detach()));
  auto r = oracle::compare("preprocess_grad", fd, oracle::from_tensor(grad), 1e-8);
  EXPECT_TRUE(r.passed) << r.max_abs_error;
}

TEST(Extract, VitTokensReshapeToAGrid) {
  TempDir dir("vit_grid");
  write_synthetic_vit_weights(dir / "v.tta", small_vit(224, 16, 12), 5);
  auto v = BackboneSpec::defaults(BackboneKind::DinoVit);
  v.weights_path = (dir / "v.tta").string();
  auto b = load_backbone(v);
  torch::NoGradGuard ng;
  auto f = extract(*b, preprocess(torch::zeros({1, 3, 224, 224}), v));
  ASSERT_EQ(f.levels.size(), 3u);
  EXPECT_EQ(f.tap_indices, (std::vector<std::int64_t>{1, 5, 9}));
  for (const auto& l : f.levels) EXPECT_EQ(l.sizes(), (std::vector<std::int64_t>{1, 16, 14, 14}));
}

TEST(Extract, DeterministicAndOrderedByTap) {
  auto s = stub(2);
  s.layer_taps = {1, 3};
  auto b = load_backbone(s);
  auto x = preprocess(torch::rand({2, 3, 64, 64}) * 2 - 1, s);
  auto a1 = extract(*b, x);
  auto a2 = extract(*b, x);
  ASSERT_EQ(a1.levels.size(), 2u);
  EXPECT_EQ(a1.levels[0].size(1), 16);
  EXPECT_EQ(a1.levels[1].size(1), 64);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_TRUE(torch::equal(a1.levels[i], a2.levels[i]));
}

TEST(Extract, GradientsReachTheImageButNotTheWeights) {
  for (auto kind : {BackboneKind::TinyStub, BackboneKind::ClipVit}) {
    TempDir dir("vit_grad");
    BackboneSpec s;
    if (kind == BackboneKind::TinyStub) {
      s = stub(1);
    } else {
      write_synthetic_vit_weights(dir / "v.tta", small_vit(32, 8, 12), 2);
      s = BackboneSpec::defaults(kind);
      s.input_resolution = 32;
      s.weights_path = (dir / "v.tta").string();
    }
    auto b = load_backbone(s);
    for (const auto& p : b->parameters()) EXPECT_FALSE(p.requires_grad());
    auto x = (torch::rand({1, 3, 32, 32}) * 2 - 1).requires_grad_(true);
    auto f = extract(*b, preprocess(x, s));
    torch::Tensor total = torch::zeros({});
    for (const auto& l : f.levels) total = total + l.pow(2).sum();
    auto g = torch::autograd::grad({total}, {x})[0];
    EXPECT_GT(g.abs().sum().item<double>(), 0.0);
    EXPECT_EQ(b->digest(), b->load_digest());
  }
}
