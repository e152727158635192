#include <gtest/gtest.h>

#include "support.hpp"
#include "tiger/errors.hpp"
#include "tiger/generator.hpp"

using namespace tiger;
using namespace testing_support;

namespace {

GeneratorConfig tiny_config() {
  GeneratorConfig c;
  c.n_blocks = 2;
  c.base_channels = 8;
  c.resolution = 16;
  c.d_text = 6;
  c.affine_hidden = 5;
  return c;
}

oracle::Nd mlp_oracle(const torch::nn::Linear& fc1, const torch::nn::Linear& fc2, const oracle::Nd& cond) {
  return oracle::staged_forward_oracle({linear_stage(fc1), oracle::Stage::leaky_relu(0.1), linear_stage(fc2)}, cond);
}

oracle::Stage affine_stage(Affine& a, const oracle::Nd& cond) {
  return oracle::Stage::affine(mlp_oracle(a->gamma_fc1, a->gamma_fc2, cond),
                               mlp_oracle(a->beta_fc1, a->beta_fc2, cond));
}

std::vector<oracle::Stage> dfm_stages(DeepFusion& d, const oracle::Nd& cond) {
  return {affine_stage(d->affine1, cond), oracle::Stage::relu(), affine_stage(d->affine2, cond),
          oracle::Stage::relu(), conv_stage(d->conv)};
}

std::vector<oracle::Stage> gate_stages(GlobalFusion& g) {
  return {conv_stage(g->dw3), conv_stage(g->dw5), conv_stage(g->pw1)};
}

}  // namespace

TEST(SampleNoise, ShapeAndDeterminism) {
  auto g1 = gen(4), g2 = gen(4);
  auto a = sample_noise(8, g1);
  auto b = sample_noise(8, g2);
  EXPECT_EQ(a.sizes(), (std::vector<std::int64_t>{8, 100}));
  EXPECT_TRUE(torch::equal(a, b));
}

TEST(SampleNoise, MomentsOverAMillionDraws) {
  auto g = gen(99);
  auto x = sample_noise(10000, g, torch::kFloat64);  // 10⁶ entries
  EXPECT_NEAR(x.mean().item<double>(), 0.0, 0.01);
  EXPECT_NEAR(x.std().item<double>(), 1.0, 0.01);
}

TEST(AffineTransform, IdentityAndConstantCases) {
  auto x = randn({2, 3, 3, 3}, 1);
  auto ones = torch::ones({2, 3}, torch::kFloat64);
  auto zeros = torch::zeros({2, 3}, torch::kFloat64);
  EXPECT_TRUE(torch::equal(affine_transform(x, ones, zeros), x));

  auto b = torch::tensor({{0.5, -1.0, 2.0}, {3.0, 0.0, -0.25}}, torch::kFloat64);
  auto out = affine_transform(x, zeros, b);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      EXPECT_TRUE(torch::all(out[n][c] == b[n][c]).item<bool>());
}

TEST(AffineTransform, MatchesPerElementOracle) {
  auto x = randn({1, 2, 3, 3}, 2);
  auto gamma = randn({1, 2}, 3);
  auto beta = randn({1, 2}, 4);
  auto expected = oracle::staged_forward_oracle(
      {oracle::Stage::affine(oracle::from_tensor(gamma), oracle::from_tensor(beta))}, oracle::from_tensor(x));
  auto r = oracle::compare("affine", expected, oracle::from_tensor(affine_transform(x, gamma, beta)), 1e-15);
  EXPECT_TRUE(r.passed) << r.max_abs_error;
}

TEST(AffineTransform, IsAffineInTheInput) {
  auto x1 = randn({2, 4, 5, 5}, 5);
  auto x2 = randn({2, 4, 5, 5}, 6);
  auto gamma = randn({2, 4}, 7);
  auto beta = randn({2, 4}, 8);
  auto f = [&](const torch::Tensor& x) { return affine_transform(x, gamma, beta); };
  auto residual = f(x1 + x2) - f(x1) - f(x2) + f(torch::zeros_like(x1));
  EXPECT_LT(residual.abs().max().item<double>(), 1e-12);
}

TEST(AffineTransform, ChannelMismatchIsAConfigError) {
  auto x = randn({1, 3, 2, 2}, 1);
  EXPECT_THROW(affine_transform(x, torch::ones({1, 4}), torch::zeros({1, 4})), ConfigError);
  Affine a(10, 4, 8);
  EXPECT_THROW(a(x.to(torch::kFloat32), torch::zeros({1, 10})), ConfigError);
}

TEST(Affine, InitializedToIdentity) {
  Affine a(20, 6, 16);
  auto x = torch::randn({3, 6, 4, 4});
  auto cond = torch::randn({3, 20});
  EXPECT_TRUE(torch::equal(a(x, cond), x));
}

TEST(Affine, MatchesStagedOracle) {
  Affine a(7, 3, 5);
  randomize(*a, 11);
  a->to(torch::kFloat64);
  auto x = randn({2, 3, 3, 3}, 12);
  auto cond = randn({2, 7}, 13);
  auto c = oracle::from_tensor(cond);
  auto expected = oracle::staged_forward_oracle({affine_stage(a, c)}, oracle::from_tensor(x));
  auto r = oracle::compare("affine_module", expected, oracle::from_tensor(a(x, cond)), 1e-12);
  EXPECT_TRUE(r.passed) << r.max_abs_error;
}

TEST(DeepFusion, PreservesSpatialShape) {
  DeepFusion d(4, 6, 10, 8);
  auto out = d(torch::randn({2, 4, 7, 9}), torch::randn({2, 10}));
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 6, 7, 9}));
}

TEST(DeepFusion, IdentityCompositionOnNonNegativeInput) {
  DeepFusion d(3, 3, 5, 4);
  {
    torch::NoGradGuard ng;
    d->conv->weight.zero_();
    d->conv->bias.zero_();
    for (int c = 0; c < 3; ++c) d->conv->weight[c][c][1][1] = 1.0;
  }
  auto x = torch::rand({2, 3, 6, 6});
  EXPECT_TRUE(torch::allclose(d(x, torch::randn({2, 5})), x, 0.0, 1e-6));
}

TEST(DeepFusion, MatchesStagedOracle) {
  DeepFusion d(2, 3, 6, 4);
  randomize(*d, 21);
  d->to(torch::kFloat64);
  auto x = randn({1, 2, 4, 4}, 22);
  auto cond = randn({1, 6}, 23);
  auto expected = oracle::staged_forward_oracle(dfm_stages(d, oracle::from_tensor(cond)), oracle::from_tensor(x));
  auto r = oracle::compare("dfm", expected, oracle::from_tensor(d(x, cond)), 1e-12);
  EXPECT_TRUE(r.passed) << r.max_abs_error;
}

TEST(GlobalFusion, ZeroWeightsGiveIdentity) {
  GlobalFusion g(5);
  {
    torch::NoGradGuard ng;
    for (auto& p : g->parameters()) p.zero_();
  }
  auto x = torch::randn({2, 5, 9, 9});
  EXPECT_TRUE(torch::equal(g(x), x));
}

TEST(GlobalFusion, MatchesStagedOracle) {
  GlobalFusion g(3);
  randomize(*g, 31);
  g->to(torch::kFloat64);
  auto x = randn({2, 3, 8, 8}, 32);
  auto xo = oracle::from_tensor(x);
  auto gate = oracle::staged_forward_oracle(gate_stages(g), xo);
  auto expected = oracle::add(xo, oracle::mul(xo, gate));
  auto r = oracle::compare("gfm", expected, oracle::from_tensor(g(x)), 1e-12);
  EXPECT_TRUE(r.passed) << r.max_abs_error;

  g->mode = GfmMode::Sequential;
  auto rs = oracle::compare("gfm_sequential", gate, oracle::from_tensor(g(x)), 1e-12);
  EXPECT_TRUE(rs.passed) << rs.max_abs_error;
}

TEST(GlobalFusion, RemovedComponentsActAsIdentity) {
  GfmComponents only_pw;
  only_pw.dw3 = false;
  only_pw.dw5_dilated = false;
  GlobalFusion g(2, GfmMode::Gating, only_pw);
  randomize(*g, 41);
  g->to(torch::kFloat64);
  auto x = randn({1, 2, 6, 6}, 42);
  auto xo = oracle::from_tensor(x);
  auto gate = oracle::staged_forward_oracle({conv_stage(g->pw1)}, xo);
  auto r = oracle::compare("gfm_pw_only", oracle::add(xo, oracle::mul(xo, gate)), oracle::from_tensor(g(x)), 1e-12);
  EXPECT_TRUE(r.passed) << r.max_abs_error;
}

TEST(GlobalFusion, ImpulseResponseIsConfinedToFifteenByFifteen) {
  GlobalFusion g(1);
  {
    torch::NoGradGuard ng;
    g->dw3->weight.fill_(1.0);
    g->dw5->weight.fill_(1.0);
    g->pw1->weight.fill_(1.0);
    g->pw1->bias.zero_();
  }
  g->to(torch::kFloat64);
  auto x = torch::zeros({1, 1, 31, 31}, torch::kFloat64);
  x[0][0][15][15] = 1.0;
  auto support = (g->gate(x)[0][0].abs() > 0).nonzero();
  EXPECT_EQ(support.select(1, 0).min().item<std::int64_t>(), 8);
  EXPECT_EQ(support.select(1, 0).max().item<std::int64_t>(), 22);
  EXPECT_EQ(support.select(1, 1).min().item<std::int64_t>(), 8);
  EXPECT_EQ(support.select(1, 1).max().item<std::int64_t>(), 22);
}

TEST(HFBlock, ShapeContractAndDeterminism) {
  GeneratorConfig cfg;
  cfg.affine_hidden = 16;
  HFBlock b(64, 32, cfg);
  auto x = torch::randn({1, 64, 8, 8});
  auto cond = torch::randn({1, cfg.cond_dim()});
  auto y1 = b(x, cond);
  EXPECT_EQ(y1.sizes(), (std::vector<std::int64_t>{1, 32, 16, 16}));
  EXPECT_TRUE(torch::equal(y1, b(x, cond)));
}

TEST(HFBlock, MatchesStagedOracle) {
  auto cfg = tiny_config();
  HFBlock b(4, 3, cfg);
  randomize(*b, 51);
  b->to(torch::kFloat64);
  auto x = randn({1, 4, 3, 3}, 52);
  auto cond = oracle::from_tensor(randn({1, cfg.cond_dim()}, 53));
  auto up = oracle::staged_forward_oracle({oracle::Stage::upsample_nearest(2)}, oracle::from_tensor(x));
  std::vector<oracle::Stage> main;
  for (auto& d : b->dfms)
    for (auto& s : dfm_stages(d, cond)) main.push_back(s);
  auto h = oracle::staged_forward_oracle(main, up);
  h = oracle::add(h, oracle::mul(h, oracle::staged_forward_oracle(gate_stages(b->gfm), h)));
  auto expected = oracle::add(h, oracle::staged_forward_oracle({conv_stage(b->shortcut)}, up));
  auto r = oracle::compare("hfblock", expected, oracle::from_tensor(b(x, oracle::to_tensor(cond))), 1e-12);
  EXPECT_TRUE(r.passed) << r.max_abs_error;
}

TEST(Generator, OutputShapeForFourBlocks) {
  GeneratorConfig cfg;
  cfg.base_channels = 32;
  cfg.affine_hidden = 16;
  Generator g(cfg);
  auto out = g(torch::randn({2, 100}), torch::randn({2, 512}));
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 3, 64, 64}));
}

TEST(Generator, OutputsAreBoundedEvenForExtremeNoise) {
  auto cfg = tiny_config();
  Generator g(cfg);
  auto init = gen(61);
  initialize_generator(g, init);
  auto noise = torch::cat({torch::full({1, 100}, 1e6), torch::full({1, 100}, -1e6), torch::randn({2, 100})});
  auto out = g(noise, torch::randn({4, cfg.d_text}));
  EXPECT_GE(out.min().item<double>(), -1.0);
  EXPECT_LE(out.max().item<double>(), 1.0);
}

TEST(Generator, DeterministicForFixedWeightsAndInputs) {
  auto cfg = tiny_config();
  Generator g(cfg);
  auto init = gen(5);
  initialize_generator(g, init);
  auto noise = torch::randn({3, 100});
  auto s = torch::randn({3, cfg.d_text});
  EXPECT_TRUE(torch::equal(g(noise, s), g(noise, s)));

  Generator h(cfg);
  auto init2 = gen(5);
  initialize_generator(h, init2);
  EXPECT_TRUE(torch::equal(g(noise, s), h(noise, s)));
}

TEST(Generator, ResolutionMustMatchBlockCount) {
  auto cfg = tiny_config();
  cfg.resolution = 32;
  EXPECT_THROW(cfg.validate(), ConfigError);
  auto ok = tiny_config();
  Generator g(ok);
  EXPECT_THROW(g(torch::randn({2, 99}), torch::randn({2, ok.d_text})), ConfigError);
  EXPECT_THROW(g(torch::randn({2, 100}), torch::randn({3, ok.d_text})), ConfigError);
}

TEST(Generator, ZeroGfmMatchesGfmDisabled) {
  auto with = tiny_config();
  auto without = with;
  without.use_gfm = false;
  Generator a(with), b(without);
  auto init = gen(71);
  initialize_generator(a, init);
  {
    torch::NoGradGuard ng;
    for (auto& blk : a->blocks)
      for (auto& p : blk->gfm->parameters()) p.zero_();
    auto src = a->named_parameters();
    for (auto& p : b->named_parameters()) p.value().copy_(src[p.key()]);
  }
  auto noise = torch::randn({2, 100});
  auto s = torch::randn({2, with.d_text});
  EXPECT_TRUE(torch::equal(a(noise, s), b(noise, s)));
}

TEST(Generator, EveryBlockDoublesResolution) {
  auto cfg = tiny_config();
  Generator g(cfg);
  auto x = torch::randn({1, cfg.base_channels, 4, 4});
  auto cond = torch::randn({1, cfg.cond_dim()});
  for (auto& b : g->blocks) {
    auto y = b(x, cond);
    EXPECT_EQ(y.size(2), 2 * x.size(2));
    EXPECT_EQ(y.size(3), 2 * x.size(3));
    x = y;
  }
}

TEST(Generator, NoiseGradientMatchesFiniteDifferences) {
  auto cfg = tiny_config();
  cfg.n_blocks = 1;
  cfg.resolution = 8;
  Generator g(cfg);
  auto init = gen(81);
  initialize_generator(g, init);
  randomize(*g, 82, 0.2);
  g->to(torch::kFloat64);
  auto s = randn({1, cfg.d_text}, 83);
  auto probe = randn({1, 3, 8, 8}, 84);
  auto noise = randn({1, 100}, 85).requires_grad_(true);
  auto loss = (g(noise, s) * probe).sum();
  auto grad = torch::autograd::grad({loss}, {noise})[0];

  torch::NoGradGuard ng;
  auto f = [&](const oracle::Nd& z) { return (g(oracle::to_tensor(z), s) * probe).sum().item<double>(); };
  auto fd = oracle::to_tensor(oracle::finite_difference_gradient(f, oracle::from_tensor(noise.detach()), 1e-6));
  const double rel = (grad - fd).norm().item<double>() / fd.norm().item<double>();
  EXPECT_LT(rel, 1e-3);
}
