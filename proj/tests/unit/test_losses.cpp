#include <cmath>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tiger/errors.hpp"
#include "tiger/losses.hpp"

using namespace tiger;
using namespace testing_support;

namespace {

torch::Tensor t(std::vector<double> v) { return torch::tensor(v, torch::kFloat64); }

double scalar(const torch::Tensor& x) { return x.item<double>(); }

}  // namespace

TEST(HingeLoss, WorkedExamples) {
  EXPECT_NEAR(scalar(hinge_d_loss(t({1}), t({-1}), t({-1}))), 0.0, 1e-12);
  EXPECT_NEAR(scalar(hinge_d_loss(t({0}), t({0}), t({0}))), 2.0, 1e-12);
  EXPECT_NEAR(scalar(hinge_d_loss(t({0.5, 2}), t({-0.5, 0}), t({-2, 1}))), 1.125, 1e-12);
}

TEST(HingeLoss, SymmetricVariantHalvesTheRealTerm) {
  EXPECT_NEAR(scalar(hinge_d_loss(t({0}), t({0}), t({0}), true)), 1.5, 1e-12);
}

TEST(HingeLoss, NeverNegative) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto s = randn({3, 6}, seed) * 3;
    EXPECT_GE(scalar(hinge_d_loss(s[0], s[1], s[2])), 0.0);
  }
}

TEST(Magp, ConstantScoreGivesZero) {
  ScoreFn constant = [](const torch::Tensor& x, const torch::Tensor& s) {
    return (x * 0).flatten(1).sum(1) + (s * 0).sum(1) + 3.0;
  };
  EXPECT_EQ(scalar(magp(constant, randn({4, 3, 2, 2}, 1), randn({4, 5}, 2), 2.0, 6.0)), 0.0);
}

TEST(Magp, LinearScoreClosedForm) {
  auto a = randn({3, 2, 2}, 3);
  auto b = randn({5}, 4);
  ScoreFn linear = [&](const torch::Tensor& x, const torch::Tensor& s) {
    return (x * a).flatten(1).sum(1) + s.matmul(b);
  };
  const double expected = 2.0 * std::pow(a.norm().item<double>() + b.norm().item<double>(), 6);
  const double got = scalar(magp(linear, randn({4, 3, 2, 2}, 5), randn({4, 5}, 6), 2.0, 6.0));
  EXPECT_NEAR(got / expected, 1.0, 1e-12);
}

TEST(Magp, NormsMatchFiniteDifferencesOnAQuadratic) {
  auto A = randn({6, 6}, 7);
  auto c = randn({3}, 8);
  // D(x, s) = xᵀ A x + (c·s)² + (c·s)(1ᵀx), per sample
  ScoreFn quad = [&](const torch::Tensor& x, const torch::Tensor& s) {
    auto xf = x.flatten(1);
    auto cs = s.matmul(c);
    return (xf.matmul(A) * xf).sum(1) + cs * cs + cs * xf.sum(1);
  };
  auto x = randn({3, 1, 2, 3}, 9);
  auto s = randn({3, 3}, 10);
  auto norms = score_gradient_norms(quad, x, s);
  for (std::int64_t i = 0; i < 3; ++i) {
    auto xi = x.slice(0, i, i + 1), si = s.slice(0, i, i + 1);
    auto fx = [&](const oracle::Nd& z) { return quad(oracle::to_tensor(z), si).item<double>(); };
    auto fs = [&](const oracle::Nd& z) { return quad(xi, oracle::to_tensor(z)).item<double>(); };
    const double nx = oracle::to_tensor(oracle::finite_difference_gradient(fx, oracle::from_tensor(xi))).norm().item<double>();
    const double ns = oracle::to_tensor(oracle::finite_difference_gradient(fs, oracle::from_tensor(si))).norm().item<double>();
    EXPECT_NEAR(norms.image[i].item<double>() / nx, 1.0, 1e-4);
    EXPECT_NEAR(norms.sentence[i].item<double>() / ns, 1.0, 1e-4);
  }
}

TEST(Magp, InvariantToBatchOrderAndNonNegative) {
  auto w = randn({3, 2, 2}, 11);
  ScoreFn f = [&](const torch::Tensor& x, const torch::Tensor& s) {
    return torch::tanh((x * w).flatten(1).sum(1)) * s.sum(1);
  };
  auto x = randn({5, 3, 2, 2}, 12);
  auto s = randn({5, 4}, 13);
  auto perm = torch::tensor({4, 2, 0, 1, 3});
  const double a = scalar(magp(f, x, s, 2.0, 6.0));
  const double b = scalar(magp(f, x.index_select(0, perm), s.index_select(0, perm), 2.0, 6.0));
  EXPECT_GE(a, 0.0);
  EXPECT_NEAR(a, b, 1e-12 * std::max(1.0, a));
}

TEST(Magp, NonDifferentiableScoreIsAnError) {
  ScoreFn detached = [](const torch::Tensor& x, const torch::Tensor&) { return x.detach().flatten(1).sum(1); };
  EXPECT_THROW(magp(detached, randn({2, 3}, 1), randn({2, 2}, 2), 2.0, 6.0), std::invalid_argument);
}

TEST(TotalLoss, WeightedSumExamples) {
  LossWeights w;
  std::vector<std::pair<torch::Tensor, torch::Tensor>> per_sub{{t({2.0})[0], t({0.5})[0]}, {t({3.0})[0], t({1.0})[0]}};
  EXPECT_NEAR(scalar(discriminator_total_loss(per_sub, w)), 2.504, 1e-12);
  w.lambda_per_sub = {0.0, 0.0};
  EXPECT_EQ(scalar(discriminator_total_loss(per_sub, w)), 0.0);
  w.lambda_per_sub = {2.0, 0.002};
  EXPECT_NEAR(scalar(discriminator_total_loss(per_sub, w)), 5.008, 1e-12);
  w.lambda_per_sub = {1.0};
  EXPECT_THROW(discriminator_total_loss(per_sub, w), ConfigError);
}

TEST(TotalLoss, LinearInEachLambda) {
  std::vector<std::pair<torch::Tensor, torch::Tensor>> per_sub{{t({1.3})[0], t({0.2})[0]}, {t({0.7})[0], t({4.0})[0]}};
  LossWeights w;
  auto at = [&](double l0) {
    w.lambda_per_sub = {l0, 0.25};
    return scalar(discriminator_total_loss(per_sub, w));
  };
  EXPECT_NEAR(at(3.0) - at(2.0), at(2.0) - at(1.0), 1e-12);
  EXPECT_NEAR(at(1.0) - at(0.0), 1.5, 1e-12);
}

TEST(ContrastiveLoss, WorkedExamples) {
  auto e = t({1, 0}).view({1, 2});
  EXPECT_NEAR(scalar(semantic_contrastive_loss(e, e)), -1.0, 1e-12);
  EXPECT_NEAR(scalar(semantic_contrastive_loss(e, t({0, 1}).view({1, 2}))), 0.0, 1e-12);
  EXPECT_NEAR(scalar(semantic_contrastive_loss(e, t({1 / std::sqrt(2.0), 1 / std::sqrt(2.0)}).view({1, 2}))),
              -std::sqrt(2.0) / 2, 1e-12);
  EXPECT_THROW(semantic_contrastive_loss(torch::zeros({1, 2}, torch::kFloat64), e), std::invalid_argument);
}

TEST(ContrastiveLoss, BoundedForRandomEmbeddings) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double v = scalar(semantic_contrastive_loss(randn({4, 7}, seed), randn({4, 7}, seed + 100)));
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(GeneratorLoss, WorkedExample) {
  LossWeights w;
  const double v = scalar(generator_loss({t({0.5}), t({-2.0})}, t({-0.8})[0], w));
  EXPECT_NEAR(v, -3.698, 1e-12);
  w.lambda_per_sub = {1.0};
  EXPECT_THROW(generator_loss({t({0.5}), t({-2.0})}, t({-0.8})[0], w), ConfigError);
}

TEST(GeneratorLoss, ClipWeightAndScoreMonotonicity) {
  LossWeights w;
  w.lambda_clip = 0.0;
  EXPECT_NEAR(scalar(generator_loss({t({0.5, 1.5}), t({-2.0})}, t({123.0})[0], w)), -(1.0 - 0.002), 1e-12);

  w.lambda_clip = 4.0;
  auto at = [&](double clip) { return scalar(generator_loss({t({0.1}), t({0.2})}, t({clip})[0], w)); };
  EXPECT_NEAR(at(1.0) - at(0.0), 4.0, 1e-12);
  EXPECT_NEAR(at(-0.5) - at(-1.5), 4.0, 1e-12);

  auto s0 = t({0.3}).requires_grad_(true);
  auto s1 = t({0.7}).requires_grad_(true);
  auto grads = torch::autograd::grad({generator_loss({s0, s1}, t({0.0})[0], w)}, {s0, s1});
  EXPECT_NEAR(grads[0].item<double>(), -1.0, 1e-12);
  EXPECT_NEAR(grads[1].item<double>(), -0.001, 1e-12);
}
