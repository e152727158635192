#include "tiger/generator.hpp"

#include <cmath>

#include <fmt/format.h>

#include "tiger/errors.hpp"

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace tiger {

std::int64_t GeneratorConfig::channels_at(std::int64_t i) const {
  const std::int64_t floor = std::min<std::int64_t>(32, base_channels);
  std::int64_t c = base_channels;
  for (std::int64_t k = 0; k < i; ++k) c = std::max(c / 2, floor);
  return c;
}

void GeneratorConfig::validate() const {
  if (n_blocks < 1) throw ConfigError("generator.n_blocks must be at least 1");
  if (n_dfm_per_block < 1) throw ConfigError("generator.n_dfm_per_block must be at least 1");
  if (base_channels < 8) throw ConfigError("generator.base_channels must be at least 8");
  if (d_text < 1) throw ConfigError("generator.d_text must be positive");
  if (affine_hidden < 1) throw ConfigError("generator.affine_hidden must be positive");
  if (resolution != (std::int64_t{4} << n_blocks))
    throw ConfigError(fmt::format("generator.resolution {} does not equal 4·2^n_blocks = {}", resolution,
                                  std::int64_t{4} << n_blocks));
}

torch::Tensor sample_noise(std::int64_t batch, torch::Generator& gen, torch::Dtype dtype) {
  return torch::randn({batch, kNoiseDim}, gen, torch::TensorOptions().dtype(dtype));
}

torch::Tensor affine_transform(const torch::Tensor& x, const torch::Tensor& gamma, const torch::Tensor& beta) {
  const auto b = x.size(0);
  const auto c = x.size(1);
  if (gamma.size(-1) != c || beta.size(-1) != c)
    throw ConfigError(fmt::format("affine heads emit {}/{} channels but the feature map has {}", gamma.size(-1),
                                  beta.size(-1), c));
  return gamma.reshape({b, c, 1, 1}) * x + beta.reshape({b, c, 1, 1});
}

// Affine ---------------------------------------------------------------------

AffineImpl::AffineImpl(std::int64_t cond_dim, std::int64_t channels, std::int64_t hidden) : channels(channels) {
  gamma_fc1 = register_module("gamma_fc1", nn::Linear(cond_dim, hidden));
  gamma_fc2 = register_module("gamma_fc2", nn::Linear(hidden, channels));
  beta_fc1 = register_module("beta_fc1", nn::Linear(cond_dim, hidden));
  beta_fc2 = register_module("beta_fc2", nn::Linear(hidden, channels));
  torch::NoGradGuard no_grad;
  gamma_fc2->weight.zero_();
  gamma_fc2->bias.fill_(1.0);
  beta_fc2->weight.zero_();
  beta_fc2->bias.zero_();
}

torch::Tensor AffineImpl::gamma(const torch::Tensor& cond) {
  return gamma_fc2(F::leaky_relu(gamma_fc1(cond), F::LeakyReLUFuncOptions().negative_slope(0.1)));
}

torch::Tensor AffineImpl::beta(const torch::Tensor& cond) {
  return beta_fc2(F::leaky_relu(beta_fc1(cond), F::LeakyReLUFuncOptions().negative_slope(0.1)));
}

torch::Tensor AffineImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  return affine_transform(x, gamma(cond), beta(cond));
}

// Deep fusion ----------------------------------------------------------------

DeepFusionImpl::DeepFusionImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t cond_dim,
                               std::int64_t hidden) {
  affine1 = register_module("affine1", Affine(cond_dim, in_channels, hidden));
  affine2 = register_module("affine2", Affine(cond_dim, in_channels, hidden));
  conv = register_module("conv", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 3).padding(1)));
}

torch::Tensor DeepFusionImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  auto h = torch::relu(affine1(x, cond));
  h = torch::relu(affine2(h, cond));
  return conv(h);
}

// Global fusion --------------------------------------------------------------

GlobalFusionImpl::GlobalFusionImpl(std::int64_t channels, GfmMode mode, GfmComponents components)
    : mode(mode), components(components) {
  dw3 = register_module("dw3", nn::Conv2d(nn::Conv2dOptions(channels, channels, 3).padding(1).groups(channels).bias(false)));
  dw5 = register_module(
      "dw5", nn::Conv2d(nn::Conv2dOptions(channels, channels, 5).padding(6).dilation(3).groups(channels).bias(false)));
  pw1 = register_module("pw1", nn::Conv2d(nn::Conv2dOptions(channels, channels, 1)));
}

torch::Tensor GlobalFusionImpl::gate(const torch::Tensor& x) {
  auto h = x;
  if (components.dw3) h = dw3(h);
  if (components.dw5_dilated) h = dw5(h);
  if (components.pw1) h = pw1(h);
  return h;
}

torch::Tensor GlobalFusionImpl::forward(const torch::Tensor& x) {
  if (mode == GfmMode::Sequential) return gate(x);
  return x + x * gate(x);
}

// HFBlock --------------------------------------------------------------------

HFBlockImpl::HFBlockImpl(std::int64_t in_channels, std::int64_t out_channels, const GeneratorConfig& cfg) {
  for (std::int64_t i = 0; i < cfg.n_dfm_per_block; ++i) {
    const auto cin = i == 0 ? in_channels : out_channels;
    dfms.push_back(register_module(fmt::format("dfm{}", i),
                                   DeepFusion(cin, out_channels, cfg.cond_dim(), cfg.affine_hidden)));
  }
  if (cfg.use_gfm) gfm = register_module("gfm", GlobalFusion(out_channels, cfg.gfm_mode, cfg.gfm_components));
  if (in_channels != out_channels)
    shortcut = register_module("shortcut", nn::Conv2d(nn::Conv2dOptions(in_channels, out_channels, 1)));
}

torch::Tensor HFBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& cond) {
  const auto up = F::interpolate(
      x, F::InterpolateFuncOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest));
  auto h = up;
  for (auto& dfm : dfms) h = dfm(h, cond);
  if (gfm) h = gfm(h);
  return h + (shortcut ? shortcut(up) : up);
}

// Generator ------------------------------------------------------------------

GeneratorImpl::GeneratorImpl(GeneratorConfig cfg) : config(std::move(cfg)) {
  config.validate();
  fc = register_module("fc", nn::Linear(kNoiseDim, config.base_channels * 4 * 4));
  for (std::int64_t i = 0; i < config.n_blocks; ++i)
    blocks.push_back(register_module(fmt::format("block{}", i),
                                     HFBlock(config.channels_at(i), config.channels_at(i + 1), config)));
  head = register_module("head", nn::Conv2d(nn::Conv2dOptions(config.channels_at(config.n_blocks), 3, 3).padding(1)));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& noise, const torch::Tensor& sentence) {
  if (noise.dim() != 2 || noise.size(1) != kNoiseDim)
    throw ConfigError(fmt::format("noise must be B×{}", kNoiseDim));
  if (sentence.dim() != 2 || sentence.size(1) != config.d_text || sentence.size(0) != noise.size(0))
    throw ConfigError(fmt::format("sentence embeddings must be B×{} matching the noise batch", config.d_text));
  const auto cond = torch::cat({noise, sentence}, 1);
  // channels-last is markedly faster for the depth-wise convolutions on CPU
  auto x = fc(noise).view({noise.size(0), config.base_channels, 4, 4}).contiguous(at::MemoryFormat::ChannelsLast);
  for (auto& block : blocks) x = block(x, cond);
  return torch::tanh(head(F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)))).contiguous();
}

// Initialization -------------------------------------------------------------

void initialize_fan_in(torch::nn::Module& module, torch::Generator& gen) {
  torch::NoGradGuard no_grad;
  for (auto& m : module.modules(/*include_self=*/true)) {
    torch::Tensor weight, bias;
    if (auto* lin = m->as<nn::Linear>()) {
      weight = lin->weight;
      bias = lin->bias;
    } else if (auto* conv = m->as<nn::Conv2d>()) {
      weight = conv->weight;
      bias = conv->bias;
    } else {
      continue;
    }
    const double fan_in = static_cast<double>(weight[0].numel());
    const double bound = 1.0 / std::sqrt(fan_in);
    weight.uniform_(-bound, bound, gen);
    if (bias.defined()) bias.uniform_(-bound, bound, gen);
  }
}

void initialize_generator(Generator& g, torch::Generator& gen) {
  initialize_fan_in(*g, gen);
  torch::NoGradGuard no_grad;
  for (auto& m : g->modules(/*include_self=*/false)) {
    if (auto* aff = m->as<AffineImpl>()) {
      aff->gamma_fc2->weight.zero_();
      aff->gamma_fc2->bias.fill_(1.0);
      aff->beta_fc2->weight.zero_();
      aff->beta_fc2->bias.zero_();
    }
  }
}

}  // namespace tiger
