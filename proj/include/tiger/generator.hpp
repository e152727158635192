#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace tiger {

inline constexpr std::int64_t kNoiseDim = 100;

enum class GfmMode { Gating, Sequential };

/// Which convolutions of the global fusion module are active; a removed stage acts as identity.
struct GfmComponents {
  bool dw3 = true;
  bool dw5_dilated = true;
  bool pw1 = true;
};

struct GeneratorConfig {
  std::int64_t n_blocks = 4;
  std::int64_t base_channels = 64;
  std::int64_t n_dfm_per_block = 2;
  std::int64_t resolution = 64;
  bool use_gfm = true;
  GfmMode gfm_mode = GfmMode::Gating;
  GfmComponents gfm_components;
  std::int64_t d_text = 512;
  std::int64_t affine_hidden = 256;

  std::int64_t cond_dim() const { return kNoiseDim + d_text; }
  /// Channel count entering block i (i = n_blocks gives the head's input).
  std::int64_t channels_at(std::int64_t i) const;
  /// Throws ConfigError when the config violates an invariant.
  void validate() const;
};

/// Draws B×100 i.i.d. standard normal noise from an explicit generator.
torch::Tensor sample_noise(std::int64_t batch, torch::Generator& gen,
                           torch::Dtype dtype = torch::kFloat32);

/// out[b,c,h,w] = gamma[b,c] · x[b,c,h,w] + beta[b,c]
torch::Tensor affine_transform(const torch::Tensor& x, const torch::Tensor& gamma, const torch::Tensor& beta);

/// Predicts per-channel scale and shift from the condition vector with two small MLPs
/// (hidden layer + leaky-ReLU 0.1). At init gamma ≡ 1 and beta ≡ 0.
struct AffineImpl : torch::nn::Module {
  AffineImpl(std::int64_t cond_dim, std::int64_t channels, std::int64_t hidden = 256);

  torch::Tensor gamma(const torch::Tensor& cond);
  torch::Tensor beta(const torch::Tensor& cond);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  std::int64_t channels;
  torch::nn::Linear gamma_fc1{nullptr}, gamma_fc2{nullptr}, beta_fc1{nullptr}, beta_fc2{nullptr};
};
TORCH_MODULE(Affine);

/// conv3×3(ReLU(affine2(ReLU(affine1(x)))))
struct DeepFusionImpl : torch::nn::Module {
  DeepFusionImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t cond_dim, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  Affine affine1{nullptr}, affine2{nullptr};
  torch::nn::Conv2d conv{nullptr};
};
TORCH_MODULE(DeepFusion);

/// Depth-wise 3×3 → depth-wise 5×5 (dilation 3) → point-wise 1×1.
/// Gating mode returns x + x ⊙ gate(x); sequential mode returns gate(x).
struct GlobalFusionImpl : torch::nn::Module {
  GlobalFusionImpl(std::int64_t channels, GfmMode mode = GfmMode::Gating, GfmComponents components = {});
  torch::Tensor gate(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);

  GfmMode mode;
  GfmComponents components;
  torch::nn::Conv2d dw3{nullptr}, dw5{nullptr}, pw1{nullptr};
};
TORCH_MODULE(GlobalFusion);

/// Upsample ×2 (nearest) → deep fusion modules → global fusion → residual add.
struct HFBlockImpl : torch::nn::Module {
  HFBlockImpl(std::int64_t in_channels, std::int64_t out_channels, const GeneratorConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& cond);

  std::vector<DeepFusion> dfms;
  GlobalFusion gfm{nullptr};
  torch::nn::Conv2d shortcut{nullptr};
};
TORCH_MODULE(HFBlock);

struct GeneratorImpl : torch::nn::Module {
  explicit GeneratorImpl(GeneratorConfig cfg);

  /// noise B×100, sentence B×d_text → images B×3×R×R in [-1, 1].
  torch::Tensor forward(const torch::Tensor& noise, const torch::Tensor& sentence);

  GeneratorConfig config;
  torch::nn::Linear fc{nullptr};
  std::vector<HFBlock> blocks;
  torch::nn::Conv2d head{nullptr};
};
TORCH_MODULE(Generator);

/// Re-initializes every parameter from `gen`: weights and biases U(±1/√fan_in), except the
/// affine output layers (gamma → weight 0, bias 1; beta → 0).
void initialize_generator(Generator& g, torch::Generator& gen);

/// Shared uniform fan-in initialization for Linear/Conv parameters of any module.
void initialize_fan_in(torch::nn::Module& module, torch::Generator& gen);

}  // namespace tiger
