#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace tiger {

enum class BackboneKind { ClipVit, DinoVit, SingleLevelCnn, TinyStub };

BackboneKind parse_backbone_kind(std::string_view s);
std::string_view to_string(BackboneKind k);

struct BackboneSpec {
  BackboneKind kind = BackboneKind::TinyStub;
  std::vector<std::int64_t> layer_taps;  // 1-based, strictly increasing
  std::int64_t input_resolution = 64;
  std::array<double, 3> mean{0.5, 0.5, 0.5};
  std::array<double, 3> std{0.5, 0.5, 0.5};
  std::optional<std::string> weights_path;
  std::uint64_t seed = 0;  // tiny_stub only

  /// Reference defaults per kind: taps, input size and normalization.
  static BackboneSpec defaults(BackboneKind kind);
  void validate() const;
};

/// Tap ordinals used by default: CLIP (2, 5, 9), DINO (1, 5, 9), tiny stub (1, 2, 3, 4).
std::vector<std::int64_t> default_taps(BackboneKind kind);

struct MultiLevelFeatures {
  std::vector<torch::Tensor> levels;
  std::vector<std::int64_t> tap_indices;
};

/// Frozen feature extractor. Parameters never require grad; gradients flow to the input.
class Backbone : public torch::nn::Module {
 public:
  explicit Backbone(BackboneSpec spec) : spec_(std::move(spec)) {}

  /// Feature maps after each tapped layer, in tap order. Input must be preprocessed.
  virtual std::vector<torch::Tensor> forward_taps(const torch::Tensor& x) = 0;
  virtual std::int64_t depth() const = 0;
  /// Tapped activation shapes (C, H, W) for the configured input resolution.
  std::vector<std::array<std::int64_t, 3>> tap_shapes();

  const BackboneSpec& spec() const { return spec_; }
  const std::string& load_digest() const { return load_digest_; }
  std::string digest() const;

  /// Disables gradients, switches to eval mode and records the load-time digest.
  void freeze();

 protected:
  BackboneSpec spec_;

 private:
  std::string load_digest_;
};

/// Randomly-initialized 4-layer CNN (3×3, stride 2, channels 16/32/64/128, leaky-ReLU 0.2).
class TinyStubBackbone final : public Backbone {
 public:
  explicit TinyStubBackbone(BackboneSpec spec);
  std::vector<torch::Tensor> forward_taps(const torch::Tensor& x) override;
  std::int64_t depth() const override { return 4; }

 private:
  std::vector<torch::nn::Conv2d> layers_;
};

struct VitArch {
  std::int64_t width = 768;
  std::int64_t depth = 12;
  std::int64_t heads = 12;
  std::int64_t patch = 16;
  std::int64_t image_size = 224;
  std::int64_t mlp_dim = 3072;
  std::string activation = "gelu";  // "gelu" or "quick_gelu"
  bool ln_pre = false;
  bool patch_bias = true;
  double eps = 1e-6;
  /// Optional projection applied to the final class token (image-text embedding head).
  std::int64_t embed_dim = 0;

  nlohmann::json to_json() const;
  static VitArch from_json(const nlohmann::json& j);
};

struct VitBlockImpl : torch::nn::Module {
  VitBlockImpl(const VitArch& arch);
  torch::Tensor forward(const torch::Tensor& x);

  std::int64_t heads;
  bool quick_gelu;
  torch::nn::LayerNorm ln1{nullptr}, ln2{nullptr};
  torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(VitBlock);

/// Pre-LN vision transformer with class token. Taps are post-block outputs; the class token is
/// dropped and the patch tokens are reshaped into a √N×√N grid with width as channels.
class VitBackbone final : public Backbone {
 public:
  VitBackbone(BackboneSpec spec, VitArch arch);
  std::vector<torch::Tensor> forward_taps(const torch::Tensor& x) override;
  std::int64_t depth() const override { return arch_.depth; }
  /// Final class token after ln_post and projection; requires embed_dim > 0.
  torch::Tensor pooled(const torch::Tensor& x);
  const VitArch& arch() const { return arch_; }

 private:
  torch::Tensor embed(const torch::Tensor& x);

  VitArch arch_;
  torch::nn::Conv2d patch_embed_{nullptr};
  torch::Tensor cls_token_, pos_embed_;
  torch::nn::LayerNorm ln_pre_{nullptr}, ln_post_{nullptr};
  torch::nn::Linear head_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
};

struct CnnLayerArch {
  std::int64_t out_channels;
  std::int64_t kernel;
  std::int64_t stride;
};

/// Plain conv/ReLU stack loaded from an archive; stands in for single-level backbones.
class SingleLevelCnnBackbone final : public Backbone {
 public:
  SingleLevelCnnBackbone(BackboneSpec spec, std::vector<CnnLayerArch> arch);
  std::vector<torch::Tensor> forward_taps(const torch::Tensor& x) override;
  std::int64_t depth() const override { return static_cast<std::int64_t>(layers_.size()); }

 private:
  std::vector<torch::nn::Conv2d> layers_;
};

/// Resolves a relative weights path against TIGER_WEIGHTS_CACHE when that variable is set.
std::filesystem::path resolve_weights_path(const std::string& path);

/// Builds and freezes a backbone, converted to `dtype` before the digest is recorded.
std::shared_ptr<Backbone> load_backbone(const BackboneSpec& spec, torch::Dtype dtype = torch::kFloat32);

/// [-1, 1] → [0, 1] → bilinear resize to input_resolution → per-channel normalization.
torch::Tensor preprocess(const torch::Tensor& images, const BackboneSpec& spec);

MultiLevelFeatures extract(Backbone& backbone, const torch::Tensor& preprocessed);

/// Writes a randomly initialized ViT in the archive layout `load_backbone` reads.
void write_synthetic_vit_weights(const std::filesystem::path& path, const VitArch& arch, std::uint64_t seed);
void write_synthetic_cnn_weights(const std::filesystem::path& path, const std::vector<CnnLayerArch>& arch,
                                 std::uint64_t seed);

}  // namespace tiger
