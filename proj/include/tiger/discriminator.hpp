#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "tiger/backbones.hpp"

namespace tiger {

enum class AdapterKind { Single, A, B };

AdapterKind parse_adapter_kind(std::string_view s);
std::string_view to_string(AdapterKind k);

/// Spatial side of every adapter output.
inline constexpr std::int64_t kAdapterGrid = 8;
inline constexpr double kDiscriminatorSlope = 0.2;

struct SubDiscriminatorConfig {
  BackboneSpec backbone;
  AdapterKind adapter = AdapterKind::A;
  double lambda_weight = 1.0;
  std::int64_t assessor_channels = 256;

  void validate() const;
};

/// Resizes a feature map with adaptive average pooling semantics (which upsample by
/// replication when the input is smaller).
torch::Tensor resize_to(const torch::Tensor& x, std::int64_t out_h, std::int64_t out_w);
torch::Tensor resize_to_grid(const torch::Tensor& x, std::int64_t side);

/// Tiles a B×d sentence batch over the spatial grid and appends it on the channel axis.
torch::Tensor replicate_and_concat(const torch::Tensor& vision, const torch::Tensor& sentence);

/// Common interface over the adapter variants.
struct AdapterImpl : torch::nn::Module {
  virtual torch::Tensor forward(const MultiLevelFeatures& features) = 0;
};

/// Two sequential conv3×3 + leaky-ReLU stages, then pooling to the 8×8 grid.
struct SingleAdapterImpl final : AdapterImpl {
  SingleAdapterImpl(std::int64_t in_channels, std::int64_t out_channels);
  torch::Tensor forward(const MultiLevelFeatures& features) override;

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
};

/// Parallel fusion: per-level conv1×1 + leaky-ReLU, resize to 8×8, concat, fuse with conv1×1.
/// Output channels are split across levels as evenly as possible (earlier levels take the remainder).
struct ParallelAdapterImpl final : AdapterImpl {
  ParallelAdapterImpl(const std::vector<std::int64_t>& in_channels, std::int64_t out_channels);
  torch::Tensor forward(const MultiLevelFeatures& features) override;

  std::vector<std::int64_t> branch_channels;
  std::vector<torch::nn::Conv2d> branches;
  torch::nn::Conv2d fuse{nullptr};
};

/// Sequential fusion: start from the deepest level's conv1×1 projection, then for each shallower
/// level resize to its grid, add its conv1×1 projection and refine with conv3×3 + leaky-ReLU.
/// The result is resized to 8×8 and projected by a final conv1×1.
struct SequentialAdapterImpl final : AdapterImpl {
  SequentialAdapterImpl(const std::vector<std::int64_t>& in_channels, std::int64_t out_channels);
  torch::Tensor forward(const MultiLevelFeatures& features) override;

  std::vector<torch::nn::Conv2d> projections;  // one per level, tap order
  std::vector<torch::nn::Conv2d> refines;      // refines[i] follows the merge with level i
  torch::nn::Conv2d head{nullptr};
};

/// conv3×3 + leaky-ReLU, conv3×3 stride 2 + leaky-ReLU, conv4×4 valid → one logit per sample.
struct ImageAssessorImpl : torch::nn::Module {
  ImageAssessorImpl(std::int64_t in_channels, std::int64_t hidden_channels);
  torch::Tensor forward(const torch::Tensor& fused);

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, head{nullptr};
};
TORCH_MODULE(ImageAssessor);

/// preprocess → frozen backbone → adapter → replicate text → assessor.
/// The backbone is held but not registered, so parameters() covers adapter and assessor only.
struct SubDiscriminatorImpl : torch::nn::Module {
  SubDiscriminatorImpl(SubDiscriminatorConfig cfg, std::shared_ptr<Backbone> backbone, std::int64_t d_text);

  /// images B×3×H×W in [-1, 1], sentence B×d_text → scores of shape B.
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& sentence);

  SubDiscriminatorConfig config;
  std::shared_ptr<Backbone> backbone;
  std::shared_ptr<AdapterImpl> adapter;
  ImageAssessor assessor{nullptr};
};
TORCH_MODULE(SubDiscriminator);

}  // namespace tiger
