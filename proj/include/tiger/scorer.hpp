#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <torch/torch.h>

#include "tiger/backbones.hpp"
#include "tiger/data.hpp"

namespace tiger {

/// Frozen image tower of an image-text model: maps images into the text embedding space.
/// Used by the semantic contrastive loss and by embedding-based R-precision.
class ImageTextScorer {
 public:
  virtual ~ImageTextScorer() = default;
  /// images B×3×H×W in [-1, 1] → B×d_text (differentiable w.r.t. images).
  virtual torch::Tensor embed_images(const torch::Tensor& images) = 0;
  virtual std::string id() const = 0;
  /// Frozen tensors, for digests and checkpoints.
  virtual std::vector<std::pair<std::string, torch::Tensor>> state() const = 0;
};

enum class ProbeFeatures { Stub, Shape };
ProbeFeatures parse_probe_features(std::string_view s);

/// Number of orientation bins in shape_descriptor.
inline constexpr std::int64_t kOrientationBins = 8;

/// Scale-normalized central moments in shape_descriptor: η20 η02 η11 η30 η03 η21 η12.
inline constexpr std::int64_t kShapeMoments = 7;

/// Translation- and scale-invariant silhouette descriptor, B×(3 + kOrientationBins + kShapeMoments):
/// foreground-weighted mean color, the normalized histogram of edge orientations of the
/// foreground map (soft bins over the doubled gradient angle), then scale-normalized central
/// moments η_pq = μ_pq / μ00^(1+(p+q)/2) of the squared foreground strength. Differentiable.
torch::Tensor shape_descriptor(const torch::Tensor& images);

/// Desk-scale stand-in for a contrastive image encoder. Image features are either mean- and
/// max-pooled multi-level features of a frozen tiny stub CNN or the shape descriptor; they are
/// standardized and mapped to the text space by a ridge-regression probe fitted once on
/// (real image, caption embedding) pairs.
class LinearProbeScorer final : public ImageTextScorer {
 public:
  LinearProbeScorer(std::uint64_t seed, std::int64_t input_resolution, torch::Dtype dtype,
                    ProbeFeatures kind = ProbeFeatures::Stub);

  /// Closed-form ridge fit; `ridge` is relative to the number of samples.
  void fit(const Dataset& dataset, const TextEncoder& encoder, double ridge);
  torch::Tensor features(const torch::Tensor& images);
  torch::Tensor embed_images(const torch::Tensor& images) override;
  std::string id() const override;
  std::vector<std::pair<std::string, torch::Tensor>> state() const override;
  void load_state(const std::vector<std::pair<std::string, torch::Tensor>>& tensors);

  bool fitted() const { return weight_.defined(); }

 private:
  ProbeFeatures kind_;
  std::uint64_t seed_;
  std::shared_ptr<Backbone> backbone_;
  torch::Dtype dtype_;
  torch::Tensor mean_, scale_, weight_, bias_;
};

/// Pretrained CLIP-style image tower (ViT with projection head) loaded from an archive.
class VitImageScorer final : public ImageTextScorer {
 public:
  VitImageScorer(const BackboneSpec& spec, torch::Dtype dtype);
  torch::Tensor embed_images(const torch::Tensor& images) override;
  std::string id() const override;
  std::vector<std::pair<std::string, torch::Tensor>> state() const override;

 private:
  std::shared_ptr<Backbone> backbone_;
};

}  // namespace tiger
