#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "tiger/backbones.hpp"
#include "tiger/data.hpp"
#include "tiger/scorer.hpp"

namespace tiger {

struct GaussianStats {
  torch::Tensor mu;     // d, float64
  torch::Tensor sigma;  // d×d, float64
};

/// Sample mean and unbiased covariance of the rows of an N×d matrix (N ≥ 2).
GaussianStats fit_gaussian(const torch::Tensor& features);

/// Symmetric square root through eigendecomposition, negative eigenvalues clamped to zero.
torch::Tensor matrix_sqrt_spd(const torch::Tensor& s);

double frechet_distance(const GaussianStats& a, const GaussianStats& b);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// images B×3×H×W in [-1, 1] → B×d float64.
  virtual torch::Tensor features(const torch::Tensor& images) = 0;
  virtual std::string id() const = 0;
};

/// Global-average-pooled final layer of a frozen tiny stub (d = 128).
class TinyStubExtractor final : public FeatureExtractor {
 public:
  explicit TinyStubExtractor(std::uint64_t seed = 0, std::int64_t input_resolution = 64);
  torch::Tensor features(const torch::Tensor& images) override;
  std::string id() const override;

 private:
  std::shared_ptr<Backbone> backbone_;
};

/// Pooled features of any frozen backbone (last tap), for full-scale drop-ins.
class BackboneExtractor final : public FeatureExtractor {
 public:
  explicit BackboneExtractor(const BackboneSpec& spec);
  torch::Tensor features(const torch::Tensor& images) override;
  std::string id() const override;

 private:
  std::shared_ptr<Backbone> backbone_;
};

double compute_fid(const torch::Tensor& real_images, const torch::Tensor& fake_images, FeatureExtractor& extractor);

/// Scores one image against candidate captions; higher means a better match.
class CaptionScorer {
 public:
  virtual ~CaptionScorer() = default;
  virtual std::vector<double> score(const torch::Tensor& image, const std::vector<std::string>& captions) = 0;
};

/// Pixel checker for toy captions: segments the non-gray foreground, classifies its mean color
/// and its shape (fill ratio of the largest component's bounding box), and scores a caption by
/// the number of matching attributes.
class TemplateOracleScorer final : public CaptionScorer {
 public:
  struct Reading {
    std::optional<std::size_t> color;
    std::optional<std::size_t> shape;
  };
  static Reading read(const torch::Tensor& image);
  std::vector<double> score(const torch::Tensor& image, const std::vector<std::string>& captions) override;
};

/// Cosine similarity between image-tower and text-encoder embeddings.
class EmbeddingCaptionScorer final : public CaptionScorer {
 public:
  EmbeddingCaptionScorer(ImageTextScorer& images, const TextEncoder& text) : images_(images), text_(text) {}
  std::vector<double> score(const torch::Tensor& image, const std::vector<std::string>& captions) override;

 private:
  ImageTextScorer& images_;
  const TextEncoder& text_;
};

/// Top-1 R-precision: each image's true caption competes with R−1 distractors drawn without
/// replacement from the pool entries that differ from it; ties count as misses.
double r_precision(const torch::Tensor& generated, const std::vector<std::string>& true_captions,
                   const std::vector<std::string>& distractor_pool, CaptionScorer& scorer, std::int64_t r,
                   std::uint64_t seed);

}  // namespace tiger
