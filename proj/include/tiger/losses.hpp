#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace tiger {

struct LossWeights {
  std::vector<double> lambda_per_sub{1.0, 0.001};
  double lambda_clip = 4.0;
  double magp_k = 2.0;
  double magp_p = 6.0;
  /// Put ½ on the real-matched hinge as well (the default keeps the asymmetric form).
  bool symmetric_hinge = false;
  /// Apply the gradient penalty inside every sub-discriminator (false: first one only).
  bool magp_all_subs = true;

  void validate(std::size_t n_subs) const;
};

/// The contrastive term is negated cosine so that minimizing it aligns image and text.
inline constexpr double kContrastiveSign = -1.0;

/// mean max(0, 1 − real) + ½ mean max(0, 1 + fake) + ½ mean max(0, 1 + mismatched)
torch::Tensor hinge_d_loss(const torch::Tensor& real_matched, const torch::Tensor& fake_matched,
                           const torch::Tensor& real_mismatched, bool symmetric = false);

using ScoreFn = std::function<torch::Tensor(const torch::Tensor& images, const torch::Tensor& sentences)>;

struct GradientNorms {
  torch::Tensor image;     // B, ‖∇_x D‖₂ per sample
  torch::Tensor sentence;  // B, ‖∇_s D‖₂ per sample
};

/// Per-sample gradient norms of D at (x, s), kept differentiable (create_graph) so the penalty
/// can be back-propagated into the discriminator parameters.
GradientNorms score_gradient_norms(const ScoreFn& score_fn, const torch::Tensor& images,
                                   const torch::Tensor& sentences);

/// Same as score_gradient_norms for scores already computed from leaf tensors `images` and
/// `sentences` (lets the training step reuse its real-matched forward pass).
GradientNorms gradient_norms_at(const torch::Tensor& scores, const torch::Tensor& images,
                                const torch::Tensor& sentences);

torch::Tensor magp_penalty(const GradientNorms& norms, double k, double p);

/// Matching-aware gradient penalty: k · mean_b (‖∇_x D‖ + ‖∇_s D‖)^p at real matched pairs.
/// Throws std::invalid_argument when score_fn's output is not differentiable in its inputs.
torch::Tensor magp(const ScoreFn& score_fn, const torch::Tensor& images, const torch::Tensor& sentences,
                   double k, double p);

/// Σᵢ λᵢ · (hingeᵢ + magpᵢ)
torch::Tensor discriminator_total_loss(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& per_sub,
                                       const LossWeights& w);

/// kContrastiveSign · mean_b cos(I_b, T_b). Throws std::invalid_argument on a zero-norm row.
torch::Tensor semantic_contrastive_loss(const torch::Tensor& image_embeddings, const torch::Tensor& text_embeddings);

/// λ_CLIP · clip_term − Σᵢ λᵢ · mean(Dᵢ(x̂, s))
torch::Tensor generator_loss(const std::vector<torch::Tensor>& fake_scores, const torch::Tensor& clip_term,
                             const LossWeights& w);

}  // namespace tiger
