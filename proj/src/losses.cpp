#include "tiger/losses.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "tiger/errors.hpp"

namespace tiger {

void LossWeights::validate(std::size_t n_subs) const {
  if (lambda_per_sub.size() != n_subs)
    throw ConfigError(fmt::format("loss.lambda_per_sub has {} entries but there are {} sub-discriminators",
                                  lambda_per_sub.size(), n_subs));
  for (double l : lambda_per_sub)
    if (!std::isfinite(l)) throw ConfigError("loss.lambda_per_sub entries must be finite");
  if (!std::isfinite(lambda_clip)) throw ConfigError("loss.lambda_clip must be finite");
  if (!std::isfinite(magp_k) || !std::isfinite(magp_p)) throw ConfigError("loss.magp_k and loss.magp_p must be finite");
}

torch::Tensor hinge_d_loss(const torch::Tensor& real_matched, const torch::Tensor& fake_matched,
                           const torch::Tensor& real_mismatched, bool symmetric) {
  const double real_weight = symmetric ? 0.5 : 1.0;
  return real_weight * torch::relu(1.0 - real_matched).mean() + 0.5 * torch::relu(1.0 + fake_matched).mean() +
         0.5 * torch::relu(1.0 + real_mismatched).mean();
}

GradientNorms gradient_norms_at(const torch::Tensor& scores, const torch::Tensor& images,
                                const torch::Tensor& sentences) {
  if (!scores.requires_grad())
    throw std::invalid_argument("score function output is not differentiable with respect to its inputs");
  auto grads = torch::autograd::grad({scores.sum()}, {images, sentences}, /*grad_outputs=*/{}, /*retain_graph=*/true,
                                     /*create_graph=*/true, /*allow_unused=*/true);
  auto gx = grads[0].defined() ? grads[0] : torch::zeros_like(images);
  auto gs = grads[1].defined() ? grads[1] : torch::zeros_like(sentences);
  return {gx.flatten(1).norm(2, 1), gs.flatten(1).norm(2, 1)};
}

GradientNorms score_gradient_norms(const ScoreFn& score_fn, const torch::Tensor& images,
                                   const torch::Tensor& sentences) {
  auto x = images.detach().requires_grad_(true);
  auto s = sentences.detach().requires_grad_(true);
  return gradient_norms_at(score_fn(x, s), x, s);
}

torch::Tensor magp_penalty(const GradientNorms& norms, double k, double p) {
  return k * (norms.image + norms.sentence).pow(p).mean();
}

torch::Tensor magp(const ScoreFn& score_fn, const torch::Tensor& images, const torch::Tensor& sentences, double k,
                   double p) {
  return magp_penalty(score_gradient_norms(score_fn, images, sentences), k, p);
}

torch::Tensor discriminator_total_loss(const std::vector<std::pair<torch::Tensor, torch::Tensor>>& per_sub,
                                       const LossWeights& w) {
  w.validate(per_sub.size());
  if (per_sub.empty()) throw ConfigError("at least one sub-discriminator loss is required");
  torch::Tensor total;
  for (std::size_t i = 0; i < per_sub.size(); ++i) {
    auto term = w.lambda_per_sub[i] * (per_sub[i].first + per_sub[i].second);
    total = total.defined() ? total + term : term;
  }
  return total;
}

torch::Tensor semantic_contrastive_loss(const torch::Tensor& image_embeddings, const torch::Tensor& text_embeddings) {
  if (image_embeddings.sizes() != text_embeddings.sizes() || image_embeddings.dim() != 2)
    throw std::invalid_argument("image and text embeddings must both be B×d");
  auto ni = image_embeddings.norm(2, 1);
  auto nt = text_embeddings.norm(2, 1);
  if ((ni == 0).any().item<bool>() || (nt == 0).any().item<bool>())
    throw std::invalid_argument("zero-norm embedding: the scorer is degenerate");
  auto cos = (image_embeddings * text_embeddings).sum(1) / (ni * nt);
  return kContrastiveSign * cos.mean();
}

torch::Tensor generator_loss(const std::vector<torch::Tensor>& fake_scores, const torch::Tensor& clip_term,
                             const LossWeights& w) {
  w.validate(fake_scores.size());
  auto loss = w.lambda_clip * clip_term;
  for (std::size_t i = 0; i < fake_scores.size(); ++i) loss = loss - w.lambda_per_sub[i] * fake_scores[i].mean();
  return loss;
}

}  // namespace tiger
