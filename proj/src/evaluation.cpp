#include "tiger/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "tiger/errors.hpp"

namespace tiger {

GaussianStats fit_gaussian(const torch::Tensor& features) {
  if (features.dim() != 2) throw std::invalid_argument("fit_gaussian expects an N×d matrix");
  if (features.size(0) < 2) throw std::invalid_argument("fit_gaussian needs at least 2 samples");
  auto x = features.to(torch::kFloat64);
  auto mu = x.mean(0);
  auto centered = x - mu;
  auto sigma = centered.t().mm(centered) / static_cast<double>(x.size(0) - 1);
  return {mu, sigma};
}

torch::Tensor matrix_sqrt_spd(const torch::Tensor& s) {
  if (s.dim() != 2 || s.size(0) != s.size(1)) throw std::invalid_argument("matrix_sqrt_spd expects a square matrix");
  auto m = s.to(torch::kFloat64);
  const double asym = (m - m.t()).abs().max().item<double>();
  const double scale = std::max(1.0, m.abs().max().item<double>());
  if (asym > 1e-8 * scale) throw std::invalid_argument(fmt::format("matrix is not symmetric (max |S - S^T| = {:.3g})", asym));
  auto [evals, evecs] = torch::linalg_eigh(0.5 * (m + m.t()));
  return evecs.mm(torch::diag(evals.clamp_min(0.0).sqrt())).mm(evecs.t());
}

namespace {

double trace_sqrt_product(const torch::Tensor& a, const torch::Tensor& b) {
  auto ra = matrix_sqrt_spd(a);
  auto inner = ra.mm(b).mm(ra);
  auto evals = torch::linalg_eigvalsh(0.5 * (inner + inner.t()));
  return evals.clamp_min(0.0).sqrt().sum().item<double>();
}

}  // namespace

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mu.numel() != b.mu.numel() || a.sigma.sizes() != b.sigma.sizes())
    throw std::invalid_argument(fmt::format("dimension mismatch: {} vs {}", a.mu.numel(), b.mu.numel()));
  auto sa = a.sigma.to(torch::kFloat64);
  auto sb = b.sigma.to(torch::kFloat64);
  const double mean_term = (a.mu.to(torch::kFloat64) - b.mu.to(torch::kFloat64)).pow(2).sum().item<double>();
  // Both orderings give the same spectrum in exact arithmetic; averaging makes the result symmetric.
  const double cross = 0.5 * (trace_sqrt_product(sa, sb) + trace_sqrt_product(sb, sa));
  const double value = mean_term + sa.trace().item<double>() + sb.trace().item<double>() - 2.0 * cross;
  if (value < 0.0) {
    if (value < -1e-6) spdlog::warn("Frechet distance {:.3g} is negative beyond tolerance; clamped to 0", value);
    return 0.0;
  }
  return value;
}

TinyStubExtractor::TinyStubExtractor(std::uint64_t seed, std::int64_t input_resolution) {
  auto spec = BackboneSpec::defaults(BackboneKind::TinyStub);
  spec.seed = seed;
  spec.input_resolution = input_resolution;
  spec.layer_taps = {4};
  backbone_ = load_backbone(spec, torch::kFloat64);
}

torch::Tensor TinyStubExtractor::features(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto taps = backbone_->forward_taps(preprocess(images.to(torch::kFloat64), backbone_->spec()));
  return taps.back().mean({2, 3});
}

std::string TinyStubExtractor::id() const { return fmt::format("tiny_stub-s{}-l4-gap", backbone_->spec().seed); }

BackboneExtractor::BackboneExtractor(const BackboneSpec& spec) { backbone_ = load_backbone(spec, torch::kFloat32); }

torch::Tensor BackboneExtractor::features(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  auto taps = backbone_->forward_taps(preprocess(images.to(torch::kFloat32), backbone_->spec()));
  return taps.back().mean({2, 3}).to(torch::kFloat64);
}

std::string BackboneExtractor::id() const {
  return fmt::format("{}-{}", to_string(backbone_->spec().kind), backbone_->load_digest());
}

namespace {

torch::Tensor chunked_features(const torch::Tensor& images, FeatureExtractor& extractor) {
  constexpr std::int64_t kChunk = 100;
  std::vector<torch::Tensor> parts;
  for (std::int64_t start = 0; start < images.size(0); start += kChunk)
    parts.push_back(extractor.features(images.slice(0, start, std::min(images.size(0), start + kChunk))));
  return torch::cat(parts, 0);
}

}  // namespace

double compute_fid(const torch::Tensor& real_images, const torch::Tensor& fake_images, FeatureExtractor& extractor) {
  if (real_images.size(0) < 2 || fake_images.size(0) < 2) throw std::invalid_argument("FID needs at least 2 images per set");
  return frechet_distance(fit_gaussian(chunked_features(real_images, extractor)),
                          fit_gaussian(chunked_features(fake_images, extractor)));
}

TemplateOracleScorer::Reading TemplateOracleScorer::read(const torch::Tensor& image) {
  auto img = image.detach().to(torch::kFloat64).contiguous();
  const auto h = img.size(1), w = img.size(2);
  auto acc = img.accessor<double, 3>();
  constexpr double kForeground = 0.35;

  std::vector<std::uint8_t> mask(static_cast<std::size_t>(h * w), 0);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(acc[c][y][x] - kToyBackground));
      mask[static_cast<std::size_t>(y * w + x)] = d > kForeground;
    }

  // Largest 4-connected foreground component.
  std::vector<int> label(mask.size(), -1);
  std::vector<std::int64_t> best;
  for (std::int64_t start = 0; start < h * w; ++start) {
    if (!mask[start] || label[start] >= 0) continue;
    std::vector<std::int64_t> comp;
    std::queue<std::int64_t> q;
    q.push(start);
    label[start] = 1;
    while (!q.empty()) {
      auto p = q.front();
      q.pop();
      comp.push_back(p);
      const auto y = p / w, x = p % w;
      const std::int64_t nbrs[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& n : nbrs) {
        if (n[0] < 0 || n[0] >= h || n[1] < 0 || n[1] >= w) continue;
        const auto k = n[0] * w + n[1];
        if (mask[k] && label[k] < 0) {
          label[k] = 1;
          q.push(k);
        }
      }
    }
    if (comp.size() > best.size()) best = std::move(comp);
  }

  Reading out;
  if (best.size() < 4) return out;

  std::array<double, 3> rgb{0, 0, 0};
  std::int64_t y0 = h, y1 = -1, x0 = w, x1 = -1;
  for (auto p : best) {
    const auto y = p / w, x = p % w;
    for (int c = 0; c < 3; ++c) rgb[c] += acc[c][y][x];
    y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
  }
  for (auto& v : rgb) v /= static_cast<double>(best.size());

  double best_d = INFINITY;
  for (std::size_t c = 0; c < kToyColors.size(); ++c) {
    auto ref = toy_color_rgb(c);
    double d = 0;
    for (int k = 0; k < 3; ++k) d += (rgb[k] - ref[k]) * (rgb[k] - ref[k]);
    if (d < best_d) best_d = d, out.color = c;
  }

  const double box = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
  const double fill = static_cast<double>(best.size()) / box;
  // Ideal fill ratios: square 1, circle π/4, triangle 1/2.
  out.shape = fill > 0.89 ? 1 : (fill > 0.64 ? 0 : 2);
  return out;
}

std::vector<double> TemplateOracleScorer::score(const torch::Tensor& image, const std::vector<std::string>& captions) {
  const auto reading = read(image);
  std::vector<double> scores;
  scores.reserve(captions.size());
  for (const auto& c : captions) {
    auto parsed = parse_toy_caption(c);
    if (!parsed) {
      scores.push_back(-1.0);
      continue;
    }
    scores.push_back(static_cast<double>(reading.color == parsed->first) +
                     static_cast<double>(reading.shape == parsed->second));
  }
  return scores;
}

std::vector<double> EmbeddingCaptionScorer::score(const torch::Tensor& image, const std::vector<std::string>& captions) {
  torch::NoGradGuard no_grad;
  auto emb = images_.embed_images(image.unsqueeze(0)).to(torch::kFloat64).squeeze(0);
  std::vector<double> out;
  out.reserve(captions.size());
  for (const auto& c : captions) {
    auto t = encode_text(text_, c).vector.to(torch::kFloat64);
    out.push_back(torch::cosine_similarity(emb, t, 0, 1e-12).item<double>());
  }
  return out;
}

double r_precision(const torch::Tensor& generated, const std::vector<std::string>& true_captions,
                   const std::vector<std::string>& distractor_pool, CaptionScorer& scorer, std::int64_t r,
                   std::uint64_t seed) {
  if (r < 2) throw std::invalid_argument("R-precision needs R >= 2");
  if (generated.size(0) != static_cast<std::int64_t>(true_captions.size()))
    throw std::invalid_argument("one true caption per generated image is required");
  if (true_captions.empty()) throw std::invalid_argument("R-precision over an empty set");
  std::mt19937_64 rng(seed);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < true_captions.size(); ++i) {
    std::vector<std::string> eligible;
    for (const auto& c : distractor_pool)
      if (c != true_captions[i]) eligible.push_back(c);
    if (static_cast<std::int64_t>(eligible.size()) < r - 1)
      throw std::invalid_argument(fmt::format("caption {} has {} distractors; R-precision with R={} needs {}", i,
                                              eligible.size(), r, r - 1));
    std::vector<std::string> candidates{true_captions[i]};
    for (std::int64_t k = 0; k < r - 1; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, eligible.size() - 1);
      std::swap(eligible[k], eligible[pick(rng)]);
      candidates.push_back(eligible[k]);
    }
    auto scores = scorer.score(generated[static_cast<std::int64_t>(i)], candidates);
    const double best_other = *std::max_element(scores.begin() + 1, scores.end());
    hits += scores[0] > best_other;
  }
  return static_cast<double>(hits) / static_cast<double>(true_captions.size());
}

}  // namespace tiger
