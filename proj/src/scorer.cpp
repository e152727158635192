#include "tiger/scorer.hpp"

#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "tiger/errors.hpp"
#include "tiger/tensor_archive.hpp"

namespace F = torch::nn::functional;

namespace tiger {

ProbeFeatures parse_probe_features(std::string_view s) {
  if (s == "stub") return ProbeFeatures::Stub;
  if (s == "shape") return ProbeFeatures::Shape;
  throw ConfigError(fmt::format("unknown probe features '{}' (expected stub or shape)", s));
}

torch::Tensor shape_descriptor(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw std::invalid_argument("shape_descriptor expects B×3×H×W");
  constexpr double kEps = 1e-6;
  auto d = images - kToyBackground;
  auto w = (d.square().sum(1, true) + kEps).sqrt();  // B×1×H×W foreground strength
  auto color = (w * images).sum({2, 3}) / w.sum({2, 3});

  auto opts = torch::TensorOptions().dtype(images.scalar_type());
  auto sobel_x = torch::tensor({-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0}, opts).view({1, 1, 3, 3});
  auto sobel_y = sobel_x.transpose(2, 3);
  auto padded = F::pad(w, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
  auto gx = F::conv2d(padded, sobel_x);
  auto gy = F::conv2d(padded, sobel_y);
  auto m = (gx.square() + gy.square() + kEps).sqrt();
  // doubled angle: opposite gradient directions share a bin
  auto c2 = (gx.square() - gy.square()) / m;
  auto s2 = 2.0 * gx * gy / m;
  std::vector<torch::Tensor> bins;
  for (std::int64_t k = 0; k < kOrientationBins; ++k) {
    const double phi = 2.0 * std::numbers::pi * static_cast<double>(k) / kOrientationBins;
    bins.push_back(F::relu(c2 * std::cos(phi) + s2 * std::sin(phi)).square().sum({1, 2, 3}));
  }
  auto hist = torch::stack(bins, 1);
  hist = hist / (hist.sum(1, true) + kEps);

  auto mass = d.square().sum(1);  // B×H×W
  const auto h = images.size(2), wd = images.size(3);
  auto ys = torch::arange(h, opts).view({1, h, 1});
  auto xs = torch::arange(wd, opts).view({1, 1, wd});
  auto m00 = mass.sum({1, 2}) + kEps;
  auto cy = (mass * ys).sum({1, 2}) / m00;
  auto cx = (mass * xs).sum({1, 2}) / m00;
  auto dy = ys - cy.view({-1, 1, 1});
  auto dx = xs - cx.view({-1, 1, 1});
  auto eta = [&](int p, int q) {
    return (mass * dx.pow(p) * dy.pow(q)).sum({1, 2}) / m00.pow(1.0 + (p + q) / 2.0);
  };
  auto moments = torch::stack({eta(2, 0), eta(0, 2), eta(1, 1), eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)}, 1);
  return torch::cat({color, hist, moments}, 1);
}

LinearProbeScorer::LinearProbeScorer(std::uint64_t seed, std::int64_t input_resolution, torch::Dtype dtype,
                                     ProbeFeatures kind)
    : kind_(kind), seed_(seed), dtype_(dtype) {
  if (kind_ == ProbeFeatures::Shape) return;
  auto spec = BackboneSpec::defaults(BackboneKind::TinyStub);
  spec.seed = seed;
  spec.input_resolution = input_resolution;
  backbone_ = load_backbone(spec, dtype);
}

torch::Tensor LinearProbeScorer::features(const torch::Tensor& images) {
  if (kind_ == ProbeFeatures::Shape) return shape_descriptor(images.to(dtype_));
  auto taps = backbone_->forward_taps(preprocess(images.to(dtype_), backbone_->spec()));
  std::vector<torch::Tensor> parts;
  for (const auto& t : taps) parts.push_back(t.mean({2, 3}));
  for (const auto& t : taps) parts.push_back(t.amax({2, 3}));
  return torch::cat(parts, 1);
}

void LinearProbeScorer::fit(const Dataset& dataset, const TextEncoder& encoder, double ridge) {
  if (dataset.size() < 2) throw ConfigError("the probe scorer needs at least 2 records to fit");
  torch::NoGradGuard no_grad;
  std::vector<torch::Tensor> feats, targets;
  constexpr std::size_t kChunk = 100;
  for (std::size_t start = 0; start < dataset.size(); start += kChunk) {
    std::vector<torch::Tensor> imgs;
    for (std::size_t i = start; i < std::min(dataset.size(), start + kChunk); ++i) {
      imgs.push_back(dataset[i].image);
      targets.push_back(encode_text(encoder, dataset[i].captions.front()).vector);
    }
    feats.push_back(features(torch::stack(imgs)).to(torch::kFloat64));
  }
  auto x = torch::cat(feats, 0);
  auto y = torch::stack(targets).to(torch::kFloat64);
  const auto n = static_cast<double>(x.size(0));

  auto mean = x.mean(0);
  auto scale = x.std(0, /*unbiased=*/false).clamp_min(1e-8);
  auto xs = (x - mean) / scale;
  auto y_mean = y.mean(0);
  auto gram = xs.t().mm(xs) + ridge * n * torch::eye(xs.size(1), torch::kFloat64);
  auto w = torch::linalg_solve(gram, xs.t().mm(y - y_mean));

  mean_ = mean.to(dtype_);
  scale_ = scale.to(dtype_);
  weight_ = w.to(dtype_);
  bias_ = y_mean.to(dtype_);
}

torch::Tensor LinearProbeScorer::embed_images(const torch::Tensor& images) {
  if (!fitted()) throw std::logic_error("LinearProbeScorer used before fit()");
  return ((features(images) - mean_) / scale_).mm(weight_) + bias_;
}

std::string LinearProbeScorer::id() const {
  if (kind_ == ProbeFeatures::Shape) return "probe-shape";
  return fmt::format("probe-tiny_stub-s{}", seed_);
}

std::vector<std::pair<std::string, torch::Tensor>> LinearProbeScorer::state() const {
  return {{"mean", mean_}, {"scale", scale_}, {"weight", weight_}, {"bias", bias_}};
}

void LinearProbeScorer::load_state(const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
  for (const auto& [name, t] : tensors) {
    auto v = t.to(dtype_);
    if (name == "mean") mean_ = v;
    else if (name == "scale") scale_ = v;
    else if (name == "weight") weight_ = v;
    else if (name == "bias") bias_ = v;
    else throw FormatError("unknown probe scorer tensor '" + name + "'");
  }
}

VitImageScorer::VitImageScorer(const BackboneSpec& spec, torch::Dtype dtype) {
  if (spec.kind != BackboneKind::ClipVit && spec.kind != BackboneKind::DinoVit)
    throw ConfigError("the ViT image scorer needs a ViT backbone");
  backbone_ = load_backbone(spec, dtype);
}

torch::Tensor VitImageScorer::embed_images(const torch::Tensor& images) {
  auto& vit = dynamic_cast<VitBackbone&>(*backbone_);
  const auto dtype = vit.parameters().front().scalar_type();
  return vit.pooled(preprocess(images.to(dtype), backbone_->spec()));
}

std::string VitImageScorer::id() const { return fmt::format("vit-{}", backbone_->load_digest()); }

std::vector<std::pair<std::string, torch::Tensor>> VitImageScorer::state() const { return named_state(*backbone_); }

}  // namespace tiger
