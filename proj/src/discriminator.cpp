#include "tiger/discriminator.hpp"

#include <cmath>

#include <fmt/format.h>

#include "tiger/errors.hpp"

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace tiger {
namespace {

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(kDiscriminatorSlope));
}

nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride = 1, std::int64_t pad = 0) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(pad));
}

}  // namespace

AdapterKind parse_adapter_kind(std::string_view s) {
  if (s == "single") return AdapterKind::Single;
  if (s == "A") return AdapterKind::A;
  if (s == "B") return AdapterKind::B;
  throw ConfigError(fmt::format("unknown adapter '{}' (expected single, A or B)", s));
}

std::string_view to_string(AdapterKind k) {
  switch (k) {
    case AdapterKind::Single: return "single";
    case AdapterKind::A: return "A";
    case AdapterKind::B: return "B";
  }
  return "?";
}

void SubDiscriminatorConfig::validate() const {
  backbone.validate();
  const auto taps = backbone.layer_taps.size();
  if (adapter == AdapterKind::Single && taps != 1)
    throw ConfigError(fmt::format("adapter 'single' needs exactly one layer tap, got {}", taps));
  if (adapter != AdapterKind::Single && taps < 2)
    throw ConfigError(fmt::format("adapter '{}' needs at least two layer taps, got {}", to_string(adapter), taps));
  if (!std::isfinite(lambda_weight) || lambda_weight < 0.0) throw ConfigError("lambda weight must be finite and ≥ 0");
  if (assessor_channels < 1) throw ConfigError("assessor_channels must be positive");
  if (adapter == AdapterKind::A && assessor_channels < static_cast<std::int64_t>(taps))
    throw ConfigError("assessor_channels must be at least the number of taps for adapter A");
}

torch::Tensor resize_to(const torch::Tensor& x, std::int64_t out_h, std::int64_t out_w) {
  const auto h = x.size(2), w = x.size(3);
  if (h == out_h && w == out_w) return x;
  // Integer factors have cheap equivalents of the adaptive pool: a strided average when shrinking,
  // nearest replication when growing.
  if (h % out_h == 0 && w % out_w == 0 && h / out_h == w / out_w)
    return F::avg_pool2d(x, F::AvgPool2dFuncOptions(h / out_h).stride(h / out_h));
  if (out_h % h == 0 && out_w % w == 0)
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{out_h, out_w})
                                 .mode(torch::kNearest));
  return F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({out_h, out_w}));
}

torch::Tensor resize_to_grid(const torch::Tensor& x, std::int64_t side) { return resize_to(x, side, side); }

torch::Tensor replicate_and_concat(const torch::Tensor& vision, const torch::Tensor& sentence) {
  if (sentence.dim() != 2 || sentence.size(0) != vision.size(0))
    throw ConfigError("sentence batch must be B×d_text with the same B as the feature map");
  const auto b = vision.size(0);
  const auto d = sentence.size(1);
  auto tiled = sentence.view({b, d, 1, 1}).expand({b, d, vision.size(2), vision.size(3)});
  return torch::cat({vision, tiled}, 1);
}

// Single ---------------------------------------------------------------------

SingleAdapterImpl::SingleAdapterImpl(std::int64_t in_channels, std::int64_t out_channels) {
  conv1 = register_module("conv1", conv(in_channels, out_channels, 3, 1, 1));
  conv2 = register_module("conv2", conv(out_channels, out_channels, 3, 1, 1));
}

torch::Tensor SingleAdapterImpl::forward(const MultiLevelFeatures& features) {
  if (features.levels.size() != 1)
    throw ConfigError(fmt::format("single adapter got {} feature levels", features.levels.size()));
  auto h = lrelu(conv1(features.levels[0]));
  h = lrelu(conv2(h));
  return resize_to_grid(h, kAdapterGrid);
}

// A: parallel ----------------------------------------------------------------

ParallelAdapterImpl::ParallelAdapterImpl(const std::vector<std::int64_t>& in_channels, std::int64_t out_channels) {
  const auto levels = static_cast<std::int64_t>(in_channels.size());
  for (std::int64_t i = 0; i < levels; ++i) {
    const auto c = out_channels / levels + (i < out_channels % levels ? 1 : 0);
    branch_channels.push_back(c);
    branches.push_back(register_module(fmt::format("branch{}", i), conv(in_channels[static_cast<std::size_t>(i)], c, 1)));
  }
  fuse = register_module("fuse", conv(out_channels, out_channels, 1));
}

torch::Tensor ParallelAdapterImpl::forward(const MultiLevelFeatures& features) {
  if (features.levels.size() != branches.size())
    throw ConfigError(fmt::format("adapter A built for {} levels got {}", branches.size(), features.levels.size()));
  std::vector<torch::Tensor> parts;
  for (std::size_t i = 0; i < branches.size(); ++i)
    parts.push_back(resize_to_grid(lrelu(branches[i](features.levels[i])), kAdapterGrid));
  return fuse(torch::cat(parts, 1));
}

// B: sequential --------------------------------------------------------------

SequentialAdapterImpl::SequentialAdapterImpl(const std::vector<std::int64_t>& in_channels,
                                             std::int64_t out_channels) {
  for (std::size_t i = 0; i < in_channels.size(); ++i)
    projections.push_back(register_module(fmt::format("proj{}", i), conv(in_channels[i], out_channels, 1)));
  for (std::size_t i = 0; i + 1 < in_channels.size(); ++i)
    refines.push_back(register_module(fmt::format("refine{}", i), conv(out_channels, out_channels, 3, 1, 1)));
  head = register_module("head", conv(out_channels, out_channels, 1));
}

torch::Tensor SequentialAdapterImpl::forward(const MultiLevelFeatures& features) {
  if (features.levels.size() != projections.size())
    throw ConfigError(fmt::format("adapter B built for {} levels got {}", projections.size(), features.levels.size()));
  const auto last = projections.size() - 1;
  auto h = projections[last](features.levels[last]);
  for (std::size_t k = last; k-- > 0;) {
    const auto& level = features.levels[k];
    h = resize_to(h, level.size(2), level.size(3));
    h = lrelu(refines[k](h + projections[k](level)));
  }
  return head(resize_to_grid(h, kAdapterGrid));
}

// Assessor -------------------------------------------------------------------

ImageAssessorImpl::ImageAssessorImpl(std::int64_t in_channels, std::int64_t hidden_channels) {
  conv1 = register_module("conv1", conv(in_channels, hidden_channels, 3, 1, 1));
  conv2 = register_module("conv2", conv(hidden_channels, hidden_channels, 3, 2, 1));
  head = register_module("head", conv(hidden_channels, 1, 4));
}

torch::Tensor ImageAssessorImpl::forward(const torch::Tensor& fused) {
  if ((fused.size(2) + 1) / 2 < 4 || (fused.size(3) + 1) / 2 < 4)
    throw ConfigError(fmt::format("assessor input {}×{} is too small for the 4×4 head", fused.size(2), fused.size(3)));
  auto h = lrelu(conv1(fused));
  h = lrelu(conv2(h));
  h = head(h);  // B×1×h'×w'
  return h.flatten(1).mean(1);
}

// Sub-discriminator ----------------------------------------------------------

SubDiscriminatorImpl::SubDiscriminatorImpl(SubDiscriminatorConfig cfg, std::shared_ptr<Backbone> bb,
                                           std::int64_t d_text)
    : config(std::move(cfg)), backbone(std::move(bb)) {
  config.validate();
  std::vector<std::int64_t> channels;
  for (const auto& s : backbone->tap_shapes()) channels.push_back(s[0]);
  const auto ac = config.assessor_channels;
  switch (config.adapter) {
    case AdapterKind::Single: adapter = std::make_shared<SingleAdapterImpl>(channels.at(0), ac); break;
    case AdapterKind::A: adapter = std::make_shared<ParallelAdapterImpl>(channels, ac); break;
    case AdapterKind::B: adapter = std::make_shared<SequentialAdapterImpl>(channels, ac); break;
  }
  register_module("adapter", adapter);
  assessor = register_module("assessor", ImageAssessor(ac + d_text, ac));
}

torch::Tensor SubDiscriminatorImpl::forward(const torch::Tensor& images, const torch::Tensor& sentence) {
  auto features = extract(*backbone, preprocess(images, backbone->spec()));
  return assessor(replicate_and_concat(adapter->forward(features), sentence));
}

}  // namespace tiger
