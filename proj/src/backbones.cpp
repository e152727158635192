#include "tiger/backbones.hpp"

#include <cmath>
#include <cstdlib>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "tiger/errors.hpp"
#include "tiger/tensor_archive.hpp"

namespace F = torch::nn::functional;
namespace nn = torch::nn;

namespace tiger {

BackboneKind parse_backbone_kind(std::string_view s) {
  if (s == "clip_vit") return BackboneKind::ClipVit;
  if (s == "dino_vit") return BackboneKind::DinoVit;
  if (s == "single_level_cnn") return BackboneKind::SingleLevelCnn;
  if (s == "tiny_stub") return BackboneKind::TinyStub;
  throw ConfigError(fmt::format("unknown backbone kind '{}'", s));
}

std::string_view to_string(BackboneKind k) {
  switch (k) {
    case BackboneKind::ClipVit: return "clip_vit";
    case BackboneKind::DinoVit: return "dino_vit";
    case BackboneKind::SingleLevelCnn: return "single_level_cnn";
    case BackboneKind::TinyStub: return "tiny_stub";
  }
  return "?";
}

std::vector<std::int64_t> default_taps(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::ClipVit: return {2, 5, 9};
    case BackboneKind::DinoVit: return {1, 5, 9};
    case BackboneKind::SingleLevelCnn: return {1};
    case BackboneKind::TinyStub: return {1, 2, 3, 4};
  }
  return {};
}

BackboneSpec BackboneSpec::defaults(BackboneKind kind) {
  BackboneSpec s;
  s.kind = kind;
  s.layer_taps = default_taps(kind);
  switch (kind) {
    case BackboneKind::ClipVit:
      s.input_resolution = 224;
      s.mean = {0.48145466, 0.4578275, 0.40821073};
      s.std = {0.26862954, 0.26130258, 0.27577711};
      break;
    case BackboneKind::DinoVit:
    case BackboneKind::SingleLevelCnn:
      s.input_resolution = 224;
      s.mean = {0.485, 0.456, 0.406};
      s.std = {0.229, 0.224, 0.225};
      break;
    case BackboneKind::TinyStub:
      s.input_resolution = 64;
      break;
  }
  return s;
}

void BackboneSpec::validate() const {
  if (layer_taps.empty()) throw ConfigError("backbone.layer_taps must not be empty");
  for (std::size_t i = 0; i < layer_taps.size(); ++i) {
    if (layer_taps[i] < 1) throw ConfigError("backbone.layer_taps are 1-based; got " + std::to_string(layer_taps[i]));
    if (i > 0 && layer_taps[i] <= layer_taps[i - 1])
      throw ConfigError(fmt::format("backbone.layer_taps must be strictly increasing, got {}", layer_taps));
  }
  if (input_resolution < 1) throw ConfigError("backbone.input_resolution must be positive");
  for (double s : std)
    if (!(s > 0.0)) throw ConfigError("backbone.std entries must be positive");
  if (kind == BackboneKind::TinyStub && weights_path)
    throw ConfigError("backbone.weights_path must be absent for tiny_stub");
  if (kind != BackboneKind::TinyStub && !weights_path)
    throw ConfigError(fmt::format("backbone.weights_path is required for {}", to_string(kind)));
}

// Backbone -------------------------------------------------------------------

std::string Backbone::digest() const { return tensor_digest(named_state(*this)); }

void Backbone::freeze() {
  for (auto& p : parameters()) p.requires_grad_(false);
  eval();
  load_digest_ = digest();
}

std::vector<std::array<std::int64_t, 3>> Backbone::tap_shapes() {
  torch::NoGradGuard no_grad;
  const auto dtype = parameters().front().scalar_type();
  auto x = torch::zeros({1, 3, spec_.input_resolution, spec_.input_resolution}, torch::TensorOptions().dtype(dtype));
  std::vector<std::array<std::int64_t, 3>> out;
  for (const auto& t : forward_taps(x)) out.push_back({t.size(1), t.size(2), t.size(3)});
  return out;
}

// Tiny stub ------------------------------------------------------------------

TinyStubBackbone::TinyStubBackbone(BackboneSpec spec) : Backbone(std::move(spec)) {
  const std::array<std::int64_t, 5> channels = {3, 16, 32, 64, 128};
  auto gen = at::make_generator<at::CPUGeneratorImpl>(spec_.seed);
  torch::NoGradGuard no_grad;
  for (std::size_t i = 0; i < 4; ++i) {
    auto conv = nn::Conv2d(nn::Conv2dOptions(channels[i], channels[i + 1], 3).stride(2).padding(1));
    const double fan_in = static_cast<double>(channels[i] * 9);
    conv->weight.normal_(0.0, std::sqrt(2.0 / fan_in), gen);
    conv->bias.uniform_(-0.1, 0.1, gen);
    layers_.push_back(register_module(fmt::format("conv{}", i + 1), conv));
  }
}

std::vector<torch::Tensor> TinyStubBackbone::forward_taps(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x;
  std::size_t next = 0;
  const auto& taps = spec_.layer_taps;
  for (std::int64_t i = 0; i < depth() && next < taps.size(); ++i) {
    h = F::leaky_relu(layers_[static_cast<std::size_t>(i)](h), F::LeakyReLUFuncOptions().negative_slope(0.2));
    if (taps[next] == i + 1) {
      out.push_back(h);
      ++next;
    }
  }
  return out;
}

// ViT ------------------------------------------------------------------------

nlohmann::json VitArch::to_json() const {
  return {{"width", width},   {"depth", depth},           {"heads", heads},     {"patch", patch},
          {"image_size", image_size}, {"mlp_dim", mlp_dim}, {"activation", activation}, {"ln_pre", ln_pre},
          {"patch_bias", patch_bias}, {"eps", eps},         {"embed_dim", embed_dim}};
}

VitArch VitArch::from_json(const nlohmann::json& j) {
  VitArch a;
  a.width = j.at("width").get<std::int64_t>();
  a.depth = j.at("depth").get<std::int64_t>();
  a.heads = j.at("heads").get<std::int64_t>();
  a.patch = j.at("patch").get<std::int64_t>();
  a.image_size = j.at("image_size").get<std::int64_t>();
  a.mlp_dim = j.at("mlp_dim").get<std::int64_t>();
  a.activation = j.value("activation", std::string("gelu"));
  a.ln_pre = j.value("ln_pre", false);
  a.patch_bias = j.value("patch_bias", true);
  a.eps = j.value("eps", 1e-6);
  a.embed_dim = j.value("embed_dim", std::int64_t{0});
  if (a.width % a.heads != 0) throw FormatError("ViT width must be divisible by heads");
  if (a.image_size % a.patch != 0) throw FormatError("ViT image_size must be divisible by patch");
  if (a.activation != "gelu" && a.activation != "quick_gelu")
    throw FormatError("unknown ViT activation '" + a.activation + "'");
  return a;
}

VitBlockImpl::VitBlockImpl(const VitArch& arch) : heads(arch.heads), quick_gelu(arch.activation == "quick_gelu") {
  auto ln = nn::LayerNormOptions({arch.width}).eps(arch.eps);
  ln1 = register_module("ln1", nn::LayerNorm(ln));
  qkv = register_module("qkv", nn::Linear(arch.width, 3 * arch.width));
  proj = register_module("proj", nn::Linear(arch.width, arch.width));
  ln2 = register_module("ln2", nn::LayerNorm(ln));
  fc1 = register_module("fc1", nn::Linear(arch.width, arch.mlp_dim));
  fc2 = register_module("fc2", nn::Linear(arch.mlp_dim, arch.width));
}

torch::Tensor VitBlockImpl::forward(const torch::Tensor& x) {
  const auto b = x.size(0);
  const auto n = x.size(1);
  const auto w = x.size(2);
  const auto dh = w / heads;
  auto qkv_out = qkv(ln1(x)).view({b, n, 3, heads, dh}).permute({2, 0, 3, 1, 4});
  auto q = qkv_out[0], k = qkv_out[1], v = qkv_out[2];
  auto attn = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(dh)), -1);
  auto ctx = torch::matmul(attn, v).permute({0, 2, 1, 3}).reshape({b, n, w});
  auto h = x + proj(ctx);
  auto m = fc1(ln2(h));
  m = quick_gelu ? m * torch::sigmoid(1.702 * m) : torch::gelu(m);
  return h + fc2(m);
}

VitBackbone::VitBackbone(BackboneSpec spec, VitArch arch) : Backbone(std::move(spec)), arch_(std::move(arch)) {
  const auto grid = arch_.image_size / arch_.patch;
  patch_embed_ = register_module(
      "patch_embed",
      nn::Conv2d(nn::Conv2dOptions(3, arch_.width, arch_.patch).stride(arch_.patch).bias(arch_.patch_bias)));
  cls_token_ = register_parameter("cls_token", torch::zeros({arch_.width}));
  pos_embed_ = register_parameter("pos_embed", torch::zeros({1 + grid * grid, arch_.width}));
  auto ln = nn::LayerNormOptions({arch_.width}).eps(arch_.eps);
  if (arch_.ln_pre) ln_pre_ = register_module("ln_pre", nn::LayerNorm(ln));
  blocks_ = register_module("blocks", nn::ModuleList());
  for (std::int64_t i = 0; i < arch_.depth; ++i) blocks_->push_back(VitBlock(arch_));
  if (arch_.embed_dim > 0) {
    ln_post_ = register_module("ln_post", nn::LayerNorm(ln));
    head_ = register_module("head", nn::Linear(nn::LinearOptions(arch_.width, arch_.embed_dim).bias(false)));
  }
}

torch::Tensor VitBackbone::embed(const torch::Tensor& x) {
  if (x.size(2) != arch_.image_size || x.size(3) != arch_.image_size)
    throw ConfigError(fmt::format("ViT expects {}×{} input, got {}×{}", arch_.image_size, arch_.image_size, x.size(2),
                                  x.size(3)));
  const auto b = x.size(0);
  auto tokens = patch_embed_(x).flatten(2).transpose(1, 2);  // B×N×W
  auto cls = cls_token_.view({1, 1, arch_.width}).expand({b, 1, arch_.width});
  auto h = torch::cat({cls, tokens}, 1) + pos_embed_.unsqueeze(0);
  if (ln_pre_) h = ln_pre_(h);
  return h;
}

std::vector<torch::Tensor> VitBackbone::forward_taps(const torch::Tensor& x) {
  auto h = embed(x);
  std::vector<torch::Tensor> out;
  std::size_t next = 0;
  const auto& taps = spec_.layer_taps;
  for (std::int64_t i = 0; i < arch_.depth && next < taps.size(); ++i) {
    h = blocks_[static_cast<std::size_t>(i)]->as<VitBlock>()->forward(h);
    if (taps[next] != i + 1) continue;
    ++next;
    auto patches = h.narrow(1, 1, h.size(1) - 1);
    const auto n = patches.size(1);
    const auto g = static_cast<std::int64_t>(std::llround(std::sqrt(static_cast<double>(n))));
    if (g * g != n)
      throw std::logic_error(fmt::format("ViT tap {} has {} patch tokens, which is not a square grid", i + 1, n));
    out.push_back(patches.transpose(1, 2).reshape({h.size(0), arch_.width, g, g}));
  }
  return out;
}

torch::Tensor VitBackbone::pooled(const torch::Tensor& x) {
  if (!head_) throw ConfigError("this ViT has no image-text projection head (embed_dim = 0)");
  auto h = embed(x);
  for (std::int64_t i = 0; i < arch_.depth; ++i) h = blocks_[static_cast<std::size_t>(i)]->as<VitBlock>()->forward(h);
  return head_(ln_post_(h.select(1, 0)));
}

// Single-level CNN -----------------------------------------------------------

SingleLevelCnnBackbone::SingleLevelCnnBackbone(BackboneSpec spec, std::vector<CnnLayerArch> arch)
    : Backbone(std::move(spec)) {
  std::int64_t in = 3;
  for (std::size_t i = 0; i < arch.size(); ++i) {
    const auto& l = arch[i];
    layers_.push_back(register_module(
        fmt::format("conv{}", i + 1),
        nn::Conv2d(nn::Conv2dOptions(in, l.out_channels, l.kernel).stride(l.stride).padding(l.kernel / 2))));
    in = l.out_channels;
  }
}

std::vector<torch::Tensor> SingleLevelCnnBackbone::forward_taps(const torch::Tensor& x) {
  std::vector<torch::Tensor> out;
  auto h = x;
  std::size_t next = 0;
  const auto& taps = spec_.layer_taps;
  for (std::int64_t i = 0; i < depth() && next < taps.size(); ++i) {
    h = torch::relu(layers_[static_cast<std::size_t>(i)](h));
    if (taps[next] == i + 1) {
      out.push_back(h);
      ++next;
    }
  }
  return out;
}

// Loading --------------------------------------------------------------------

namespace {

void copy_from_archive(torch::nn::Module& module, const TensorArchive& archive, const std::string& source) {
  std::vector<std::string> missing;
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    if (!archive.contains(item.key())) {
      missing.push_back(item.key());
      continue;
    }
    const auto& t = archive.at(item.key());
    if (t.sizes() != item.value().sizes())
      throw FormatError(fmt::format("tensor '{}' in {} has shape {}, expected {}", item.key(), source, t.sizes(),
                                    item.value().sizes()));
    item.value().copy_(t);
  }
  if (!missing.empty())
    throw FormatError(fmt::format("{} is missing tensors: {}", source, fmt::join(missing, ", ")));
}

std::vector<CnnLayerArch> cnn_arch_from_json(const nlohmann::json& j) {
  std::vector<CnnLayerArch> arch;
  for (const auto& l : j.at("layers"))
    arch.push_back({l.at("out").get<std::int64_t>(), l.at("kernel").get<std::int64_t>(), l.at("stride").get<std::int64_t>()});
  return arch;
}

nlohmann::json cnn_arch_to_json(const std::vector<CnnLayerArch>& arch) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : arch) layers.push_back({{"out", l.out_channels}, {"kernel", l.kernel}, {"stride", l.stride}});
  return {{"layers", layers}};
}

}  // namespace

std::filesystem::path resolve_weights_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) return p;
  if (const char* cache = std::getenv("TIGER_WEIGHTS_CACHE"); cache != nullptr && *cache != '\0')
    return std::filesystem::path(cache) / p;
  return p;
}

std::shared_ptr<Backbone> load_backbone(const BackboneSpec& spec, torch::Dtype dtype) {
  spec.validate();
  std::shared_ptr<Backbone> backbone;
  if (spec.kind == BackboneKind::TinyStub) {
    backbone = std::make_shared<TinyStubBackbone>(spec);
  } else {
    const auto path = resolve_weights_path(*spec.weights_path);
    if (!std::filesystem::exists(path)) throw IoError("backbone weights not found: " + path.string());
    const auto archive = read_archive(path);
    const auto& arch = archive.metadata.contains("arch") ? archive.metadata.at("arch") : nlohmann::json();
    if (arch.is_null()) throw FormatError("backbone archive has no 'arch' metadata: " + path.string());
    if (spec.kind == BackboneKind::SingleLevelCnn) {
      backbone = std::make_shared<SingleLevelCnnBackbone>(spec, cnn_arch_from_json(arch));
    } else {
      auto vit = VitArch::from_json(arch);
      if (vit.image_size != spec.input_resolution)
        throw ConfigError(fmt::format("backbone.input_resolution {} does not match the model's {}",
                                      spec.input_resolution, vit.image_size));
      backbone = std::make_shared<VitBackbone>(spec, vit);
    }
    copy_from_archive(*backbone, archive, path.string());
  }
  if (spec.layer_taps.back() > backbone->depth())
    throw ConfigError(fmt::format("tap {} exceeds the depth {} of {}", spec.layer_taps.back(), backbone->depth(),
                                  to_string(spec.kind)));
  backbone->to(dtype);
  backbone->freeze();
  return backbone;
}

torch::Tensor preprocess(const torch::Tensor& images, const BackboneSpec& spec) {
  auto x = (images + 1.0) * 0.5;
  if (x.size(2) != spec.input_resolution || x.size(3) != spec.input_resolution) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<std::int64_t>{spec.input_resolution, spec.input_resolution})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  const auto opts = torch::TensorOptions().dtype(x.scalar_type());
  auto mean = torch::tensor(std::vector<double>(spec.mean.begin(), spec.mean.end()), opts).view({1, 3, 1, 1});
  auto std = torch::tensor(std::vector<double>(spec.std.begin(), spec.std.end()), opts).view({1, 3, 1, 1});
  return (x - mean) / std;
}

MultiLevelFeatures extract(Backbone& backbone, const torch::Tensor& preprocessed) {
  return {backbone.forward_taps(preprocessed), backbone.spec().layer_taps};
}

void write_synthetic_vit_weights(const std::filesystem::path& path, const VitArch& arch, std::uint64_t seed) {
  BackboneSpec spec = BackboneSpec::defaults(BackboneKind::ClipVit);
  spec.input_resolution = arch.image_size;
  VitBackbone vit(spec, arch);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  TensorArchive archive;
  torch::NoGradGuard no_grad;
  for (auto& item : vit.named_parameters()) {
    auto& p = item.value();
    const auto& name = item.key();
    if (name.ends_with("ln1.weight") || name.ends_with("ln2.weight") || name.ends_with("ln_pre.weight") ||
        name.ends_with("ln_post.weight")) {
      p.fill_(1.0);
    } else if (name.ends_with(".bias")) {
      p.zero_();
    } else {
      p.normal_(0.0, 0.02, gen);
    }
    archive.tensors[name] = p.clone();
  }
  archive.metadata = {{"arch", arch.to_json()}, {"synthetic_seed", seed}};
  write_archive(path, archive);
}

void write_synthetic_cnn_weights(const std::filesystem::path& path, const std::vector<CnnLayerArch>& arch,
                                 std::uint64_t seed) {
  BackboneSpec spec = BackboneSpec::defaults(BackboneKind::SingleLevelCnn);
  SingleLevelCnnBackbone cnn(spec, arch);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  TensorArchive archive;
  torch::NoGradGuard no_grad;
  for (auto& item : cnn.named_parameters()) {
    auto& p = item.value();
    if (p.dim() > 1) {
      p.normal_(0.0, std::sqrt(2.0 / static_cast<double>(p[0].numel())), gen);
    } else {
      p.zero_();
    }
    archive.tensors[item.key()] = p.clone();
  }
  archive.metadata = {{"arch", cnn_arch_to_json(arch)}, {"synthetic_seed", seed}};
  write_archive(path, archive);
}

}  // namespace tiger
