#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tiger/backbones.hpp"
#include "tiger/discriminator.hpp"
#include "tiger/generator.hpp"
#include "tiger/losses.hpp"

namespace tiger {

struct TrainConfig {
  double lr_g = 1e-4;
  double lr_d = 4e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.9;
  std::int64_t batch_size = 16;
  std::int64_t max_steps = 2000;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::int64_t eval_every = 0;        // 0: evaluate at step 0 and at the end only
  std::string dtype = "float32";      // "float32" or "float64"

  void validate() const;
  torch::Dtype torch_dtype() const;
};

struct TextEncoderSpec {
  std::string kind = "hash";  // "hash" or "precomputed"
  std::int64_t dim = 512;
  std::uint64_t seed = 0;
  std::string path;  // precomputed table archive
  double scale = 1.0;  // multiplies every embedding
};

struct DataSpec {
  std::string kind = "toy";  // "toy" or "directory"
  std::string root;          // directory datasets
  std::int64_t resolution = 64;
  std::int64_t n_train = 500;  // toy only
  std::int64_t n_test = 500;   // toy only
  std::uint64_t seed = 7;      // toy only
  TextEncoderSpec text_encoder;
};

/// Frozen image tower for the semantic contrastive loss.
struct ScorerSpec {
  std::string kind = "probe";  // "probe" (tiny stub + ridge probe) or "vit"
  std::uint64_t seed = 0;
  double ridge = 1e-2;
  std::string features = "stub";  // probe features: "stub" or "shape"
  std::optional<BackboneSpec> backbone;  // kind "vit"
};

struct EvalSpec {
  std::int64_t fid_samples = 500;
  std::int64_t rprecision_samples = 200;
  std::int64_t r = 100;
  std::uint64_t seed = 1234;
  std::string extractor = "tiny_stub";  // "tiny_stub" or "backbone"
  std::uint64_t extractor_seed = 0;
  std::optional<BackboneSpec> extractor_backbone;
  std::string rprecision_scorer = "template";  // "template" or "embedding"
};

struct RunConfig {
  GeneratorConfig generator;
  std::vector<SubDiscriminatorConfig> sub_discriminators;
  LossWeights loss;
  TrainConfig train;
  DataSpec data;
  EvalSpec eval;
  ScorerSpec scorer;

  /// Throws ConfigError whose message starts with the offending field path.
  void validate() const;
};

/// Strict parse: unknown keys and wrongly typed values raise ConfigError naming the field.
/// Missing keys take their defaults. The result is validated.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
/// Canonical form: every field, fixed key order.
nlohmann::json to_json(const RunConfig& cfg);
nlohmann::json to_json(const BackboneSpec& spec);
BackboneSpec backbone_spec_from_json(const nlohmann::json& j, const std::string& path);

/// Full-scale configuration: CLIP ViT-B/16 (taps 2,5,9, adapter A) + DINO ViT-B/16 (taps 1,5,9, adapter B).
RunConfig full_config();
/// Desk-scale configuration: toy shapes at 64×64, two tiny stub sub-discriminators (A and B).
RunConfig toy_config();
/// Toy data and generator with two small synthetic 12-layer ViTs standing in for CLIP and DINO
/// (archives written by `tiger init-weights`, resolved against TIGER_WEIGHTS_CACHE).
RunConfig desk_ablation_config();

/// Applies {"/json/pointer": value, ...} to a config document.
nlohmann::json apply_overrides(nlohmann::json doc, const nlohmann::json& set);

struct AblationCell {
  std::string name;
  nlohmann::json set = nlohmann::json::object();
};

struct AblationGrid {
  nlohmann::json base;
  std::int64_t steps = 500;
  bool evaluate = true;  // toy-FID / R-precision at the start and end of every cell
  std::vector<AblationCell> cells;

  RunConfig cell_config(const AblationCell& cell) const;
};

AblationGrid parse_ablation_grid(const nlohmann::json& j);
AblationGrid load_ablation_grid(const std::filesystem::path& path);
nlohmann::json to_json(const AblationGrid& grid);
/// Standard grid: adapter pairs, CLIP tap sets, DINO tap sets, GFM removals (17 cells).
AblationGrid default_ablation_grid(const nlohmann::json& base, std::int64_t steps = 500);

}  // namespace tiger
