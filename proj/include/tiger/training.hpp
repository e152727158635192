#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "tiger/config.hpp"
#include "tiger/data.hpp"
#include "tiger/discriminator.hpp"
#include "tiger/evaluation.hpp"
#include "tiger/generator.hpp"
#include "tiger/scorer.hpp"
#include "tiger/tensor_archive.hpp"

namespace tiger {

inline constexpr std::int64_t kCheckpointVersion = 1;

/// Loss components of one completed step. Keys starting with "wall_" carry timing only.
struct MetricsRecord {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  std::vector<double> d_hinge;
  std::vector<double> d_magp;
  std::vector<double> fake_score;
  double clip_term = 0.0;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct EvalRecord {
  std::int64_t step = 0;
  std::optional<double> fid;
  std::optional<double> r_precision;
  std::string extractor_id;
  std::int64_t n_real = 0;
  std::int64_t n_fake = 0;

  nlohmann::json to_json() const;
};

/// Raised when a loss becomes non-finite; carries the offending step's record.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, nlohmann::json record)
      : std::runtime_error(what), record(std::move(record)) {}
  nlohmann::json record;
};

struct DataBundle {
  Dataset train;
  Dataset test;
  std::shared_ptr<TextEncoder> encoder;
};

/// Toy data is synthesized (the test split uses a derived seed); directory data is loaded.
DataBundle prepare_data(const DataSpec& spec);
std::shared_ptr<TextEncoder> make_text_encoder(const TextEncoderSpec& spec);
std::unique_ptr<FeatureExtractor> make_extractor(const EvalSpec& spec, std::int64_t resolution);

/// Everything a run mutates, plus the frozen pieces it needs.
struct TrainState {
  RunConfig config;
  torch::Dtype dtype = torch::kFloat32;
  Generator generator{nullptr};
  std::vector<std::shared_ptr<Backbone>> backbones;
  std::vector<SubDiscriminator> subs;
  std::unique_ptr<torch::optim::Adam> opt_g;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::shared_ptr<ImageTextScorer> scorer;
  std::shared_ptr<TextEncoder> encoder;
  torch::Generator noise_gen;
  std::mt19937_64 batch_rng;
  std::int64_t step = 0;
  std::vector<std::string> backbone_digests;

  std::vector<torch::Tensor> discriminator_parameters() const;
  /// Throws std::logic_error if any backbone changed since it was loaded.
  void check_backbones() const;
};

/// Builds models and optimizers from the config; parameters are initialized from train.seed.
/// The probe scorer (if used) is fitted on `train_data`.
std::unique_ptr<TrainState> build_state(const RunConfig& cfg, const Dataset& train_data,
                                        std::shared_ptr<TextEncoder> encoder);

/// One discriminator update followed by one generator update.
MetricsRecord train_step(TrainState& state, const Batch& batch);

/// Draws a batch from the state's RNG and runs train_step.
MetricsRecord train_step(TrainState& state, const Dataset& data);

/// Generates one image per caption with noise drawn from `gen`, in chunks, without gradients.
torch::Tensor generate_images(Generator& generator, const TextEncoder& encoder, torch::Dtype dtype,
                              const std::vector<std::string>& captions, torch::Generator& gen);

struct EvalOptions {
  bool fid = true;
  bool rprecision = true;
};

/// FID against the test images and R-precision over test captions, both seeded by spec.seed.
EvalRecord evaluate(const EvalSpec& spec, Generator& generator, const TextEncoder& encoder, ImageTextScorer* scorer,
                    torch::Dtype dtype, const Dataset& test, FeatureExtractor& extractor, std::int64_t step,
                    EvalOptions options = {});
EvalRecord evaluate(TrainState& state, const Dataset& test, FeatureExtractor& extractor, EvalOptions options = {});

struct CheckpointManifest {
  std::int64_t step = 0;
  nlohmann::json config;
  TensorArchive archive;
};

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
CheckpointManifest load_checkpoint(const std::filesystem::path& path);
/// Restores weights, optimizer moments, RNG streams and step. Missing tensors are listed by name.
void restore_state(TrainState& state, const CheckpointManifest& manifest);
/// Generator rebuilt from a checkpoint's config and "g." tensors.
Generator load_generator(const CheckpointManifest& manifest, torch::Dtype dtype);

/// Digest over generator and trainable discriminator tensors.
std::string model_digest(const TrainState& state);

struct TrainOptions {
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  bool evaluate = true;
};

struct TrainResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_path;
  std::vector<MetricsRecord> steps;
  std::vector<EvalRecord> evals;
};

/// Runs until train.max_steps, writing metrics.jsonl and checkpoints under out_dir.
TrainResult train(const RunConfig& cfg, const DataBundle& data, const TrainOptions& options);

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::int64_t step);

}  // namespace tiger
