#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

namespace tiger::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct TrainArgs {
  std::filesystem::path config;
  std::filesystem::path out_dir;
  std::optional<std::filesystem::path> resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::int64_t> max_steps;
  bool evaluate = true;
};
int cmd_train(const TrainArgs& args);

struct GenerateArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path captions;
  std::filesystem::path out_dir;
  std::uint64_t seed = 0;
};
/// One PNG per caption line, named {index:05}.png.
int cmd_generate(const GenerateArgs& args);

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::string split = "test";
  std::string metric = "fid";  // "fid" or "rprecision"
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_root;
  /// FID between the real split and itself (checks the metric pipeline).
  bool debug_real = false;
};
/// Prints {"metric", "value", "n_samples", "seed"} as one JSON line on `out`.
int cmd_eval(const EvalArgs& args, std::ostream& out);

struct AblateArgs {
  std::optional<std::filesystem::path> grid;
  std::optional<std::filesystem::path> base_config;
  std::filesystem::path out_dir;
  std::optional<std::int64_t> steps;
};
/// Runs every cell under out_dir/<cell>/ and writes out_dir/summary.json. Failed cells are
/// recorded and the rest continue; the exit status is nonzero if any cell failed.
int cmd_ablate(const AblateArgs& args);

struct InitWeightsArgs {
  std::string kind = "vit";  // "vit" or "cnn"
  std::filesystem::path out;
  std::int64_t width = 64;
  std::int64_t depth = 12;
  std::int64_t heads = 4;
  std::int64_t patch = 8;
  std::int64_t image_size = 64;
  std::int64_t mlp_dim = 128;
  std::int64_t embed_dim = 0;
  std::string activation = "gelu";
  std::uint64_t seed = 0;
};
/// Writes a randomly initialized backbone archive (for tests and desk-scale ablations).
int cmd_init_weights(const InitWeightsArgs& args);

/// Presets: toy, full, full-grid, toy-grid.
int cmd_print_config(const std::string& preset, std::ostream& out);

int run(int argc, char** argv);

}  // namespace tiger::cli
