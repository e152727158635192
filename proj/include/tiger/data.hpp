#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace tiger {

/// One training record: a 3×H×W image in [-1, 1] and at least one caption.
struct CaptionedImage {
  torch::Tensor image;
  std::vector<std::string> captions;
};

using Dataset = std::vector<CaptionedImage>;

struct SentenceEmbedding {
  torch::Tensor vector;  // 1-D, float64
  std::string source_caption;
};

/// A training minibatch. Embeddings are stacked row-wise (B×d_text).
struct Batch {
  torch::Tensor images;
  torch::Tensor matched;
  torch::Tensor mismatched;
  std::vector<std::string> matched_captions;
  std::vector<std::string> mismatched_captions;
  std::vector<std::size_t> indices;

  std::int64_t size() const { return images.size(0); }
};

enum class Split { Train, Test };
Split parse_split(std::string_view s);
std::string_view to_string(Split s);

struct RejectedRecord {
  std::size_t line = 0;
  std::string reason;
};

struct LoadResult {
  Dataset records;
  std::vector<RejectedRecord> rejected;
};

/// Reads `<root>/<split>.jsonl`; each line is {"image": relative path, "captions": [..]}.
/// Images are center-cropped to a square, resized to `resolution` and rescaled to [-1, 1].
/// Records without captions or with undecodable images are skipped with a warning.
/// When TIGER_DATA_CACHE is set the decoded split is cached there as a tensor archive.
LoadResult load_dataset(const std::filesystem::path& root, Split split, std::int64_t resolution);

/// Center crop to the largest square, then resize (bilinear) to resolution×resolution.
torch::Tensor crop_and_resize(const torch::Tensor& chw, std::int64_t resolution);

// Toy shapes dataset ---------------------------------------------------------

inline constexpr std::array<std::string_view, 4> kToyColors = {"red", "green", "blue", "yellow"};
inline constexpr std::array<std::string_view, 3> kToyShapes = {"circle", "square", "triangle"};

/// RGB in [-1, 1] for each toy color, same order as kToyColors.
std::array<double, 3> toy_color_rgb(std::size_t color);
inline constexpr double kToyBackground = 128.0 / 127.5 - 1.0;

std::string toy_caption(std::size_t color, std::size_t shape);
/// (color, shape) indices for a caption of the form "a {color} {shape}".
std::optional<std::pair<std::size_t, std::size_t>> parse_toy_caption(std::string_view caption);
std::vector<std::string> all_toy_captions();

/// Square side range as a fraction of the resolution. Every shape is drawn with the area of a
/// square of side `side` sampled from this range, so size says nothing about the shape.
inline constexpr std::array<double, 2> kToySideRange = {0.4, 0.55};
/// Bounding-box side in pixels of a toy shape whose area equals side².
std::int64_t toy_shape_extent(std::size_t shape, double side);

/// n images of one colored shape on gray, captioned "a {color} {shape}". Pure in (n, resolution, seed).
Dataset synthesize_toy_dataset(std::size_t n, std::int64_t resolution, std::uint64_t seed);

// Text encoders --------------------------------------------------------------

struct EncodedText {
  torch::Tensor vector;
  bool truncated = false;
};

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual std::int64_t dim() const = 0;
  virtual std::string id() const = 0;
  virtual EncodedText encode(const std::string& caption) const = 0;
};

/// Lower-cased whitespace tokens with surrounding punctuation stripped.
std::vector<std::string> tokenize(std::string_view caption);

/// Deterministic desk-scale encoder: each token hashes to a fixed Gaussian direction,
/// the caption embedding is the normalized sum over tokens (unit norm).
class HashTextEncoder final : public TextEncoder {
 public:
  explicit HashTextEncoder(std::int64_t dim = 512, std::uint64_t seed = 0, std::size_t token_limit = 77);
  std::int64_t dim() const override { return dim_; }
  std::string id() const override;
  EncodedText encode(const std::string& caption) const override;

 private:
  std::int64_t dim_;
  std::uint64_t seed_;
  std::size_t token_limit_;
};

/// Multiplies another encoder's embeddings by a constant.
class ScaledTextEncoder final : public TextEncoder {
 public:
  ScaledTextEncoder(std::shared_ptr<const TextEncoder> inner, double scale);
  std::int64_t dim() const override { return inner_->dim(); }
  std::string id() const override;
  EncodedText encode(const std::string& caption) const override;

 private:
  std::shared_ptr<const TextEncoder> inner_;
  double scale_;
};

/// Lookup table of embeddings computed offline by a real text encoder.
/// Archive tensors: "embeddings" (N×d); metadata: "captions" (N strings), optional "encoder_id".
class PrecomputedTextEncoder final : public TextEncoder {
 public:
  explicit PrecomputedTextEncoder(const std::filesystem::path& archive_path);
  std::int64_t dim() const override { return table_.size(1); }
  std::string id() const override { return id_; }
  EncodedText encode(const std::string& caption) const override;

 private:
  torch::Tensor table_;
  std::unordered_map<std::string, std::int64_t> rows_;
  std::string id_;
};

/// Throws std::invalid_argument for an empty caption; logs a warning on truncation.
SentenceEmbedding encode_text(const TextEncoder& encoder, const std::string& caption);

/// Draws a batch uniformly (with replacement). mismatched[i] comes from another record and
/// never equals any caption of record i. Throws ConfigError when no such caption exists.
Batch sample_batch(const Dataset& dataset, std::int64_t batch_size, std::mt19937_64& rng,
                   const TextEncoder& encoder);

}  // namespace tiger
