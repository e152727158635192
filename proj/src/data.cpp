#include "tiger/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "tiger/errors.hpp"
#include "tiger/image_io.hpp"
#include "tiger/tensor_archive.hpp"

namespace F = torch::nn::functional;

namespace tiger {

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "test") return Split::Test;
  throw ConfigError(fmt::format("unknown split '{}' (expected train or test)", s));
}

std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

torch::Tensor crop_and_resize(const torch::Tensor& chw, std::int64_t resolution) {
  const auto h = chw.size(1);
  const auto w = chw.size(2);
  const auto side = std::min(h, w);
  auto square = chw.narrow(1, (h - side) / 2, side).narrow(2, (w - side) / 2, side);
  if (side == resolution) return square.contiguous();
  auto opts = F::InterpolateFuncOptions()
                  .size(std::vector<std::int64_t>{resolution, resolution})
                  .mode(torch::kBilinear)
                  .align_corners(false)
                  .antialias(side > resolution);
  return F::interpolate(square.unsqueeze(0), opts).squeeze(0).clamp(-1.0, 1.0).contiguous();
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double unit_open(std::uint64_t& state) {
  // (0, 1): 53 random bits, offset by half an ulp
  return (static_cast<double>(splitmix64(state) >> 11) + 0.5) * 0x1.0p-53;
}

std::optional<std::filesystem::path> cache_path_for(const std::filesystem::path& index, Split split,
                                                    std::int64_t resolution) {
  const char* dir = std::getenv("TIGER_DATA_CACHE");
  if (dir == nullptr || *dir == '\0') return std::nullopt;
  std::error_code ec;
  const auto abs = std::filesystem::weakly_canonical(index, ec);
  const auto mtime = std::filesystem::last_write_time(index, ec).time_since_epoch().count();
  const auto size = std::filesystem::file_size(index, ec);
  const auto key = fnv1a(fmt::format("{}|{}|{}|{}|{}", abs.string(), to_string(split), resolution, mtime, size));
  return std::filesystem::path(dir) / fmt::format("dataset-{:016x}.tta", key);
}

}  // namespace

LoadResult load_dataset(const std::filesystem::path& root, Split split, std::int64_t resolution) {
  if (!std::filesystem::is_directory(root)) throw IoError("dataset root does not exist: " + root.string());
  const auto index = root / (std::string(to_string(split)) + ".jsonl");
  std::ifstream in(index);
  if (!in) throw IoError("cannot open dataset index: " + index.string());

  const auto cache = cache_path_for(index, split, resolution);
  if (cache && std::filesystem::exists(*cache)) {
    auto archive = read_archive(*cache);
    LoadResult result;
    const auto images = archive.at("images");
    const auto captions = archive.metadata.at("captions").get<std::vector<std::vector<std::string>>>();
    for (std::size_t i = 0; i < captions.size(); ++i)
      result.records.push_back({images[static_cast<std::int64_t>(i)].clone(), captions[i]});
    for (const auto& r : archive.metadata.at("rejected"))
      result.rejected.push_back({r.at("line").get<std::size_t>(), r.at("reason").get<std::string>()});
    return result;
  }

  LoadResult result;
  std::string line;
  std::size_t line_no = 0;
  auto reject = [&](std::string reason) {
    spdlog::warn("{}:{}: record rejected: {}", index.string(), line_no, reason);
    result.rejected.push_back({line_no, std::move(reason)});
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      reject(std::string("malformed JSON: ") + e.what());
      continue;
    }
    if (!rec.contains("image") || !rec["image"].is_string()) {
      reject("missing image field");
      continue;
    }
    std::vector<std::string> captions;
    if (rec.contains("captions") && rec["captions"].is_array())
      for (const auto& c : rec["captions"])
        if (c.is_string() && !c.get<std::string>().empty()) captions.push_back(c.get<std::string>());
    if (captions.empty()) {
      reject("no captions");
      continue;
    }
    torch::Tensor rgb;
    try {
      rgb = read_png(root / rec["image"].get<std::string>());
    } catch (const IoError& e) {
      reject(e.what());
      continue;
    }
    result.records.push_back({crop_and_resize(from_rgb8(rgb), resolution), std::move(captions)});
  }

  if (cache && !result.records.empty()) {
    TensorArchive archive;
    std::vector<torch::Tensor> images;
    nlohmann::json caps = nlohmann::json::array();
    for (const auto& r : result.records) {
      images.push_back(r.image);
      caps.push_back(r.captions);
    }
    nlohmann::json rejected = nlohmann::json::array();
    for (const auto& r : result.rejected) rejected.push_back({{"line", r.line}, {"reason", r.reason}});
    archive.tensors["images"] = torch::stack(images);
    archive.metadata = {{"captions", caps}, {"rejected", rejected}};
    write_archive(*cache, archive);
  }
  return result;
}

// Toy dataset ----------------------------------------------------------------

std::array<double, 3> toy_color_rgb(std::size_t color) {
  switch (color) {
    case 0: return {1.0, -1.0, -1.0};
    case 1: return {-1.0, 1.0, -1.0};
    case 2: return {-1.0, -1.0, 1.0};
    case 3: return {1.0, 1.0, -1.0};
    default: throw std::out_of_range("toy color index");
  }
}

std::string toy_caption(std::size_t color, std::size_t shape) {
  return fmt::format("a {} {}", kToyColors.at(color), kToyShapes.at(shape));
}

std::optional<std::pair<std::size_t, std::size_t>> parse_toy_caption(std::string_view caption) {
  const auto tokens = tokenize(caption);
  if (tokens.size() != 3 || tokens[0] != "a") return std::nullopt;
  auto c = std::find(kToyColors.begin(), kToyColors.end(), tokens[1]);
  auto s = std::find(kToyShapes.begin(), kToyShapes.end(), tokens[2]);
  if (c == kToyColors.end() || s == kToyShapes.end()) return std::nullopt;
  return std::pair{static_cast<std::size_t>(c - kToyColors.begin()), static_cast<std::size_t>(s - kToyShapes.begin())};
}

std::vector<std::string> all_toy_captions() {
  std::vector<std::string> out;
  for (std::size_t c = 0; c < kToyColors.size(); ++c)
    for (std::size_t s = 0; s < kToyShapes.size(); ++s) out.push_back(toy_caption(c, s));
  return out;
}

std::int64_t toy_shape_extent(std::size_t shape, double side) {
  switch (shape) {
    case 0: return std::lround(side * 2.0 / std::sqrt(std::numbers::pi));
    case 1: return std::lround(side);
    case 2: return std::lround(side * std::numbers::sqrt2);
    default: throw std::out_of_range("toy shape index");
  }
}

Dataset synthesize_toy_dataset(std::size_t n, std::int64_t resolution, std::uint64_t seed) {
  if (n < 1) throw ConfigError("toy dataset size must be at least 1");
  if (resolution != 32 && resolution != 64)
    throw ConfigError(fmt::format("toy dataset resolution must be 32 or 64, got {}", resolution));

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_color(0, kToyColors.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_shape(0, kToyShapes.size() - 1);
  std::uniform_real_distribution<double> pick_side(kToySideRange[0] * resolution, kToySideRange[1] * resolution);

  Dataset out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto color = pick_color(rng);
    const auto shape = pick_shape(rng);
    const auto extent = toy_shape_extent(shape, pick_side(rng));
    std::uniform_int_distribution<std::int64_t> pick_pos(0, resolution - extent);
    const auto x0 = pick_pos(rng);
    const auto y0 = pick_pos(rng);
    const auto rgb = toy_color_rgb(color);

    auto img = torch::full({3, resolution, resolution}, kToyBackground, torch::kFloat32);
    auto acc = img.accessor<float, 3>();
    const double e = static_cast<double>(extent);
    for (std::int64_t y = y0; y < y0 + extent; ++y) {
      for (std::int64_t x = x0; x < x0 + extent; ++x) {
        const double u = (x - x0) + 0.5;  // pixel centre, local frame
        const double v = (y - y0) + 0.5;
        bool inside = false;
        switch (shape) {
          case 0: inside = (u - e / 2) * (u - e / 2) + (v - e / 2) * (v - e / 2) <= (e / 2) * (e / 2); break;
          case 1: inside = true; break;
          case 2: inside = std::abs(u - e / 2) <= v / 2; break;
        }
        if (!inside) continue;
        for (int ch = 0; ch < 3; ++ch) acc[ch][y][x] = static_cast<float>(rgb[ch]);
      }
    }
    out.push_back({img, {toy_caption(color, shape)}});
  }
  return out;
}

// Text encoders --------------------------------------------------------------

std::vector<std::string> tokenize(std::string_view caption) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    auto b = cur.find_first_not_of(".,!?;:\"'()");
    auto e = cur.find_last_not_of(".,!?;:\"'()");
    if (b != std::string::npos) tokens.push_back(cur.substr(b, e - b + 1));
    cur.clear();
  };
  for (unsigned char c : caption) {
    if (std::isspace(c)) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return tokens;
}

HashTextEncoder::HashTextEncoder(std::int64_t dim, std::uint64_t seed, std::size_t token_limit)
    : dim_(dim), seed_(seed), token_limit_(token_limit) {
  if (dim < 1) throw ConfigError("text encoder dimension must be positive");
}

std::string HashTextEncoder::id() const { return fmt::format("hash-d{}-s{}", dim_, seed_); }

EncodedText HashTextEncoder::encode(const std::string& caption) const {
  auto tokens = tokenize(caption);
  EncodedText out;
  if (tokens.size() > token_limit_) {
    tokens.resize(token_limit_);
    out.truncated = true;
  }
  std::vector<double> acc(static_cast<std::size_t>(dim_), 0.0);
  for (const auto& tok : tokens) {
    std::uint64_t state = fnv1a(tok) ^ (seed_ * 0x9e3779b97f4a7c15ULL);
    for (std::int64_t i = 0; i < dim_; i += 2) {
      // Box-Muller pair
      const double r = std::sqrt(-2.0 * std::log(unit_open(state)));
      const double theta = 2.0 * std::numbers::pi * unit_open(state);
      acc[static_cast<std::size_t>(i)] += r * std::cos(theta);
      if (i + 1 < dim_) acc[static_cast<std::size_t>(i + 1)] += r * std::sin(theta);
    }
  }
  out.vector = torch::tensor(acc, torch::kFloat64);
  const double norm = out.vector.norm().item<double>();
  if (norm > 0.0) out.vector /= norm;
  return out;
}

ScaledTextEncoder::ScaledTextEncoder(std::shared_ptr<const TextEncoder> inner, double scale)
    : inner_(std::move(inner)), scale_(scale) {
  if (!inner_) throw std::invalid_argument("ScaledTextEncoder needs an inner encoder");
  if (!(scale > 0.0)) throw ConfigError("text encoder scale must be > 0");
}

std::string ScaledTextEncoder::id() const { return fmt::format("{}-x{}", inner_->id(), scale_); }

EncodedText ScaledTextEncoder::encode(const std::string& caption) const {
  auto out = inner_->encode(caption);
  out.vector = out.vector * scale_;
  return out;
}

PrecomputedTextEncoder::PrecomputedTextEncoder(const std::filesystem::path& archive_path) {
  auto archive = read_archive(archive_path);
  table_ = archive.at("embeddings").to(torch::kFloat64);
  if (table_.dim() != 2) throw FormatError("precomputed embeddings must be N×d");
  const auto captions = archive.metadata.at("captions").get<std::vector<std::string>>();
  if (static_cast<std::int64_t>(captions.size()) != table_.size(0))
    throw FormatError("precomputed caption list length does not match embedding rows");
  for (std::size_t i = 0; i < captions.size(); ++i) rows_.emplace(captions[i], static_cast<std::int64_t>(i));
  id_ = archive.metadata.value("encoder_id", std::string("precomputed"));
}

EncodedText PrecomputedTextEncoder::encode(const std::string& caption) const {
  auto it = rows_.find(caption);
  if (it == rows_.end()) throw std::invalid_argument("caption not present in precomputed table: '" + caption + "'");
  return {table_[it->second].clone(), false};
}

SentenceEmbedding encode_text(const TextEncoder& encoder, const std::string& caption) {
  if (caption.empty()) throw std::invalid_argument("cannot encode an empty caption");
  auto enc = encoder.encode(caption);
  if (enc.truncated) spdlog::warn("caption exceeds the token limit of {} and was truncated", encoder.id());
  return {std::move(enc.vector), caption};
}

Batch sample_batch(const Dataset& dataset, std::int64_t batch_size, std::mt19937_64& rng,
                   const TextEncoder& encoder) {
  if (dataset.size() < 2) throw ConfigError("sample_batch needs at least 2 records to draw mismatched captions");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");

  const std::size_t n = dataset.size();
  std::uniform_int_distribution<std::size_t> pick_record(0, n - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, n - 2);
  auto pick_caption = [&](const CaptionedImage& r) -> const std::string& {
    std::uniform_int_distribution<std::size_t> d(0, r.captions.size() - 1);
    return r.captions[d(rng)];
  };
  auto owns = [](const CaptionedImage& r, const std::string& c) {
    return std::find(r.captions.begin(), r.captions.end(), c) != r.captions.end();
  };

  Batch batch;
  std::vector<torch::Tensor> images, matched, mismatched;
  for (std::int64_t b = 0; b < batch_size; ++b) {
    const auto i = pick_record(rng);
    const auto& rec = dataset[i];
    const auto& caption = pick_caption(rec);

    std::optional<std::string> wrong;
    // Uniform over the other records, redrawn while the caption also describes record i.
    for (int attempt = 0; attempt < 64 && !wrong; ++attempt) {
      auto j = pick_other(rng);
      if (j >= i) ++j;
      const auto& c = pick_caption(dataset[j]);
      if (!owns(rec, c)) wrong = c;
    }
    if (!wrong) {
      std::vector<std::string> pool;
      for (std::size_t j = 0; j < n; ++j)
        if (j != i)
          for (const auto& c : dataset[j].captions)
            if (!owns(rec, c)) pool.push_back(c);
      if (pool.empty())
        throw ConfigError(fmt::format("record {} has no mismatched caption among the other records", i));
      std::uniform_int_distribution<std::size_t> d(0, pool.size() - 1);
      wrong = pool[d(rng)];
    }

    images.push_back(rec.image);
    matched.push_back(encode_text(encoder, caption).vector);
    mismatched.push_back(encode_text(encoder, *wrong).vector);
    batch.matched_captions.push_back(caption);
    batch.mismatched_captions.push_back(*wrong);
    batch.indices.push_back(i);
  }
  batch.images = torch::stack(images);
  batch.matched = torch::stack(matched);
  batch.mismatched = torch::stack(mismatched);
  return batch;
}

}  // namespace tiger
