#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace tiger {

/// Named-tensor archive used for checkpoints, pretrained weights and caches.
///
/// Layout (little-endian host order):
///   8 bytes   magic "TIGERTA\0"
///   uint32    archive format version
///   uint64    manifest length in bytes
///   manifest  JSON: {"metadata": {...}, "tensors": [{name, dtype, shape, offset, nbytes}]}
///   blob      raw contiguous tensor bytes, offsets relative to blob start
struct TensorArchive {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;

  const torch::Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) != 0; }
};

inline constexpr std::uint32_t kArchiveFormatVersion = 1;

/// Writes atomically: the archive goes to a sibling temp file that is renamed into place.
void write_archive(const std::filesystem::path& path, const TensorArchive& archive);

TensorArchive read_archive(const std::filesystem::path& path);

/// Reads only the JSON manifest (cheap; no tensor payload).
nlohmann::json read_archive_manifest(const std::filesystem::path& path);

/// FNV-1a 64 over names, dtypes, shapes and raw bytes, as 16 hex digits.
std::string tensor_digest(const std::map<std::string, torch::Tensor>& tensors);
std::string tensor_digest(const std::vector<std::pair<std::string, torch::Tensor>>& tensors);

/// Named parameters and buffers of a module, in registration order.
std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module);

}  // namespace tiger
