#include "tiger/tensor_archive.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "tiger/errors.hpp"

namespace tiger {
namespace {

constexpr std::array<char, 8> kMagic = {'T', 'I', 'G', 'E', 'R', 'T', 'A', '\0'};

std::string dtype_name(torch::ScalarType t) {
  switch (t) {
    case torch::kFloat32: return "float32";
    case torch::kFloat64: return "float64";
    case torch::kInt64: return "int64";
    case torch::kUInt8: return "uint8";
    default: throw FormatError(fmt::format("unsupported tensor dtype {}", c10::toString(t)));
  }
}

torch::ScalarType dtype_from_name(const std::string& name) {
  if (name == "float32") return torch::kFloat32;
  if (name == "float64") return torch::kFloat64;
  if (name == "int64") return torch::kInt64;
  if (name == "uint8") return torch::kUInt8;
  throw FormatError("unknown dtype in archive manifest: " + name);
}

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void add(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  }
  void add(const std::string& s) { add(s.data(), s.size() + 1); }
};

void digest_one(Fnv1a& f, const std::string& name, const torch::Tensor& t) {
  const auto c = t.detach().contiguous().cpu();
  f.add(name);
  f.add(dtype_name(c.scalar_type()));
  for (auto d : c.sizes()) f.add(&d, sizeof(d));
  f.add(c.data_ptr(), c.nbytes());
}

std::string hex(std::uint64_t h) { return fmt::format("{:016x}", h); }

}  // namespace

const torch::Tensor& TensorArchive::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw FormatError("archive is missing tensor '" + name + "'");
  return it->second;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  nlohmann::json manifest;
  manifest["metadata"] = archive.metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> payload;
  std::uint64_t offset = 0;
  for (const auto& [name, tensor] : archive.tensors) {
    auto c = tensor.detach().contiguous().cpu();
    manifest["tensors"].push_back({{"name", name},
                                   {"dtype", dtype_name(c.scalar_type())},
                                   {"shape", c.sizes().vec()},
                                   {"offset", offset},
                                   {"nbytes", c.nbytes()}});
    offset += c.nbytes();
    payload.push_back(std::move(c));
  }
  const std::string header = manifest.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    const std::uint32_t version = kArchiveFormatVersion;
    const std::uint64_t header_len = header.size();
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& t : payload)
      out.write(static_cast<const char*>(t.data_ptr()), static_cast<std::streamsize>(t.nbytes()));
    out.flush();
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

namespace {

nlohmann::json read_header(std::ifstream& in, const std::filesystem::path& path) {
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("not a tensor archive: " + path.string());
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  if (!in) throw FormatError("truncated archive header: " + path.string());
  if (version != kArchiveFormatVersion)
    throw FormatError(fmt::format("archive format version {} is incompatible (expected {}): {}", version,
                                  kArchiveFormatVersion, path.string()));
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError("truncated archive manifest: " + path.string());
  try {
    return nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt archive manifest in " + path.string() + ": " + e.what());
  }
}

}  // namespace

nlohmann::json read_archive_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive: " + path.string());
  return read_header(in, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive: " + path.string());
  const auto manifest = read_header(in, path);
  const auto blob_start = in.tellg();

  TensorArchive archive;
  archive.metadata = manifest.value("metadata", nlohmann::json::object());
  try {
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
      const auto dtype = dtype_from_name(entry.at("dtype").get<std::string>());
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto nbytes = entry.at("nbytes").get<std::uint64_t>();
      auto t = torch::empty(shape, torch::TensorOptions().dtype(dtype));
      if (t.nbytes() != nbytes) throw FormatError("size mismatch for tensor '" + name + "' in " + path.string());
      in.seekg(blob_start + static_cast<std::streamoff>(offset));
      in.read(static_cast<char*>(t.data_ptr()), static_cast<std::streamsize>(nbytes));
      if (!in) throw FormatError("truncated payload for tensor '" + name + "' in " + path.string());
      archive.tensors.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("corrupt archive manifest in " + path.string() + ": " + e.what());
  }
  return archive;
}

std::string tensor_digest(const std::map<std::string, torch::Tensor>& tensors) {
  Fnv1a f;
  for (const auto& [name, t] : tensors) digest_one(f, name, t);
  return hex(f.h);
}

std::string tensor_digest(const std::vector<std::pair<std::string, torch::Tensor>>& tensors) {
  Fnv1a f;
  for (const auto& [name, t] : tensors) digest_one(f, name, t);
  return hex(f.h);
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : module.named_buffers(/*recurse=*/true)) out.emplace_back(item.key(), item.value());
  return out;
}

}  // namespace tiger
