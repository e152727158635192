#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>

#include <torch/torch.h>

#include "oracles/oracles.hpp"

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("tiger_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline torch::Generator gen(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

inline torch::Tensor randn(std::vector<std::int64_t> shape, std::uint64_t seed) {
  auto g = gen(seed);
  return torch::randn(shape, g, torch::kFloat64);
}

/// Re-draws every parameter of a module from N(0, scale²) so oracle comparisons exercise all weights.
inline void randomize(torch::nn::Module& m, std::uint64_t seed, double scale = 0.3) {
  auto g = gen(seed);
  torch::NoGradGuard no_grad;
  for (auto& p : m.parameters()) p.copy_(torch::randn(p.sizes(), g, p.options()) * scale);
}

inline double max_abs_diff(const torch::Tensor& a, const torch::Tensor& b) {
  return (a.to(torch::kFloat64) - b.to(torch::kFloat64)).abs().max().item<double>();
}

inline oracle::Stage conv_stage(const torch::nn::Conv2d& c) {
  const auto& o = c->options;
  std::vector<double> bias;
  if (c->bias.defined()) {
    auto b = oracle::from_tensor(c->bias);
    bias = b.data;
  }
  return oracle::Stage::conv(oracle::from_tensor(c->weight), bias, o.stride()->at(0),
                             std::get<torch::ExpandingArray<2>>(o.padding())->at(0), o.dilation()->at(0), o.groups());
}

inline oracle::Stage linear_stage(const torch::nn::Linear& l) {
  return oracle::Stage::linear(oracle::from_tensor(l->weight), oracle::from_tensor(l->bias).data);
}

}  // namespace testing_support
