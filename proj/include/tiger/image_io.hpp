#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace tiger {

/// Decodes a PNG into a uint8 tensor H×W×3 (RGB; alpha and gray are converted).
/// Throws IoError when the file cannot be read or decoded.
torch::Tensor read_png(const std::filesystem::path& path);

/// Writes a uint8 H×W×3 tensor as an 8-bit RGB PNG.
void write_png(const std::filesystem::path& path, const torch::Tensor& rgb_hwc);

/// Maps a 3×H×W image in [-1, 1] to uint8 H×W×3 via round((x + 1) · 127.5).
torch::Tensor to_rgb8(const torch::Tensor& chw);

/// Maps uint8 H×W×3 to float 3×H×W via pixel / 127.5 − 1.
torch::Tensor from_rgb8(const torch::Tensor& hwc);

}  // namespace tiger
