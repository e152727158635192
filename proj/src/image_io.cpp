#include "tiger/image_io.hpp"

#include <png.h>

#include "tiger/errors.hpp"

namespace tiger {

torch::Tensor read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_RGB;
  auto out = torch::empty({static_cast<int64_t>(image.height), static_cast<int64_t>(image.width), 3}, torch::kUInt8);
  if (!png_image_finish_read(&image, nullptr, out.data_ptr<uint8_t>(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  return out;
}

void write_png(const std::filesystem::path& path, const torch::Tensor& rgb_hwc) {
  TORCH_CHECK(rgb_hwc.dim() == 3 && rgb_hwc.size(2) == 3 && rgb_hwc.scalar_type() == torch::kUInt8,
              "write_png expects uint8 H×W×3");
  auto c = rgb_hwc.contiguous();
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(c.size(1));
  image.height = static_cast<png_uint_32>(c.size(0));
  image.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, c.data_ptr<uint8_t>(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

torch::Tensor to_rgb8(const torch::Tensor& chw) {
  auto x = chw.detach().to(torch::kFloat64).clamp(-1.0, 1.0);
  return ((x + 1.0) * 127.5).round().to(torch::kUInt8).permute({1, 2, 0}).contiguous();
}

torch::Tensor from_rgb8(const torch::Tensor& hwc) {
  return hwc.permute({2, 0, 1}).to(torch::kFloat32) / 127.5 - 1.0;
}

}  // namespace tiger
