#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "wslc/box.hpp"
#include "wslc/tensor.hpp"

namespace wslc {

// H x W x 3 float image with values in [0, 1].
using Image = Tensor;

Image make_image(int height, int width, float r = 0, float g = 0, float b = 0);
inline int image_height(const Image& im) { return static_cast<int>(im.dim(0)); }
inline int image_width(const Image& im) { return static_cast<int>(im.dim(1)); }

inline float& pixel(Image& im, int y, int x, int ch) {
  return im[(static_cast<std::size_t>(y) * im.dim(1) + static_cast<std::size_t>(x)) * 3 + ch];
}
inline float pixel(const Image& im, int y, int x, int ch) {
  return im[(static_cast<std::size_t>(y) * im.dim(1) + static_cast<std::size_t>(x)) * 3 + ch];
}

// Luma in [0, 1], H x W.
Tensor grayscale(const Image& im);

// Bilinear resample of the box region to out_h x out_w (half-pixel centers, edge clamped).
Image crop_resize(const Image& im, const Box& box, int out_h, int out_w);
Image resize(const Image& im, int out_h, int out_w);

// Packs images into an N x 3 x H x W batch, subtracting 0.5 from every pixel.
// Images whose size differs from (height, width) are resized first.
Tensor to_model_batch(std::span<const Image> images, int height, int width);

// Any format OpenCV can decode; nullopt when unreadable.
std::optional<Image> read_image(const std::filesystem::path& path);
// Binary PPM (P6).
void write_ppm(const std::filesystem::path& path, const Image& im);
// Copy of im with box outlines drawn in the given color.
Image draw_boxes(const Image& im, std::span<const Box> boxes, float r = 1, float g = 0, float b = 0);

}  // namespace wslc
