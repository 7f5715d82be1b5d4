#include "wslc/image.hpp"

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <cmath>
#include <stdexcept>

namespace wslc {

Image make_image(int height, int width, float r, float g, float b) {
  Image im({static_cast<std::size_t>(height), static_cast<std::size_t>(width), 3});
  for (std::size_t i = 0; i < im.size(); i += 3) {
    im[i] = r;
    im[i + 1] = g;
    im[i + 2] = b;
  }
  return im;
}

Tensor grayscale(const Image& im) {
  const int h = image_height(im), w = image_width(im);
  Tensor g({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      g(y, x) = 0.299f * pixel(im, y, x, 0) + 0.587f * pixel(im, y, x, 1) + 0.114f * pixel(im, y, x, 2);
  return g;
}

namespace {

// Bilinear sample of the region [x1, x2) x [y1, y2), clamping sample points to [cx1, cx2) x [cy1, cy2).
Image sample_region(const Image& im, double x1, double y1, double x2, double y2, int cx1, int cy1, int cx2, int cy2,
                    int out_h, int out_w) {
  Image out({static_cast<std::size_t>(out_h), static_cast<std::size_t>(out_w), 3});
  const double sy = (y2 - y1) / out_h;
  const double sx = (x2 - x1) / out_w;
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = std::clamp(y1 + (oy + 0.5) * sy - 0.5, static_cast<double>(cy1), static_cast<double>(cy2 - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int yb = std::min(y0 + 1, cy2 - 1);
    const float ty = static_cast<float>(fy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = std::clamp(x1 + (ox + 0.5) * sx - 0.5, static_cast<double>(cx1), static_cast<double>(cx2 - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int xb = std::min(x0 + 1, cx2 - 1);
      const float tx = static_cast<float>(fx - x0);
      for (int c = 0; c < 3; ++c) {
        const float top = pixel(im, y0, x0, c) * (1 - tx) + pixel(im, y0, xb, c) * tx;
        const float bottom = pixel(im, yb, x0, c) * (1 - tx) + pixel(im, yb, xb, c) * tx;
        pixel(out, oy, ox, c) = top * (1 - ty) + bottom * ty;
      }
    }
  }
  return out;
}

}  // namespace

Image crop_resize(const Image& im, const Box& box, int out_h, int out_w) {
  if (!box.valid_in(image_width(im), image_height(im)))
    throw std::invalid_argument("crop box outside image");
  return sample_region(im, box.x1, box.y1, box.x2, box.y2, box.x1, box.y1, box.x2, box.y2, out_h, out_w);
}

Image resize(const Image& im, int out_h, int out_w) {
  return crop_resize(im, Box{0, 0, image_width(im), image_height(im), 0.0}, out_h, out_w);
}

Tensor to_model_batch(std::span<const Image> images, int height, int width) {
  const auto h = static_cast<std::size_t>(height), w = static_cast<std::size_t>(width);
  Tensor batch({images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image* src = &images[n];
    Image resized;
    if (image_height(*src) != height || image_width(*src) != width) {
      resized = resize(*src, height, width);
      src = &resized;
    }
    float* dst = batch.row(n).data();
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) dst[(c * h + y) * w + x] = (*src)[(y * w + x) * 3 + c] - 0.5f;
  }
  return batch;
}

std::optional<Image> read_image(const std::filesystem::path& path) {
  cv::Mat m;
  try {
    m = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception&) {
    return std::nullopt;
  }
  if (m.empty()) return std::nullopt;
  Image im({static_cast<std::size_t>(m.rows), static_cast<std::size_t>(m.cols), 3});
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& bgr = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) pixel(im, y, x, c) = bgr[2 - c] / 255.0f;
    }
  return im;
}

void write_ppm(const std::filesystem::path& path, const Image& im) {
  const int h = image_height(im), w = image_width(im);
  cv::Mat m(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        m.at<cv::Vec3b>(y, x)[2 - c] =
            static_cast<unsigned char>(std::lround(std::clamp(pixel(im, y, x, c), 0.0f, 1.0f) * 255.0f));
  if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PXM_BINARY, 1}))
    throw std::runtime_error("cannot write " + path.string());
}

Image draw_boxes(const Image& im, std::span<const Box> boxes, float r, float g, float b) {
  Image out = im;
  const int h = image_height(im), w = image_width(im);
  const float color[3] = {r, g, b};
  for (const auto& box : boxes) {
    if (!box.valid_in(w, h)) continue;
    for (int x = box.x1; x < box.x2; ++x)
      for (int c = 0; c < 3; ++c) {
        pixel(out, box.y1, x, c) = color[c];
        pixel(out, box.y2 - 1, x, c) = color[c];
      }
    for (int y = box.y1; y < box.y2; ++y)
      for (int c = 0; c < 3; ++c) {
        pixel(out, y, box.x1, c) = color[c];
        pixel(out, y, box.x2 - 1, c) = color[c];
      }
  }
  return out;
}

}  // namespace wslc
