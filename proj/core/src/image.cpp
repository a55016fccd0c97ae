#include "stylus/image.hpp"

#include <cmath>

#include "stylus/common.hpp"

namespace stylus {

Image::Image(int width, int height, int channels, std::uint8_t fill)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0 || (channels != 1 && channels != 3)) {
    fail(ErrorClass::image, "invalid image shape " + std::to_string(width) + "x" +
                                std::to_string(height) + "x" + std::to_string(channels));
  }
  data_.assign(static_cast<std::size_t>(width) * height * channels, fill);
}

Image Image::crop(int x0, int y0, int w, int h) const {
  if (x0 < 0 || y0 < 0 || w <= 0 || h <= 0 || x0 + w > width_ || y0 + h > height_) {
    fail(ErrorClass::image, "crop out of bounds");
  }
  Image out(w, h, channels_);
  for (int y = 0; y < h; ++y) {
    const std::uint8_t* src = &data_[((static_cast<std::size_t>(y0) + y) * width_ + x0) * channels_];
    std::uint8_t* dst = &out.data_[static_cast<std::size_t>(y) * w * channels_];
    std::copy(src, src + static_cast<std::size_t>(w) * channels_, dst);
  }
  return out;
}

Image Image::pad_right(int width, std::uint8_t fill) const {
  if (width < width_) fail(ErrorClass::image, "pad_right: target narrower than image");
  Image out(width, height_, channels_, fill);
  for (int y = 0; y < height_; ++y) {
    const std::uint8_t* src = &data_[static_cast<std::size_t>(y) * width_ * channels_];
    std::uint8_t* dst = &out.data_[static_cast<std::size_t>(y) * width * channels_];
    std::copy(src, src + static_cast<std::size_t>(width_) * channels_, dst);
  }
  return out;
}

Image Image::to_grey() const {
  if (channels_ == 1) return *this;
  Image out(width_, height_, 1);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      // ITU-R BT.601 luma, integer arithmetic for exact reproducibility.
      const int r = at(x, y, 0), g = at(x, y, 1), b = at(x, y, 2);
      out.at(x, y) = static_cast<std::uint8_t>((299 * r + 587 * g + 114 * b + 500) / 1000);
    }
  }
  return out;
}

Image Image::to_rgb() const {
  if (channels_ == 3) return *this;
  Image out(width_, height_, 3);
  for (int y = 0; y < height_; ++y) {
    for (int x = 0; x < width_; ++x) {
      const std::uint8_t v = at(x, y);
      out.at(x, y, 0) = v;
      out.at(x, y, 1) = v;
      out.at(x, y, 2) = v;
    }
  }
  return out;
}

double mean_value(const Image& img) {
  if (img.empty()) return 0.0;
  double sum = 0.0;
  for (std::uint8_t v : img.data()) sum += v;
  return sum / static_cast<double>(img.data().size());
}

bool all_at_least(const Image& img, std::uint8_t threshold) {
  for (std::uint8_t v : img.data()) {
    if (v < threshold) return false;
  }
  return true;
}

}  // namespace stylus
