#pragma once

#include <cstdint>
#include <vector>

namespace stylus {

// 8-bit raster, 1 (greyscale) or 3 (RGB) channels, row-major H x W x C.
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, std::uint8_t fill = 255);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  bool empty() const { return data_.empty(); }

  std::uint8_t& at(int x, int y, int c = 0) {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  const std::vector<std::uint8_t>& data() const { return data_; }
  std::vector<std::uint8_t>& data() { return data_; }

  bool operator==(const Image& other) const = default;

  Image crop(int x0, int y0, int w, int h) const;
  // Pads on the right with `fill` to reach `width`; errors if already wider.
  Image pad_right(int width, std::uint8_t fill = 255) const;
  Image to_grey() const;
  Image to_rgb() const;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<std::uint8_t> data_;
};

// Mean pixel value over all channels, in [0, 255].
double mean_value(const Image& img);

// True when every channel of every pixel is >= threshold.
bool all_at_least(const Image& img, std::uint8_t threshold);

}  // namespace stylus
