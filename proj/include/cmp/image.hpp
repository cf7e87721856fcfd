#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cmp {

using Rgb = std::array<std::uint8_t, 3>;

// 8-bit RGB raster, row-major, three bytes per pixel.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {0, 0, 0});
  RgbImage(int width, int height, std::vector<std::uint8_t> rgb);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }

  Rgb at(int x, int y) const;
  void set(int x, int y, Rgb c);
  std::uint8_t channel(int x, int y, int c) const { return rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3 + c]; }

  std::span<const std::uint8_t> bytes() const noexcept { return rgb_; }
  std::span<std::uint8_t> bytes() noexcept { return rgb_; }

  bool operator==(const RgbImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> rgb_;
};

// Binary raster (0/1 per pixel).
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height), data_(static_cast<std::size_t>(width) * height, fill) {}

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool at(int x, int y) const { return data_[static_cast<std::size_t>(y) * width_ + x] != 0; }
  void set(int x, int y, bool on) { data_[static_cast<std::size_t>(y) * width_ + x] = on ? 1 : 0; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }
  std::span<std::uint8_t> data() noexcept { return data_; }
  std::size_t count() const;

  bool operator==(const Mask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

// Bilinear resampling with pixel-center alignment (align_corners = false).
RgbImage resize_image(const RgbImage& image, int new_width, int new_height);
RgbImage crop_image(const RgbImage& image, int x0, int y0, int width, int height);

// Intersection-over-union of two equally sized masks; 1 when both are empty.
double mask_iou(const Mask& a, const Mask& b);

// PNG codecs. Grayscale PNGs are accepted by `decode_png` and expanded to RGB.
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_mask_png(const Mask& mask);
Mask decode_mask_png(std::span<const std::uint8_t> bytes);

RgbImage load_png(const std::string& path);
void save_png(const std::string& path, const RgbImage& image);
Mask load_mask_png(const std::string& path);
void save_mask_png(const std::string& path, const Mask& mask);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(const std::string& text);

}  // namespace cmp
