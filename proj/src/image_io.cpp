#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "cmp/error.hpp"
#include "cmp/image.hpp"

namespace cmp {

RgbImage::RgbImage(int width, int height, Rgb fill) : width_(width), height_(height) {
  if (width < 0 || height < 0) throw InvalidArgument("negative image dimensions");
  rgb_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb_.size(); i += 3) std::copy(fill.begin(), fill.end(), rgb_.begin() + i);
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> rgb)
    : width_(width), height_(height), rgb_(std::move(rgb)) {
  if (width < 0 || height < 0) throw InvalidArgument("negative image dimensions");
  if (rgb_.size() != static_cast<std::size_t>(width) * height * 3) {
    throw ShapeMismatch("rgb byte count does not match dimensions");
  }
}

Rgb RgbImage::at(int x, int y) const {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  return {rgb_[i], rgb_[i + 1], rgb_[i + 2]};
}

void RgbImage::set(int x, int y, Rgb c) {
  const std::size_t i = (static_cast<std::size_t>(y) * width_ + x) * 3;
  rgb_[i] = c[0];
  rgb_[i + 1] = c[1];
  rgb_[i + 2] = c[2];
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count_if(data_.begin(), data_.end(), [](std::uint8_t v) { return v != 0; }));
}

RgbImage resize_image(const RgbImage& image, int new_width, int new_height) {
  if (new_width <= 0 || new_height <= 0) throw InvalidArgument("resize target must be positive");
  if (image.empty()) throw InvalidArgument("cannot resize an empty image");
  RgbImage out(new_width, new_height);
  auto tap = [](int dst, int dst_size, int src_size, int& i0, int& i1, double& f) {
    double s = (dst + 0.5) * static_cast<double>(src_size) / dst_size - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src_size - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, src_size - 1);
    f = s - i0;
  };
  for (int y = 0; y < new_height; ++y) {
    int y0, y1;
    double fy;
    tap(y, new_height, image.height(), y0, y1, fy);
    for (int x = 0; x < new_width; ++x) {
      int x0, x1;
      double fx;
      tap(x, new_width, image.width(), x0, x1, fx);
      Rgb c{};
      for (int k = 0; k < 3; ++k) {
        const double v = (1 - fy) * ((1 - fx) * image.channel(x0, y0, k) + fx * image.channel(x1, y0, k)) +
                         fy * ((1 - fx) * image.channel(x0, y1, k) + fx * image.channel(x1, y1, k));
        c[k] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
      out.set(x, y, c);
    }
  }
  return out;
}

RgbImage crop_image(const RgbImage& image, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || x0 + width > image.width() || y0 + height > image.height()) {
    throw InvalidArgument("crop window outside image");
  }
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.set(x, y, image.at(x0 + x, y0 + y));
  }
  return out;
}

double mask_iou(const Mask& a, const Mask& b) {
  if (a.width() != b.width() || a.height() != b.height()) throw ShapeMismatch("mask_iou: dimension mismatch");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    const bool pa = a.data()[i] != 0;
    const bool pb = b.data()[i] != 0;
    inter += (pa && pb) ? 1 : 0;
    uni += (pa || pb) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  cv::Mat bgr(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      const Rgb c = image.at(x, y);
      row[3 * x] = c[2];
      row[3 * x + 1] = c[1];
      row[3 * x + 2] = c[0];
    }
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", bgr, out)) throw IoError("PNG encoding failed");
  return out;
}

RgbImage decode_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw FormatError("png_invalid", "empty PNG payload");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr = cv::imdecode(buf, cv::IMREAD_COLOR);
  if (bgr.empty()) throw FormatError("png_invalid", "could not decode PNG payload");
  RgbImage out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<std::uint8_t>(y);
    for (int x = 0; x < bgr.cols; ++x) out.set(x, y, {row[3 * x + 2], row[3 * x + 1], row[3 * x]});
  }
  return out;
}

std::vector<std::uint8_t> encode_mask_png(const Mask& mask) {
  cv::Mat gray(mask.height(), mask.width(), CV_8UC1);
  for (int y = 0; y < mask.height(); ++y) {
    auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < mask.width(); ++x) row[x] = mask.at(x, y) ? 255 : 0;
  }
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".png", gray, out)) throw IoError("PNG encoding failed");
  return out;
}

Mask decode_mask_png(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) throw FormatError("png_invalid", "empty PNG payload");
  const cv::Mat buf(1, static_cast<int>(bytes.size()), CV_8UC1, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat gray = cv::imdecode(buf, cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw FormatError("png_invalid", "could not decode PNG payload");
  Mask out(gray.cols, gray.rows);
  for (int y = 0; y < gray.rows; ++y) {
    const auto* row = gray.ptr<std::uint8_t>(y);
    for (int x = 0; x < gray.cols; ++x) out.set(x, y, row[x] >= 128);
  }
  return out;
}

RgbImage load_png(const std::string& path) { return decode_png(read_file(path)); }
void save_png(const std::string& path, const RgbImage& image) { write_file(path, encode_png(image)); }
Mask load_mask_png(const std::string& path) { return decode_mask_png(read_file(path)); }
void save_mask_png(const std::string& path, const Mask& mask) { write_file(path, encode_mask_png(mask)); }

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += kAlphabet[n & 63];
  }
  if (i + 1 == bytes.size()) {
    const std::uint32_t n = bytes[i] << 16;
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    const std::uint32_t n = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += kAlphabet[(n >> 6) & 63];
    out += '=';
  }
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  auto value = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  std::vector<std::uint8_t> out;
  out.reserve(text.size() / 4 * 3);
  std::uint32_t buffer = 0;
  int bits = 0;
  for (char c : text) {
    if (c == '=') break;
    if (c == '\n' || c == '\r' || c == ' ') continue;
    const int v = value(c);
    if (v < 0) throw FormatError("base64_invalid", "invalid base64 character");
    buffer = (buffer << 6) | static_cast<std::uint32_t>(v);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<std::uint8_t>((buffer >> bits) & 0xffu));
    }
  }
  return out;
}

}  // namespace cmp
