#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmp/error.hpp"
#include "cmp/image.hpp"

namespace cmp {

// Displacement of one pixel between two frames, pixels/frame.
struct FlowVector {
  float u = 0.0f;
  float v = 0.0f;

  bool operator==(const FlowVector&) const = default;
};

// Dense optical flow, row-major.
class FlowField {
 public:
  FlowField() = default;
  FlowField(int width, int height, FlowVector fill = {});
  FlowField(int width, int height, std::vector<FlowVector> values);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return values_.size(); }

  FlowVector& at(int x, int y) { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  const FlowVector& at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }

  std::span<FlowVector> values() noexcept { return values_; }
  std::span<const FlowVector> values() const noexcept { return values_; }

  bool all_finite() const;
  bool operator==(const FlowField&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<FlowVector> values_;
};

// ---------------------------------------------------------------------------
// Middlebury .flo interchange: "PIEH", int32 width, int32 height, then
// width*height interleaved (u, v) float32, all little-endian.

enum class FloErrorKind { BadMagic, Truncated, NonFinite, BadDimensions };

class FloError : public FormatError {
 public:
  FloError(FloErrorKind kind, const std::string& message);
  FloErrorKind kind() const noexcept { return kind_; }

 private:
  FloErrorKind kind_;
};

FlowField read_flo(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> write_flo(const FlowField& flow);
FlowField load_flo(const std::string& path);
void save_flo(const std::string& path, const FlowField& flow);

// ---------------------------------------------------------------------------
// Quantization into C linear bins per axis over [-B, B].

struct QuantizationSpec {
  int bins = 19;          // C
  float boundary = 8.0f;  // B, pixels/frame

  double bin_width() const { return 2.0 * boundary / bins; }
  void validate() const;
};

struct QuantizedFlow {
  int width = 0;
  int height = 0;
  QuantizationSpec spec;
  std::vector<int> xbins;
  std::vector<int> ybins;
};

// Lower edge of bin k: -B + k * (2B / C).
double bin_lower_edge(int bin, const QuantizationSpec& spec);
int quantize_component(double value, const QuantizationSpec& spec);
float bin_center(int bin, const QuantizationSpec& spec);

QuantizedFlow quantize_flow(const FlowField& flow, const QuantizationSpec& spec);
FlowField dequantize_flow(const QuantizedFlow& q);

// ---------------------------------------------------------------------------
// Visualization, warping and resampling.

// The 55-entry Middlebury color wheel (RY 15, YG 6, GC 4, CB 11, BM 13, MR 6).
const std::vector<Rgb>& middlebury_color_wheel();

// Color for a flow vector already divided by the normalizing magnitude.
Rgb flow_color(double u, double v);

// Saturation follows magnitude / max_magnitude; when omitted the field's own
// maximum magnitude is used (floored at 1e-6).
RgbImage flow_to_color(const FlowField& flow, std::optional<float> max_magnitude = std::nullopt);

// Forward warp by bilinear splatting. Destinations reached by several sources
// are weight-averaged. Uncovered pixels are filled from the source image
// sampled at p - flow(p), clamped to the border.
RgbImage warp_image(const RgbImage& image, const FlowField& flow);

// Bilinear spatial resampling; u scales by new_width/width, v by new_height/height.
FlowField resize_flow(const FlowField& flow, int new_width, int new_height);
FlowField crop_flow(const FlowField& flow, int x0, int y0, int width, int height);

// Mean end-point error between two equally sized fields.
double end_point_error(const FlowField& predicted, const FlowField& truth);

}  // namespace cmp
