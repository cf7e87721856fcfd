#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "cmp/flow.hpp"
#include "cmp/image.hpp"

namespace cmp {

struct Pixel {
  int x = 0;
  int y = 0;

  bool operator==(const Pixel&) const = default;
  auto operator<=>(const Pixel&) const = default;
};

// Keypoint sampling parameters.
struct SamplingConfig {
  int kernel = 81;             // K, NMS window side (odd)
  int grid_stride = 200;       // G
  float edge_threshold = 1.0f; // Sobel magnitude threshold, pixels/frame per pixel
  int border_margin = 16;      // keypoints closer than this to an edge are dropped

  void validate() const;

  // K = 81, G = 200 at 384x384.
  static SamplingConfig paper_scale();
  // The paper-scale preset shrunk to a 64x64 crop.
  static SamplingConfig desk_scale();
};

enum class GuidanceKind { Watershed, Grid, User, Negative };

std::string to_string(GuidanceKind kind);
GuidanceKind guidance_kind_from_string(const std::string& name);

struct GuidancePoint {
  int x = 0;
  int y = 0;
  float u = 0.0f;
  float v = 0.0f;
  GuidanceKind kind = GuidanceKind::User;

  bool operator==(const GuidancePoint&) const = default;
};

struct GuidanceSet {
  std::vector<GuidancePoint> points;

  std::size_t count(GuidanceKind kind) const;
  // Throws when a point lies outside the image or two points share a pixel.
  void validate(int width, int height) const;
};

void to_json(nlohmann::json& j, const GuidancePoint& p);
void from_json(const nlohmann::json& j, GuidancePoint& p);
nlohmann::json guidance_to_json(const GuidanceSet& set);
GuidanceSet guidance_from_json(const nlohmann::json& j);

// Per-pixel distance to the nearest motion edge.
struct WatershedMap {
  int width = 0;
  int height = 0;
  std::vector<float> distance;

  float at(int x, int y) const { return distance[static_cast<std::size_t>(y) * width + x]; }
};

// (u, v, mask) conditioning planes.
struct SparseGuidanceMap {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::vector<float> mask;

  SparseGuidanceMap() = default;
  SparseGuidanceMap(int w, int h);
};

// Sobel gradients of u and v (replicate padding, kernel scaled by 1/8 so the
// response is a finite-difference derivative). Edge iff the joint gradient
// magnitude exceeds `edge_threshold`.
Mask motion_edges(const FlowField& flow, float edge_threshold);

// Sobel gradient magnitude used by `motion_edges`.
std::vector<float> motion_gradient_magnitude(const FlowField& flow);

// Exact Euclidean distance transform to the nearest edge pixel. Without any
// edge every pixel receives the image diagonal.
WatershedMap watershed_distance_map(const Mask& edges);

// Local maxima of the map over a kernel x kernel window; ties resolved in
// favor of the first pixel in row-major order; zero values never qualify.
std::vector<Pixel> nms_keypoints(const WatershedMap& map, int kernel, int border_margin);

// Points at (G/2 + i*G, G/2 + j*G) inside the image.
std::vector<Pixel> grid_points(int width, int height, int stride);

GuidanceSet sample_guidance(const FlowField& flow, const SamplingConfig& cfg);

SparseGuidanceMap rasterize_guidance(const GuidanceSet& set, int width, int height);

}  // namespace cmp
