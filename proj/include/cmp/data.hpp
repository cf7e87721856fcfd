#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cmp/flow.hpp"
#include "cmp/image.hpp"

namespace cmp {

// ---------------------------------------------------------------------------
// Frame pairing

struct FramePairingRule {
  int max_interval = 10;

  void validate() const;
};

// Consecutive ids whose gap is strictly below max_interval form a pair.
// Ids must be strictly increasing.
std::vector<std::pair<std::int64_t, std::int64_t>> pair_frames(std::span<const std::int64_t> frame_ids,
                                                              const FramePairingRule& rule);

// ---------------------------------------------------------------------------
// Image-flow pairs

struct ImageFlowPair {
  RgbImage image;
  FlowField flow;
  std::string id;
};

struct CropOffset {
  int x = 0;
  int y = 0;
};

// Size after scaling so the shorter side equals `short_side` (aspect kept, rounded).
std::pair<int, int> scaled_size(int width, int height, int short_side);

// Uniform crop offset in [0, width - crop] x [0, height - crop] drawn from `seed`.
CropOffset crop_offset(int width, int height, int crop, std::uint64_t seed);

// Resize so min(w, h) == short_side, then crop a crop x crop window at a
// seed-determined offset. Image and flow are cropped identically.
ImageFlowPair preprocess(const ImageFlowPair& pair, int short_side, int crop, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic rigid-motion scenes

enum class ShapeKind { Disk, Polygon };
enum class MotionKind { Translation, Rotation };

struct SceneShape {
  ShapeKind kind = ShapeKind::Disk;
  // Geometry in pixels of the rendered image.
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
  std::vector<std::array<double, 2>> vertices;  // convex, ordered by angle; polygons only
  Rgb color{};
  Rgb stripe_color{};
  double stripe_angle = 0.0;
  double stripe_period = 1.0;  // pixels

  MotionKind motion = MotionKind::Translation;
  double u = 0.0;  // translation
  double v = 0.0;
  double pivot_x = 0.0;  // rotation
  double pivot_y = 0.0;
  double angle = 0.0;  // radians, counter-clockwise in image coordinates (y down)

  bool contains(double x, double y) const;
  // Displacement of the point (x, y) under this shape's motion.
  FlowVector motion_at(double x, double y) const;
};

struct SyntheticScene {
  std::uint64_t seed = 0;
  int size = 0;
  std::vector<SceneShape> shapes;
  double background_u = 0.0;
  double background_v = 0.0;
};

struct SyntheticOptions {
  int min_shapes = 1;
  int max_shapes = 3;
  double translation_probability = 0.6;
  double static_background_probability = 0.5;
  bool square_shapes = false;  // axis-aligned squares instead of disks/polygons
};

struct SyntheticItem {
  ImageFlowPair pair;
  SyntheticScene scene;
  std::vector<Mask> masks;  // one per shape, in scene order
};

// Clip boundary implied by an image side (side / 8).
double default_boundary(int image_size);

SyntheticScene sample_scene(int image_size, std::uint64_t scene_seed, const SyntheticOptions& options = {});
SyntheticItem render_scene(const SyntheticScene& scene);

// Item i uses scene seed mix_seed(seed, i); ids are "syn<seed>-<i>".
std::vector<SyntheticItem> generate_synthetic(int corpus_size, int image_size, std::uint64_t seed,
                                              const SyntheticOptions& options = {});

// ---------------------------------------------------------------------------
// Corpus manifests

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::string flo_path;
  std::vector<std::string> mask_paths;
};

std::vector<ManifestEntry> load_manifest(const std::string& path);
void save_manifest(const std::string& path, std::span<const ManifestEntry> entries);

// Relative paths in the manifest are resolved against its directory.
std::vector<ImageFlowPair> load_corpus(const std::string& manifest_path);

// Writes images/, flows/, masks/ and manifest.json under `dir`.
void write_synthetic_corpus(const std::string& dir, std::span<const SyntheticItem> items);

// Seed-stable 10% held-out split keyed on the item id.
bool is_held_out(const std::string& id);

// Deterministic 64-bit mixing (splitmix64 finalizer over a combined state).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c);

}  // namespace cmp
