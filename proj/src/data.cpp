#include "cmp/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "cmp/error.hpp"

namespace cmp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Seeds

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Small deterministic generator; uniform doubles built from the top 53 bits.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return splitmix64(state_);
  }
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Inclusive integer range.
  int integer(int lo, int hi) { return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1)); }
  bool chance(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

}  // namespace

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return splitmix64(splitmix64(a) ^ (b + 0x632be59bd9b4e019ULL)); }

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) { return mix_seed(mix_seed(a, b), c); }

// ---------------------------------------------------------------------------
// Pairing

void FramePairingRule::validate() const {
  if (max_interval < 1) throw InvalidArgument("max_interval must be >= 1");
}

std::vector<std::pair<std::int64_t, std::int64_t>> pair_frames(std::span<const std::int64_t> frame_ids,
                                                              const FramePairingRule& rule) {
  rule.validate();
  std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
  for (std::size_t i = 1; i < frame_ids.size(); ++i) {
    if (frame_ids[i] <= frame_ids[i - 1]) throw InvalidArgument("pair_frames: frame ids must be strictly increasing");
    if (frame_ids[i] - frame_ids[i - 1] < rule.max_interval) pairs.emplace_back(frame_ids[i - 1], frame_ids[i]);
  }
  return pairs;
}

// ---------------------------------------------------------------------------
// Preprocessing

std::pair<int, int> scaled_size(int width, int height, int short_side) {
  if (width <= 0 || height <= 0 || short_side <= 0) throw InvalidArgument("scaled_size: sizes must be positive");
  if (width <= height) {
    const int h = static_cast<int>(std::lround(static_cast<double>(height) * short_side / width));
    return {short_side, std::max(h, short_side)};
  }
  const int w = static_cast<int>(std::lround(static_cast<double>(width) * short_side / height));
  return {std::max(w, short_side), short_side};
}

CropOffset crop_offset(int width, int height, int crop, std::uint64_t seed) {
  if (crop > width || crop > height) throw InvalidArgument("crop window larger than image");
  Rng rng(mix_seed(seed, 0x63726f70ULL));
  CropOffset off;
  off.x = rng.integer(0, width - crop);
  off.y = rng.integer(0, height - crop);
  return off;
}

ImageFlowPair preprocess(const ImageFlowPair& pair, int short_side, int crop, std::uint64_t seed) {
  if (crop <= 0 || crop > short_side) throw InvalidArgument("preprocess: need 0 < crop <= short_side");
  if (pair.image.width() != pair.flow.width() || pair.image.height() != pair.flow.height()) {
    throw ShapeMismatch("preprocess: image and flow dimensions differ for item '" + pair.id + "'");
  }
  const auto [w, h] = scaled_size(pair.image.width(), pair.image.height(), short_side);
  const bool same = w == pair.image.width() && h == pair.image.height();
  const RgbImage image = same ? pair.image : resize_image(pair.image, w, h);
  const FlowField flow = same ? pair.flow : resize_flow(pair.flow, w, h);
  const CropOffset off = crop_offset(w, h, crop, seed);
  return {crop_image(image, off.x, off.y, crop, crop), crop_flow(flow, off.x, off.y, crop, crop), pair.id};
}

// ---------------------------------------------------------------------------
// Synthetic scenes

bool SceneShape::contains(double x, double y) const {
  if (kind == ShapeKind::Disk) {
    const double dx = x - cx;
    const double dy = y - cy;
    return dx * dx + dy * dy <= radius * radius;
  }
  // Convex polygon: the point must sit on the same side of every edge.
  const std::size_t n = vertices.size();
  bool negative = false;
  bool positive = false;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = vertices[i];
    const auto& b = vertices[(i + 1) % n];
    const double cross = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    negative = negative || cross < 0.0;
    positive = positive || cross > 0.0;
  }
  return !(negative && positive);
}

FlowVector SceneShape::motion_at(double x, double y) const {
  if (motion == MotionKind::Translation) return {static_cast<float>(u), static_cast<float>(v)};
  const double px = x - pivot_x;
  const double py = y - pivot_y;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  return {static_cast<float>(c * px - s * py - px), static_cast<float>(s * px + c * py - py)};
}

double default_boundary(int image_size) { return image_size / 8.0; }

namespace {

Rgb random_color(Rng& rng, int lo, int hi) {
  return {static_cast<std::uint8_t>(rng.integer(lo, hi)), static_cast<std::uint8_t>(rng.integer(lo, hi)),
          static_cast<std::uint8_t>(rng.integer(lo, hi))};
}

int color_distance(const Rgb& a, const Rgb& b) {
  int d = 0;
  for (int c = 0; c < 3; ++c) d = std::max(d, std::abs(static_cast<int>(a[c]) - static_cast<int>(b[c])));
  return d;
}

// Largest distance from (px, py) to any pixel of the shape's bounding disk.
double reach(const SceneShape& s, double px, double py) {
  return std::hypot(s.cx - px, s.cy - py) + s.radius;
}

}  // namespace

SyntheticScene sample_scene(int image_size, std::uint64_t scene_seed, const SyntheticOptions& options) {
  if (image_size < 32) throw InvalidArgument("synthetic image size must be >= 32");
  if (options.min_shapes < 0 || options.max_shapes < options.min_shapes) {
    throw InvalidArgument("synthetic shape count range is invalid");
  }
  Rng rng(scene_seed);
  const double size = image_size;
  const double scale = size / 64.0;
  const double boundary = default_boundary(image_size);
  const double max_speed = 0.75 * boundary;

  SyntheticScene scene;
  scene.seed = scene_seed;
  scene.size = image_size;
  if (!rng.chance(options.static_background_probability)) {
    // Uniform over the disk |v| <= 2 (scaled with the image).
    const double r = 2.0 * scale * std::sqrt(rng.uniform());
    const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
    scene.background_u = r * std::cos(t);
    scene.background_v = r * std::sin(t);
  }

  const int count = rng.integer(options.min_shapes, options.max_shapes);
  const Rgb background_hint{100, 100, 100};
  for (int k = 0; k < count; ++k) {
    SceneShape s;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      s.radius = rng.uniform(0.12, 0.22) * size;
      s.cx = rng.uniform(s.radius, size - 1.0 - s.radius);
      s.cy = rng.uniform(s.radius, size - 1.0 - s.radius);
      placed = std::all_of(scene.shapes.begin(), scene.shapes.end(), [&](const SceneShape& o) {
        return std::hypot(o.cx - s.cx, o.cy - s.cy) > o.radius + s.radius + 2.0 * scale;
      });
    }
    if (!placed) break;

    if (options.square_shapes) {
      s.kind = ShapeKind::Polygon;
      const double h = s.radius / std::numbers::sqrt2;
      s.vertices = {{s.cx - h, s.cy - h}, {s.cx - h, s.cy + h}, {s.cx + h, s.cy + h}, {s.cx + h, s.cy - h}};
    } else if (rng.chance(0.5)) {
      s.kind = ShapeKind::Disk;
    } else {
      s.kind = ShapeKind::Polygon;
      const int n = rng.integer(3, 6);
      std::vector<double> angles;
      for (int i = 0; i < n; ++i) angles.push_back(rng.uniform(0.0, 2.0 * std::numbers::pi));
      std::sort(angles.begin(), angles.end());
      for (double a : angles) {
        const double r = s.radius * rng.uniform(0.8, 1.0);
        s.vertices.push_back({s.cx + r * std::cos(a), s.cy + r * std::sin(a)});
      }
      // Degenerate draws (all vertices on one side) are replaced by a square.
      double cx = 0.0, cy = 0.0;
      for (const auto& p : s.vertices) {
        cx += p[0] / n;
        cy += p[1] / n;
      }
      if (!s.contains(cx, cy) || !s.contains(s.cx, s.cy)) {
        const double h = s.radius / std::numbers::sqrt2;
        s.vertices = {{s.cx - h, s.cy - h}, {s.cx - h, s.cy + h}, {s.cx + h, s.cy + h}, {s.cx + h, s.cy - h}};
      }
    }

    do {
      s.color = random_color(rng, 0, 255);
    } while (color_distance(s.color, background_hint) < 90);
    s.stripe_color = {static_cast<std::uint8_t>(s.color[0] * 3 / 5), static_cast<std::uint8_t>(s.color[1] * 3 / 5),
                      static_cast<std::uint8_t>(s.color[2] * 3 / 5)};
    s.stripe_angle = rng.uniform(0.0, std::numbers::pi);
    s.stripe_period = rng.uniform(4.0, 8.0) * scale;

    if (rng.chance(options.translation_probability)) {
      s.motion = MotionKind::Translation;
      const double speed = rng.uniform(scale, max_speed);
      const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
      s.u = speed * std::cos(t);
      s.v = speed * std::sin(t);
    } else {
      s.motion = MotionKind::Rotation;
      s.pivot_x = s.cx;
      s.pivot_y = s.cy;
      for (int attempt = 0; attempt < 16; ++attempt) {
        const double px = s.cx + rng.uniform(-0.4, 0.4) * s.radius;
        const double py = s.cy + rng.uniform(-0.4, 0.4) * s.radius;
        if (s.contains(px, py)) {
          s.pivot_x = px;
          s.pivot_y = py;
          break;
        }
      }
      // Displacement of a point at distance d is 2 d sin(|angle| / 2).
      const double d = reach(s, s.pivot_x, s.pivot_y);
      const double limit = 2.0 * std::asin(std::min(1.0, max_speed / (2.0 * d)));
      const double magnitude = rng.uniform(0.3, 1.0) * limit;
      s.angle = rng.chance(0.5) ? magnitude : -magnitude;
    }
    scene.shapes.push_back(std::move(s));
  }
  return scene;
}

SyntheticItem render_scene(const SyntheticScene& scene) {
  const int n = scene.size;
  Rng rng(mix_seed(scene.seed, 0x62676e64ULL));
  const Rgb bg_a = random_color(rng, 70, 130);
  const Rgb bg_b = random_color(rng, 70, 130);
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(grad_angle);
  const double gy = std::sin(grad_angle);
  const double checker = n / 8.0;

  SyntheticItem item;
  item.scene = scene;
  item.pair.image = RgbImage(n, n);
  item.pair.flow = FlowField(n, n, {static_cast<float>(scene.background_u), static_cast<float>(scene.background_v)});
  for (std::size_t k = 0; k < scene.shapes.size(); ++k) item.masks.emplace_back(n, n);

  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      // Soft gradient with a faint checker so the background is not flat.
      const double t = std::clamp(0.5 + ((x - n / 2.0) * gx + (y - n / 2.0) * gy) / n, 0.0, 1.0);
      const bool cell = (static_cast<int>(std::floor(x / checker)) + static_cast<int>(std::floor(y / checker))) % 2;
      Rgb px;
      for (int c = 0; c < 3; ++c) {
        const double value = bg_a[c] * (1.0 - t) + bg_b[c] * t + (cell ? 8.0 : -8.0);
        px[c] = static_cast<std::uint8_t>(std::clamp(std::lround(value), 0L, 255L));
      }
      item.pair.image.set(x, y, px);
      for (std::size_t k = 0; k < scene.shapes.size(); ++k) {
        const SceneShape& s = scene.shapes[k];
        if (!s.contains(x, y)) continue;
        const double along = (x - s.cx) * std::cos(s.stripe_angle) + (y - s.cy) * std::sin(s.stripe_angle);
        const bool stripe = std::fmod(std::fabs(along), s.stripe_period) < 0.5 * s.stripe_period;
        item.pair.image.set(x, y, stripe ? s.stripe_color : s.color);
        item.pair.flow.at(x, y) = s.motion_at(x, y);
        item.masks[k].set(x, y, true);
        break;
      }
    }
  }
  return item;
}

std::vector<SyntheticItem> generate_synthetic(int corpus_size, int image_size, std::uint64_t seed,
                                              const SyntheticOptions& options) {
  if (corpus_size < 0) throw InvalidArgument("corpus_size must be >= 0");
  std::vector<SyntheticItem> items;
  items.reserve(static_cast<std::size_t>(corpus_size));
  for (int i = 0; i < corpus_size; ++i) {
    SyntheticItem item = render_scene(sample_scene(image_size, mix_seed(seed, static_cast<std::uint64_t>(i)), options));
    item.pair.id = "syn" + std::to_string(seed) + "-" + std::to_string(i);
    items.push_back(std::move(item));
  }
  return items;
}

// ---------------------------------------------------------------------------
// Manifests

std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest_invalid", "manifest '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_array()) throw FormatError("manifest_invalid", "manifest must be a JSON array");
  std::vector<ManifestEntry> entries;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("image_path") || !e.contains("flo_path") || !e.contains("id")) {
      throw FormatError("manifest_invalid", "manifest entries need image_path, flo_path and id");
    }
    ManifestEntry m;
    m.id = e.at("id").is_string() ? e.at("id").get<std::string>() : e.at("id").dump();
    m.image_path = e.at("image_path").get<std::string>();
    m.flo_path = e.at("flo_path").get<std::string>();
    m.mask_paths = e.value("mask_paths", std::vector<std::string>{});
    entries.push_back(std::move(m));
  }
  return entries;
}

void save_manifest(const std::string& path, std::span<const ManifestEntry> entries) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& e : entries) {
    nlohmann::json rec{{"id", e.id}, {"image_path", e.image_path}, {"flo_path", e.flo_path}};
    if (!e.mask_paths.empty()) rec["mask_paths"] = e.mask_paths;
    j.push_back(std::move(rec));
  }
  const std::string text = j.dump(2) + "\n";
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<ImageFlowPair> load_corpus(const std::string& manifest_path) {
  const fs::path base = fs::path(manifest_path).parent_path();
  auto resolve = [&](const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() ? path : base / path).string();
  };
  std::vector<ImageFlowPair> pairs;
  for (const ManifestEntry& e : load_manifest(manifest_path)) {
    ImageFlowPair pair;
    pair.id = e.id;
    try {
      pair.image = load_png(resolve(e.image_path));
      pair.flow = load_flo(resolve(e.flo_path));
    } catch (const Error& err) {
      throw Error(err.code(), "item '" + e.id + "': " + err.what());
    }
    if (pair.image.width() != pair.flow.width() || pair.image.height() != pair.flow.height()) {
      throw ShapeMismatch("item '" + e.id + "': image and flow dimensions differ");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void write_synthetic_corpus(const std::string& dir, std::span<const SyntheticItem> items) {
  const fs::path root(dir);
  for (const char* sub : {"images", "flows", "masks"}) fs::create_directories(root / sub);
  std::vector<ManifestEntry> entries;
  for (const SyntheticItem& item : items) {
    ManifestEntry e;
    e.id = item.pair.id;
    e.image_path = "images/" + item.pair.id + ".png";
    e.flo_path = "flows/" + item.pair.id + ".flo";
    save_png((root / e.image_path).string(), item.pair.image);
    save_flo((root / e.flo_path).string(), item.pair.flow);
    for (std::size_t k = 0; k < item.masks.size(); ++k) {
      e.mask_paths.push_back("masks/" + item.pair.id + "_" + std::to_string(k) + ".png");
      save_mask_png((root / e.mask_paths.back()).string(), item.masks[k]);
    }
    entries.push_back(std::move(e));
  }
  save_manifest((root / "manifest.json").string(), entries);
}

bool is_held_out(const std::string& id) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char ch : id) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return splitmix64(h) % 10 == 0;
}

}  // namespace cmp
