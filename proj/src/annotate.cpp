#include "cmp/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "cmp/error.hpp"

namespace cmp {

GuidanceSet arrows_to_guidance(std::span<const Arrow> arrows) {
  GuidanceSet set;
  for (const Arrow& a : arrows) set.points.push_back({a.x, a.y, a.u, a.v, GuidanceKind::User});
  return set;
}

PropagateResult propagate(const CmpModel& model, const RgbImage& image, std::span<const Arrow> arrows) {
  PropagateResult out;
  out.flow = predict_flow(model, image, arrows_to_guidance(arrows));
  out.color = flow_to_color(out.flow);
  return out;
}

RgbImage generate_frame(const CmpModel& model, const RgbImage& image, std::span<const Arrow> arrows) {
  return warp_image(image, predict_flow(model, image, arrows_to_guidance(arrows)));
}

void AnnotationParams::validate() const {
  if (directions < 4) throw InvalidArgument("directions must be >= 4");
  if (!(threshold > 0.0 && threshold <= 1.0)) throw InvalidArgument("threshold must be in (0, 1]");
  if (magnitude && !(*magnitude > 0.0f && std::isfinite(*magnitude))) {
    throw InvalidArgument("magnitude must be positive and finite");
  }
}

float AnnotationParams::resolved_magnitude(const CmpModel& model) const {
  return magnitude ? *magnitude : 0.75f * model.arch().quantization.boundary;
}

namespace {

void check_points(std::span<const Pixel> positives, std::span<const Pixel> negatives, int width, int height) {
  std::set<Pixel> seen;
  for (auto list : {positives, negatives}) {
    for (const Pixel& p : list) {
      if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
        throw InvalidArgument("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside " +
                              std::to_string(width) + "x" + std::to_string(height) + " image");
      }
      if (!seen.insert(p).second) {
        throw InvalidArgument("duplicate point at (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ")");
      }
    }
  }
}

}  // namespace

std::vector<float> annotation_scores(const CmpModel& model, const RgbImage& image, std::span<const Pixel> positives,
                                     std::span<const Pixel> negatives, const AnnotationParams& params) {
  params.validate();
  if (positives.empty()) throw InvalidArgument("annotation needs at least one positive point");
  const int w = image.width();
  const int h = image.height();
  check_points(positives, negatives, w, h);
  const float m = params.resolved_magnitude(model);

  std::vector<SparseGuidanceMap> maps;
  for (int j = 0; j < params.directions; ++j) {
    const double a = 2.0 * std::numbers::pi * j / params.directions;
    const float du = static_cast<float>(m * std::cos(a));
    const float dv = static_cast<float>(m * std::sin(a));
    GuidanceSet set;
    for (const Pixel& p : positives) set.points.push_back({p.x, p.y, du, dv, GuidanceKind::User});
    for (const Pixel& p : negatives) set.points.push_back({p.x, p.y, 0.0f, 0.0f, GuidanceKind::Negative});
    maps.push_back(rasterize_guidance(set, w, h));
  }
  std::vector<const RgbImage*> images(maps.size(), &image);
  std::vector<const SparseGuidanceMap*> map_ptrs;
  for (const auto& map : maps) map_ptrs.push_back(&map);
  const std::vector<FlowField> flows = predict_flow_batch(model, images, map_ptrs);

  std::vector<float> score(static_cast<std::size_t>(w) * h, 0.0f);
  for (const FlowField& f : flows) {
    const auto values = f.values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double mag = std::hypot(values[i].u, values[i].v);
      score[i] += static_cast<float>(std::clamp(mag / m, 0.0, 1.0));
    }
  }
  for (float& s : score) s /= static_cast<float>(params.directions);
  return score;
}

Mask mask_from_scores(std::span<const float> scores, int width, int height, std::span<const Pixel> positives,
                      std::span<const Pixel> negatives, double threshold) {
  if (scores.size() != static_cast<std::size_t>(width) * height) throw ShapeMismatch("score map size mismatch");
  Mask candidate(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) candidate.set(x, y, scores[static_cast<std::size_t>(y) * width + x] > threshold);
  }
  for (const Pixel& n : negatives) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = n.x + dx;
        const int y = n.y + dy;
        if (x >= 0 && y >= 0 && x < width && y < height) candidate.set(x, y, false);
      }
    }
  }
  // Flood fill from every positive seed through 8-connected candidate pixels.
  Mask out(width, height);
  std::vector<Pixel> stack;
  for (const Pixel& p : positives) {
    if (!candidate.at(p.x, p.y) || out.at(p.x, p.y)) continue;
    out.set(p.x, p.y, true);
    stack.push_back(p);
    while (!stack.empty()) {
      const Pixel q = stack.back();
      stack.pop_back();
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int x = q.x + dx;
          const int y = q.y + dy;
          if (x < 0 || y < 0 || x >= width || y >= height) continue;
          if (!candidate.at(x, y) || out.at(x, y)) continue;
          out.set(x, y, true);
          stack.push_back({x, y});
        }
      }
    }
  }
  return out;
}

Mask annotate(const CmpModel& model, const RgbImage& image, std::span<const Pixel> positives,
              std::span<const Pixel> negatives, const AnnotationParams& params) {
  const int w = image.width();
  const int h = image.height();
  Mask result;
  for (std::size_t k = 0; k <= negatives.size(); ++k) {
    const auto prefix = negatives.first(k);
    const auto scores = annotation_scores(model, image, positives, prefix, params);
    const Mask raw = mask_from_scores(scores, w, h, positives, prefix, params.threshold);
    if (k == 0) {
      result = raw;
      continue;
    }
    auto dst = result.data();
    const auto src = raw.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<std::uint8_t>(dst[i] & src[i]);
  }
  return result;
}

AnnotationSession SessionStore::put(const CmpModel& model, const std::string& id, std::optional<RgbImage> image,
                                    std::vector<Pixel> positives, std::vector<Pixel> negatives,
                                    const AnnotationParams& params) {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mutex_);
    auto& entry = slots_[id];
    if (!entry) entry = std::make_shared<Slot>();
    slot = entry;
  }
  std::lock_guard lock(slot->mutex);
  if (!image && !slot->ready) throw InvalidArgument("session '" + id + "' has no image yet");
  AnnotationSession next;
  next.id = id;
  next.image = image ? std::move(*image) : slot->session.image;
  next.positives = std::move(positives);
  next.negatives = std::move(negatives);
  next.params = params;
  if (next.positives.empty()) {
    check_points(next.positives, next.negatives, next.image.width(), next.image.height());
    next.params.validate();
    next.mask = Mask(next.image.width(), next.image.height());
  } else {
    next.mask = annotate(model, next.image, next.positives, next.negatives, next.params);
  }
  slot->session = next;
  slot->ready = true;
  return next;
}

std::optional<AnnotationSession> SessionStore::get(const std::string& id) const {
  std::shared_ptr<Slot> slot;
  {
    std::lock_guard lock(mutex_);
    auto it = slots_.find(id);
    if (it == slots_.end()) return std::nullopt;
    slot = it->second;
  }
  std::lock_guard lock(slot->mutex);
  if (!slot->ready) return std::nullopt;
  return slot->session;
}

std::size_t SessionStore::size() const {
  std::lock_guard lock(mutex_);
  return slots_.size();
}

}  // namespace cmp
