#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmp/flow.hpp"
#include "cmp/guidance.hpp"
#include "cmp/image.hpp"
#include "cmp/model.hpp"

namespace cmp {

// A user-drawn guidance arrow: the pixel at (x, y) moves by (u, v).
struct Arrow {
  int x = 0;
  int y = 0;
  float u = 0.0f;
  float v = 0.0f;

  bool operator==(const Arrow&) const = default;
};

GuidanceSet arrows_to_guidance(std::span<const Arrow> arrows);

struct PropagateResult {
  FlowField flow;
  RgbImage color;
};

// Out-of-bounds or duplicate arrows are rejected, never clamped.
PropagateResult propagate(const CmpModel& model, const RgbImage& image, std::span<const Arrow> arrows);

// Predicted flow, then a forward warp of the input image.
RgbImage generate_frame(const CmpModel& model, const RgbImage& image, std::span<const Arrow> arrows);

struct AnnotationParams {
  int directions = 8;                // D
  std::optional<float> magnitude;    // m; defaults to 0.75 * B
  double threshold = 0.4;            // theta

  void validate() const;
  float resolved_magnitude(const CmpModel& model) const;
};

// Mean over D directions of clip(|predicted flow| / m, 0, 1) per pixel, with
// positives pushed at magnitude m along each direction and negatives held at zero.
std::vector<float> annotation_scores(const CmpModel& model, const RgbImage& image, std::span<const Pixel> positives,
                                     std::span<const Pixel> negatives, const AnnotationParams& params);

// Threshold, drop the 3x3 neighborhood of every negative, keep 8-connected
// components that contain a positive point.
Mask mask_from_scores(std::span<const float> scores, int width, int height, std::span<const Pixel> positives,
                      std::span<const Pixel> negatives, double threshold);

// Intersection of the masks obtained with each prefix of `negatives`, so a
// newly appended negative can only shrink the result.
Mask annotate(const CmpModel& model, const RgbImage& image, std::span<const Pixel> positives,
              std::span<const Pixel> negatives, const AnnotationParams& params);

struct AnnotationSession {
  std::string id;
  RgbImage image;
  std::vector<Pixel> positives;
  std::vector<Pixel> negatives;
  AnnotationParams params;
  Mask mask;
};

// Server-side sessions keyed by id. A PUT replaces the full point state.
class SessionStore {
 public:
  // `image` may be omitted when the session already exists.
  AnnotationSession put(const CmpModel& model, const std::string& id, std::optional<RgbImage> image,
                        std::vector<Pixel> positives, std::vector<Pixel> negatives, const AnnotationParams& params);
  std::optional<AnnotationSession> get(const std::string& id) const;
  std::size_t size() const;

 private:
  struct Slot {
    std::mutex mutex;
    AnnotationSession session;
    bool ready = false;
  };

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot>> slots_;
};

}  // namespace cmp
