#include "cmp/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <set>

namespace cmp {

void SamplingConfig::validate() const {
  if (kernel < 3 || kernel % 2 == 0) throw InvalidArgument("NMS kernel must be odd and >= 3");
  if (grid_stride < 1) throw InvalidArgument("grid stride must be >= 1");
  if (!(edge_threshold > 0.0f)) throw InvalidArgument("edge threshold must be > 0");
  if (border_margin < 0) throw InvalidArgument("border margin must be >= 0");
}

SamplingConfig SamplingConfig::paper_scale() { return {81, 200, 1.0f, 16}; }

SamplingConfig SamplingConfig::desk_scale() { return {13, 33, 1.0f, 3}; }

std::string to_string(GuidanceKind kind) {
  switch (kind) {
    case GuidanceKind::Watershed: return "watershed";
    case GuidanceKind::Grid: return "grid";
    case GuidanceKind::User: return "user";
    case GuidanceKind::Negative: return "negative";
  }
  return "user";
}

GuidanceKind guidance_kind_from_string(const std::string& name) {
  if (name == "watershed") return GuidanceKind::Watershed;
  if (name == "grid") return GuidanceKind::Grid;
  if (name == "user") return GuidanceKind::User;
  if (name == "negative") return GuidanceKind::Negative;
  throw InvalidArgument("unknown guidance kind '" + name + "'");
}

std::size_t GuidanceSet::count(GuidanceKind kind) const {
  return static_cast<std::size_t>(
      std::count_if(points.begin(), points.end(), [kind](const GuidancePoint& p) { return p.kind == kind; }));
}

void GuidanceSet::validate(int width, int height) const {
  std::set<Pixel> seen;
  for (const GuidancePoint& p : points) {
    if (p.x < 0 || p.y < 0 || p.x >= width || p.y >= height) {
      throw InvalidArgument("guidance point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                            ") outside " + std::to_string(width) + "x" + std::to_string(height) + " image");
    }
    if (!std::isfinite(p.u) || !std::isfinite(p.v)) throw InvalidArgument("guidance vector must be finite");
    if (!seen.insert({p.x, p.y}).second) {
      throw InvalidArgument("duplicate guidance point at (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ")");
    }
  }
}

void to_json(nlohmann::json& j, const GuidancePoint& p) {
  j = nlohmann::json{{"x", p.x}, {"y", p.y}, {"u", p.u}, {"v", p.v}, {"kind", to_string(p.kind)}};
}

void from_json(const nlohmann::json& j, GuidancePoint& p) {
  p.x = j.at("x").get<int>();
  p.y = j.at("y").get<int>();
  p.u = j.at("u").get<float>();
  p.v = j.at("v").get<float>();
  p.kind = guidance_kind_from_string(j.value("kind", std::string("user")));
}

nlohmann::json guidance_to_json(const GuidanceSet& set) { return nlohmann::json(set.points); }

GuidanceSet guidance_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw InvalidArgument("guidance JSON must be an array");
  return GuidanceSet{j.get<std::vector<GuidancePoint>>()};
}

SparseGuidanceMap::SparseGuidanceMap(int w, int h)
    : width(w),
      height(h),
      u(static_cast<std::size_t>(w) * h, 0.0f),
      v(static_cast<std::size_t>(w) * h, 0.0f),
      mask(static_cast<std::size_t>(w) * h, 0.0f) {}

// ---------------------------------------------------------------------------

std::vector<float> motion_gradient_magnitude(const FlowField& flow) {
  const int w = flow.width();
  const int h = flow.height();
  std::vector<float> mag(static_cast<std::size_t>(w) * h);
  auto sample = [&](int x, int y) -> const FlowVector& {
    return flow.at(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double gxu = 0, gyu = 0, gxv = 0, gyv = 0;
      for (int d = -1; d <= 1; ++d) {
        const double wt = d == 0 ? 2.0 : 1.0;
        const FlowVector& r = sample(x + 1, y + d);
        const FlowVector& l = sample(x - 1, y + d);
        const FlowVector& b = sample(x + d, y + 1);
        const FlowVector& t = sample(x + d, y - 1);
        gxu += wt * (r.u - l.u);
        gxv += wt * (r.v - l.v);
        gyu += wt * (b.u - t.u);
        gyv += wt * (b.v - t.v);
      }
      mag[static_cast<std::size_t>(y) * w + x] =
          static_cast<float>(std::sqrt(gxu * gxu + gyu * gyu + gxv * gxv + gyv * gyv) / 8.0);
    }
  }
  return mag;
}

Mask motion_edges(const FlowField& flow, float edge_threshold) {
  const auto mag = motion_gradient_magnitude(flow);
  Mask edges(flow.width(), flow.height());
  for (std::size_t i = 0; i < mag.size(); ++i) edges.data()[i] = mag[i] > edge_threshold ? 1 : 0;
  return edges;
}

namespace {

// One-dimensional squared distance transform (lower envelope of parabolas).
// Infinite inputs mark positions without a source.
void distance_transform_1d(const std::vector<double>& f, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<int> v;
  std::vector<double> z;
  v.reserve(n);
  z.reserve(n + 1);
  for (int q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    while (!v.empty()) {
      const int p = v.back();
      const double s = ((f[q] + static_cast<double>(q) * q) - (f[p] + static_cast<double>(p) * p)) / (2.0 * (q - p));
      if (s <= z.back()) {
        v.pop_back();
        z.pop_back();
      } else {
        z.push_back(s);
        v.push_back(q);
        break;
      }
    }
    if (v.empty()) {
      v.push_back(q);
      z.assign(1, -inf);
    }
  }
  d.assign(n, inf);
  if (v.empty()) return;
  z.push_back(inf);
  std::size_t k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double diff = q - v[k];
    d[q] = diff * diff + f[v[k]];
  }
}

}  // namespace

WatershedMap watershed_distance_map(const Mask& edges) {
  const int w = edges.width();
  const int h = edges.height();
  if (w <= 0 || h <= 0) throw InvalidArgument("edge mask must be non-empty");
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> sq(static_cast<std::size_t>(w) * h);
  for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = edges.data()[i] ? 0.0 : inf;

  std::vector<double> f, d;
  f.resize(h);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) f[y] = sq[static_cast<std::size_t>(y) * w + x];
    distance_transform_1d(f, d);
    for (int y = 0; y < h; ++y) sq[static_cast<std::size_t>(y) * w + x] = d[y];
  }
  f.resize(w);
  for (int y = 0; y < h; ++y) {
    std::copy_n(sq.begin() + static_cast<std::ptrdiff_t>(y) * w, w, f.begin());
    distance_transform_1d(f, d);
    std::copy(d.begin(), d.end(), sq.begin() + static_cast<std::ptrdiff_t>(y) * w);
  }

  WatershedMap map{w, h, std::vector<float>(sq.size())};
  const float diagonal = static_cast<float>(std::hypot(static_cast<double>(w), static_cast<double>(h)));
  for (std::size_t i = 0; i < sq.size(); ++i) {
    map.distance[i] = sq[i] == inf ? diagonal : static_cast<float>(std::sqrt(sq[i]));
  }
  return map;
}

namespace {

// Sliding-window maximum along one axis, window clipped at the borders.
void sliding_max(const float* in, float* out, int n, int stride, int half) {
  std::deque<int> window;
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int hi = std::min(n - 1, i + half);
    for (; next <= hi; ++next) {
      while (!window.empty() && in[window.back() * stride] <= in[next * stride]) window.pop_back();
      window.push_back(next);
    }
    while (window.front() < i - half) window.pop_front();
    out[i * stride] = in[window.front() * stride];
  }
}

}  // namespace

std::vector<Pixel> nms_keypoints(const WatershedMap& map, int kernel, int border_margin) {
  if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("NMS kernel must be odd");
  const int w = map.width;
  const int h = map.height;
  const int half = kernel / 2;

  std::vector<float> rowmax(map.distance.size());
  std::vector<float> winmax(map.distance.size());
  for (int y = 0; y < h; ++y) {
    sliding_max(map.distance.data() + static_cast<std::ptrdiff_t>(y) * w, rowmax.data() + static_cast<std::ptrdiff_t>(y) * w, w, 1, half);
  }
  for (int x = 0; x < w; ++x) sliding_max(rowmax.data() + x, winmax.data() + x, h, w, half);

  std::vector<Pixel> keypoints;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float value = map.at(x, y);
      if (!(value > 0.0f) || value < winmax[static_cast<std::size_t>(y) * w + x]) continue;
      // An earlier pixel of equal value inside the window takes precedence.
      bool first = true;
      for (int yy = std::max(0, y - half); yy <= y && first; ++yy) {
        const int x_end = yy == y ? x - 1 : std::min(w - 1, x + half);
        for (int xx = std::max(0, x - half); xx <= x_end; ++xx) {
          if (map.at(xx, yy) == value) {
            first = false;
            break;
          }
        }
      }
      if (!first) continue;
      if (x < border_margin || y < border_margin || x >= w - border_margin || y >= h - border_margin) continue;
      keypoints.push_back({x, y});
    }
  }
  return keypoints;
}

std::vector<Pixel> grid_points(int width, int height, int stride) {
  if (stride < 1) throw InvalidArgument("grid stride must be >= 1");
  std::vector<Pixel> points;
  const int offset = stride / 2;
  for (int y = offset; y < height; y += stride) {
    for (int x = offset; x < width; x += stride) points.push_back({x, y});
  }
  return points;
}

GuidanceSet sample_guidance(const FlowField& flow, const SamplingConfig& cfg) {
  cfg.validate();
  const Mask edges = motion_edges(flow, cfg.edge_threshold);
  GuidanceSet set;
  std::set<Pixel> taken;
  // Without motion edges the distance map is flat and carries no structure.
  const std::vector<Pixel> keypoints =
      edges.count() == 0 ? std::vector<Pixel>{} : nms_keypoints(watershed_distance_map(edges), cfg.kernel, cfg.border_margin);
  for (const Pixel& p : keypoints) {
    const FlowVector& f = flow.at(p.x, p.y);
    set.points.push_back({p.x, p.y, f.u, f.v, GuidanceKind::Watershed});
    taken.insert(p);
  }
  for (const Pixel& p : grid_points(flow.width(), flow.height(), cfg.grid_stride)) {
    if (taken.contains(p)) continue;
    const FlowVector& f = flow.at(p.x, p.y);
    set.points.push_back({p.x, p.y, f.u, f.v, GuidanceKind::Grid});
  }
  return set;
}

SparseGuidanceMap rasterize_guidance(const GuidanceSet& set, int width, int height) {
  set.validate(width, height);
  SparseGuidanceMap map(width, height);
  for (const GuidancePoint& p : set.points) {
    const std::size_t i = static_cast<std::size_t>(p.y) * width + p.x;
    map.u[i] = p.u;
    map.v[i] = p.v;
    map.mask[i] = 1.0f;
  }
  return map;
}

}  // namespace cmp
