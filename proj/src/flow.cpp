#include "cmp/flow.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numbers>

namespace cmp {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

void validate_dims(int width, int height) {
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("flow dimensions must be positive, got " + std::to_string(width) + "x" +
                          std::to_string(height));
  }
}

struct BilinearTap {
  int i0, i1;
  double frac;
};

// Pixel-center aligned source coordinate for a destination index.
BilinearTap source_tap(int dst, int dst_size, int src_size) {
  double s = (dst + 0.5) * static_cast<double>(src_size) / dst_size - 0.5;
  s = std::clamp(s, 0.0, static_cast<double>(src_size - 1));
  const int i0 = static_cast<int>(std::floor(s));
  const int i1 = std::min(i0 + 1, src_size - 1);
  return {i0, i1, s - i0};
}

}  // namespace

FlowField::FlowField(int width, int height, FlowVector fill)
    : width_(width), height_(height), values_(static_cast<std::size_t>(width) * height, fill) {
  validate_dims(width, height);
}

FlowField::FlowField(int width, int height, std::vector<FlowVector> values)
    : width_(width), height_(height), values_(std::move(values)) {
  validate_dims(width, height);
  if (values_.size() != static_cast<std::size_t>(width) * height) {
    throw ShapeMismatch("flow value count does not match dimensions");
  }
}

bool FlowField::all_finite() const {
  return std::all_of(values_.begin(), values_.end(),
                     [](const FlowVector& f) { return std::isfinite(f.u) && std::isfinite(f.v); });
}

// ---------------------------------------------------------------------------

FloError::FloError(FloErrorKind kind, const std::string& message)
    : FormatError([kind] {
        switch (kind) {
          case FloErrorKind::BadMagic: return "flo_bad_magic";
          case FloErrorKind::Truncated: return "flo_truncated";
          case FloErrorKind::NonFinite: return "flo_non_finite";
          case FloErrorKind::BadDimensions: return "flo_bad_dimensions";
        }
        return "flo_error";
      }(), message),
      kind_(kind) {}

FlowField read_flo(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PIEH", 4) != 0) {
    throw FloError(FloErrorKind::BadMagic, "missing PIEH tag");
  }
  if (bytes.size() < 12) throw FloError(FloErrorKind::Truncated, "header truncated");
  const auto width = static_cast<std::int32_t>(get_u32(bytes, 4));
  const auto height = static_cast<std::int32_t>(get_u32(bytes, 8));
  if (width <= 0 || height <= 0) {
    throw FloError(FloErrorKind::BadDimensions,
                   "non-positive dimensions " + std::to_string(width) + "x" + std::to_string(height));
  }
  const std::uint64_t count = static_cast<std::uint64_t>(width) * static_cast<std::uint64_t>(height);
  const std::uint64_t expected = 12 + count * 8;
  if (bytes.size() < expected) {
    throw FloError(FloErrorKind::Truncated, "payload has " + std::to_string(bytes.size()) +
                                                " bytes, expected " + std::to_string(expected));
  }
  std::vector<FlowVector> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const float u = std::bit_cast<float>(get_u32(bytes, 12 + 8 * i));
    const float v = std::bit_cast<float>(get_u32(bytes, 16 + 8 * i));
    if (!std::isfinite(u) || !std::isfinite(v)) {
      throw FloError(FloErrorKind::NonFinite, "non-finite value at pixel " + std::to_string(i));
    }
    values[i] = {u, v};
  }
  return FlowField(width, height, std::move(values));
}

std::vector<std::uint8_t> write_flo(const FlowField& flow) {
  std::vector<std::uint8_t> out{'P', 'I', 'E', 'H'};
  out.reserve(12 + flow.size() * 8);
  put_u32(out, static_cast<std::uint32_t>(flow.width()));
  put_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (const FlowVector& f : flow.values()) {
    put_u32(out, std::bit_cast<std::uint32_t>(f.u));
    put_u32(out, std::bit_cast<std::uint32_t>(f.v));
  }
  return out;
}

FlowField load_flo(const std::string& path) { return read_flo(read_file(path)); }

void save_flo(const std::string& path, const FlowField& flow) { write_file(path, write_flo(flow)); }

// ---------------------------------------------------------------------------

void QuantizationSpec::validate() const {
  if (bins < 2) throw InvalidArgument("bin count must be >= 2");
  if (!(boundary > 0.0f) || !std::isfinite(boundary)) throw InvalidArgument("clip boundary must be > 0");
}

double bin_lower_edge(int bin, const QuantizationSpec& spec) {
  return -static_cast<double>(spec.boundary) + bin * spec.bin_width();
}

int quantize_component(double value, const QuantizationSpec& spec) {
  if (!std::isfinite(value)) throw InvalidArgument("cannot quantize a non-finite flow value");
  const double b = spec.boundary;
  const double clipped = std::clamp(value, -b, b);
  int k = static_cast<int>(std::floor((clipped + b) / spec.bin_width()));
  k = std::clamp(k, 0, spec.bins - 1);
  // Division rounding can land one bin off near an edge; settle against the
  // edges themselves so labels agree with interval membership exactly.
  while (k > 0 && clipped < bin_lower_edge(k, spec)) --k;
  while (k < spec.bins - 1 && clipped >= bin_lower_edge(k + 1, spec)) ++k;
  return k;
}

float bin_center(int bin, const QuantizationSpec& spec) {
  return static_cast<float>(-static_cast<double>(spec.boundary) + (bin + 0.5) * spec.bin_width());
}

QuantizedFlow quantize_flow(const FlowField& flow, const QuantizationSpec& spec) {
  spec.validate();
  QuantizedFlow q;
  q.width = flow.width();
  q.height = flow.height();
  q.spec = spec;
  q.xbins.resize(flow.size());
  q.ybins.resize(flow.size());
  const auto values = flow.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    q.xbins[i] = quantize_component(values[i].u, spec);
    q.ybins[i] = quantize_component(values[i].v, spec);
  }
  return q;
}

FlowField dequantize_flow(const QuantizedFlow& q) {
  q.spec.validate();
  FlowField out(q.width, q.height);
  auto values = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = {bin_center(q.xbins[i], q.spec), bin_center(q.ybins[i], q.spec)};
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<Rgb>& middlebury_color_wheel() {
  static const std::vector<Rgb> wheel = [] {
    constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
    std::vector<Rgb> w;
    auto ramp = [](int i, int n) { return static_cast<std::uint8_t>(255 * i / n); };
    for (int i = 0; i < RY; ++i) w.push_back({255, ramp(i, RY), 0});
    for (int i = 0; i < YG; ++i) w.push_back({static_cast<std::uint8_t>(255 - ramp(i, YG)), 255, 0});
    for (int i = 0; i < GC; ++i) w.push_back({0, 255, ramp(i, GC)});
    for (int i = 0; i < CB; ++i) w.push_back({0, static_cast<std::uint8_t>(255 - ramp(i, CB)), 255});
    for (int i = 0; i < BM; ++i) w.push_back({ramp(i, BM), 0, 255});
    for (int i = 0; i < MR; ++i) w.push_back({255, 0, static_cast<std::uint8_t>(255 - ramp(i, MR))});
    return w;
  }();
  return wheel;
}

Rgb flow_color(double u, double v) {
  const auto& wheel = middlebury_color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const double rad = std::hypot(u, v);
  const double a = std::atan2(-v, -u) / std::numbers::pi;
  const double fk = (a + 1.0) / 2.0 * (ncols - 1);
  const int k0 = std::clamp(static_cast<int>(fk), 0, ncols - 1);
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - k0;
  Rgb out{};
  for (int c = 0; c < 3; ++c) {
    const double c0 = wheel[k0][c] / 255.0;
    const double c1 = wheel[k1][c] / 255.0;
    double col = (1.0 - f) * c0 + f * c1;
    if (rad <= 1.0) {
      col = 1.0 - rad * (1.0 - col);
    } else {
      col *= 0.75;
    }
    out[c] = static_cast<std::uint8_t>(std::clamp(255.0 * col, 0.0, 255.0));
  }
  return out;
}

RgbImage flow_to_color(const FlowField& flow, std::optional<float> max_magnitude) {
  double norm = 0.0;
  if (max_magnitude) {
    norm = *max_magnitude;
  } else {
    for (const FlowVector& f : flow.values()) norm = std::max(norm, std::hypot<double>(f.u, f.v));
  }
  norm = std::max(norm, 1e-6);
  RgbImage out(flow.width(), flow.height());
  for (int y = 0; y < flow.height(); ++y) {
    for (int x = 0; x < flow.width(); ++x) {
      const FlowVector& f = flow.at(x, y);
      out.set(x, y, flow_color(f.u / norm, f.v / norm));
    }
  }
  return out;
}

RgbImage warp_image(const RgbImage& image, const FlowField& flow) {
  if (image.width() != flow.width() || image.height() != flow.height()) {
    throw ShapeMismatch("warp_image: image and flow dimensions differ");
  }
  const int w = image.width();
  const int h = image.height();
  std::vector<double> acc(static_cast<std::size_t>(w) * h * 3, 0.0);
  std::vector<double> weight(static_cast<std::size_t>(w) * h, 0.0);

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const FlowVector& f = flow.at(x, y);
      const double dx = x + static_cast<double>(f.u);
      const double dy = y + static_cast<double>(f.v);
      const int x0 = static_cast<int>(std::floor(dx));
      const int y0 = static_cast<int>(std::floor(dy));
      const double fx = dx - x0;
      const double fy = dy - y0;
      const double taps[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      for (int t = 0; t < 4; ++t) {
        const int tx = x0 + (t & 1);
        const int ty = y0 + (t >> 1);
        if (taps[t] == 0.0 || tx < 0 || ty < 0 || tx >= w || ty >= h) continue;
        const std::size_t di = static_cast<std::size_t>(ty) * w + tx;
        weight[di] += taps[t];
        for (int c = 0; c < 3; ++c) acc[di * 3 + c] += taps[t] * image.channel(x, y, c);
      }
    }
  }

  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t di = static_cast<std::size_t>(y) * w + x;
      Rgb c{};
      if (weight[di] > 1e-6) {
        for (int k = 0; k < 3; ++k) {
          c[k] = static_cast<std::uint8_t>(std::clamp(std::lround(acc[di * 3 + k] / weight[di]), 0L, 255L));
        }
      } else {
        // Disocclusion: sample the source where this pixel came from.
        const FlowVector& f = flow.at(x, y);
        const double sx = std::clamp(x - static_cast<double>(f.u), 0.0, w - 1.0);
        const double sy = std::clamp(y - static_cast<double>(f.v), 0.0, h - 1.0);
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const int x1 = std::min(x0 + 1, w - 1);
        const int y1 = std::min(y0 + 1, h - 1);
        const double fx = sx - x0;
        const double fy = sy - y0;
        for (int k = 0; k < 3; ++k) {
          const double val = (1 - fx) * (1 - fy) * image.channel(x0, y0, k) + fx * (1 - fy) * image.channel(x1, y0, k) +
                             (1 - fx) * fy * image.channel(x0, y1, k) + fx * fy * image.channel(x1, y1, k);
          c[k] = static_cast<std::uint8_t>(std::clamp(std::lround(val), 0L, 255L));
        }
      }
      out.set(x, y, c);
    }
  }
  return out;
}

FlowField resize_flow(const FlowField& flow, int new_width, int new_height) {
  validate_dims(new_width, new_height);
  const double su = static_cast<double>(new_width) / flow.width();
  const double sv = static_cast<double>(new_height) / flow.height();
  FlowField out(new_width, new_height);
  for (int y = 0; y < new_height; ++y) {
    const BilinearTap ty = source_tap(y, new_height, flow.height());
    for (int x = 0; x < new_width; ++x) {
      const BilinearTap tx = source_tap(x, new_width, flow.width());
      const FlowVector& a = flow.at(tx.i0, ty.i0);
      const FlowVector& b = flow.at(tx.i1, ty.i0);
      const FlowVector& c = flow.at(tx.i0, ty.i1);
      const FlowVector& d = flow.at(tx.i1, ty.i1);
      auto lerp2 = [&](double pa, double pb, double pc, double pd) {
        return (1 - ty.frac) * ((1 - tx.frac) * pa + tx.frac * pb) + ty.frac * ((1 - tx.frac) * pc + tx.frac * pd);
      };
      out.at(x, y) = {static_cast<float>(lerp2(a.u, b.u, c.u, d.u) * su),
                      static_cast<float>(lerp2(a.v, b.v, c.v, d.v) * sv)};
    }
  }
  return out;
}

FlowField crop_flow(const FlowField& flow, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || x0 + width > flow.width() || y0 + height > flow.height()) {
    throw InvalidArgument("crop window outside flow field");
  }
  FlowField out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) out.at(x, y) = flow.at(x0 + x, y0 + y);
  }
  return out;
}

double end_point_error(const FlowField& predicted, const FlowField& truth) {
  if (predicted.width() != truth.width() || predicted.height() != truth.height()) {
    throw ShapeMismatch("end_point_error: dimension mismatch");
  }
  double sum = 0.0;
  const auto p = predicted.values();
  const auto t = truth.values();
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::hypot<double>(p[i].u - t[i].u, p[i].v - t[i].v);
  return p.empty() ? 0.0 : sum / p.size();
}

}  // namespace cmp
