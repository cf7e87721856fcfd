#include "cmp/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numbers>
#include <random>
#include <type_traits>

namespace cmp {

using nn::Shape4;
using nn::Tensor4;

// ---------------------------------------------------------------------------
// Architecture config

void CmpArchConfig::validate() const {
  if (encoder_stride < 1 || !std::has_single_bit(static_cast<unsigned>(encoder_stride))) {
    throw InvalidArgument("encoder_stride must be a power of two");
  }
  if (encoder_channels.empty()) throw InvalidArgument("encoder_channels must not be empty");
  if (encoder_pool_count() > static_cast<int>(encoder_channels.size())) {
    throw InvalidArgument("encoder needs at least log2(encoder_stride) stages");
  }
  for (int c : encoder_channels) {
    if (c < 1) throw InvalidArgument("encoder channel counts must be positive");
  }
  if (encoder_out_channels < 1 || motion_channels < 1 || fusion_channels < 1) {
    throw InvalidArgument("channel counts must be positive");
  }
  if (propagation_strides.empty()) throw InvalidArgument("propagation_strides must not be empty");
  for (std::size_t i = 0; i < propagation_strides.size(); ++i) {
    const int s = propagation_strides[i];
    if (s != 1 && s != 2 && s != 4 && s != 8) throw InvalidArgument("propagation strides must come from {1, 2, 4, 8}");
    if (i > 0 && s <= propagation_strides[i - 1]) throw InvalidArgument("propagation strides must be strictly increasing");
  }
  quantization.validate();
}

int CmpArchConfig::pad_multiple() const { return encoder_stride * propagation_strides.back(); }

int CmpArchConfig::encoder_pool_count() const { return std::countr_zero(static_cast<unsigned>(encoder_stride)); }

std::pair<int, int> CmpArchConfig::motion_pooling() const {
  const int bits = encoder_pool_count();
  const int first = 1 << ((bits + 1) / 2);
  return {first, encoder_stride / first};
}

CmpArchConfig CmpArchConfig::desk() { return CmpArchConfig{}; }

void to_json(nlohmann::json& j, const CmpArchConfig& a) {
  j = nlohmann::json{{"encoder_stride", a.encoder_stride},
                     {"encoder_channels", a.encoder_channels},
                     {"encoder_out_channels", a.encoder_out_channels},
                     {"motion_channels", a.motion_channels},
                     {"propagation_strides", a.propagation_strides},
                     {"fusion_channels", a.fusion_channels},
                     {"bins", a.quantization.bins},
                     {"boundary", a.quantization.boundary}};
}

void from_json(const nlohmann::json& j, CmpArchConfig& a) {
  const CmpArchConfig d;
  a.encoder_stride = j.value("encoder_stride", d.encoder_stride);
  a.encoder_channels = j.value("encoder_channels", d.encoder_channels);
  a.encoder_out_channels = j.value("encoder_out_channels", d.encoder_out_channels);
  a.motion_channels = j.value("motion_channels", d.motion_channels);
  a.propagation_strides = j.value("propagation_strides", d.propagation_strides);
  a.fusion_channels = j.value("fusion_channels", d.fusion_channels);
  a.quantization.bins = j.value("bins", d.quantization.bins);
  a.quantization.boundary = j.value("boundary", d.quantization.boundary);
}

// ---------------------------------------------------------------------------
// Building blocks

namespace {

using detail::BlockCache;
using detail::ConvBnRelu;
using detail::ConvLayer;
using detail::PoolCache;

class HeNormal {
 public:
  explicit HeNormal(std::uint64_t seed) : rng_(seed) {}

  template <class T>
  void fill(Tensor4<T>& w) {
    const double fan_in = static_cast<double>(w.c()) * w.h() * w.w();
    const double std = std::sqrt(2.0 / fan_in);
    for (T& v : w.data()) v = static_cast<T>(std * normal());
  }

 private:
  double uniform() { return (static_cast<double>(rng_() >> 11) + 0.5) * 0x1.0p-53; }
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double t = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  std::mt19937_64 rng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <class T>
ConvLayer<T> make_conv(const std::string& name, int cin, int cout, int kernel, bool bias) {
  ConvLayer<T> c;
  c.weight = nn::Parameter<T>(name + ".weight", {cout, cin, kernel, kernel});
  c.has_bias = bias;
  if (bias) c.bias = nn::Parameter<T>(name + ".bias", {1, cout, 1, 1});
  c.geometry = {1, kernel / 2, 1};
  return c;
}

template <class T>
ConvBnRelu<T> make_block(const std::string& name, int cin, int cout) {
  ConvBnRelu<T> b;
  b.name = name;
  b.conv = make_conv<T>(name + ".conv", cin, cout, 3, false);
  b.gamma = nn::Parameter<T>(name + ".bn.gamma", {1, cout, 1, 1});
  b.beta = nn::Parameter<T>(name + ".bn.beta", {1, cout, 1, 1});
  b.gamma.value.fill(T{1});
  b.running_mean = Tensor4<T>({1, cout, 1, 1}, T{0});
  b.running_var = Tensor4<T>({1, cout, 1, 1}, T{1});
  return b;
}

template <class T>
Tensor4<T> conv_apply(const ConvLayer<T>& c, const Tensor4<T>& x) {
  return nn::conv2d_forward(x, c.weight.value, c.has_bias ? &c.bias.value : nullptr, c.geometry);
}

template <class T>
Tensor4<T> block_eval(const ConvBnRelu<T>& b, const Tensor4<T>& x) {
  Tensor4<T> y = conv_apply(b.conv, x);
  y = nn::batchnorm_forward_eval(y, b.gamma.value, b.beta.value, b.running_mean, b.running_var);
  return nn::relu_forward(y);
}

template <class T>
Tensor4<T> block_train(ConvBnRelu<T>& b, const Tensor4<T>& x, BlockCache<T>& cache) {
  cache.input = x;
  Tensor4<T> y = conv_apply(b.conv, x);
  y = nn::batchnorm_forward_train(y, b.gamma.value, b.beta.value, b.running_mean, b.running_var, cache.bn);
  cache.output = nn::relu_forward(y);
  return cache.output;
}

template <class T>
Tensor4<T> block_backward(ConvBnRelu<T>& b, const BlockCache<T>& cache, const Tensor4<T>& dy, bool need_dx) {
  Tensor4<T> d = nn::relu_backward(cache.output, dy);
  d = nn::batchnorm_backward(cache.bn, b.gamma.value, d, b.gamma.grad, b.beta.grad);
  Tensor4<T> dx;
  nn::conv2d_backward(cache.input, b.conv.weight.value, d, b.conv.geometry, need_dx ? &dx : nullptr, b.conv.weight.grad,
                      static_cast<Tensor4<T>*>(nullptr));
  return dx;
}

int round_up(int v, int m) { return (v + m - 1) / m * m; }

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
CmpNet<T>::CmpNet(const CmpArchConfig& arch, std::uint64_t seed) : arch_(arch) {
  arch_.validate();
  int cin = 3;
  for (std::size_t i = 0; i < arch_.encoder_channels.size(); ++i) {
    encoder_.push_back(make_block<T>("encoder." + std::to_string(i), cin, arch_.encoder_channels[i]));
    cin = arch_.encoder_channels[i];
  }
  encoder_top_ = make_conv<T>("encoder.top", cin, arch_.encoder_out_channels, 3, true);
  motion_first_ = make_block<T>("motion.0", 3, arch_.motion_channels);
  motion_second_ = make_block<T>("motion.1", arch_.motion_channels, arch_.motion_channels);
  const int joint = arch_.encoder_out_channels + arch_.motion_channels;
  for (int s : arch_.propagation_strides) {
    detail::Branch<T> b;
    b.stride = s;
    const std::string name = "decoder.branch_s" + std::to_string(s);
    b.first = make_block<T>(name + ".0", joint, joint);
    b.second = make_block<T>(name + ".1", joint, joint);
    branches_.push_back(std::move(b));
  }
  fusion_ = make_block<T>("decoder.fusion", joint * static_cast<int>(branches_.size()), arch_.fusion_channels);
  classifier_x_ = make_conv<T>("classifier_x", arch_.fusion_channels, arch_.quantization.bins, 1, true);
  classifier_y_ = make_conv<T>("classifier_y", arch_.fusion_channels, arch_.quantization.bins, 1, true);

  HeNormal init(seed);
  for (nn::Parameter<T>* p : parameters()) {
    if (p->name.ends_with(".weight")) init.fill(p->value);
  }
}

template <class T>
std::vector<detail::ConvBnRelu<T>*> CmpNet<T>::blocks() {
  std::vector<detail::ConvBnRelu<T>*> out;
  for (auto& b : encoder_) out.push_back(&b);
  out.push_back(&motion_first_);
  out.push_back(&motion_second_);
  for (auto& br : branches_) {
    out.push_back(&br.first);
    out.push_back(&br.second);
  }
  out.push_back(&fusion_);
  return out;
}

template <class T>
std::vector<const detail::ConvBnRelu<T>*> CmpNet<T>::blocks() const {
  auto mutable_blocks = const_cast<CmpNet*>(this)->blocks();
  return {mutable_blocks.begin(), mutable_blocks.end()};
}

template <class T>
std::vector<nn::Parameter<T>*> CmpNet<T>::parameters() {
  std::vector<nn::Parameter<T>*> out;
  auto add_conv = [&](detail::ConvLayer<T>& c) {
    out.push_back(&c.weight);
    if (c.has_bias) out.push_back(&c.bias);
  };
  auto add_block = [&](detail::ConvBnRelu<T>& b) {
    add_conv(b.conv);
    out.push_back(&b.gamma);
    out.push_back(&b.beta);
  };
  for (auto& b : encoder_) add_block(b);
  add_conv(encoder_top_);
  add_block(motion_first_);
  add_block(motion_second_);
  for (auto& br : branches_) {
    add_block(br.first);
    add_block(br.second);
  }
  add_block(fusion_);
  add_conv(classifier_x_);
  add_conv(classifier_y_);
  return out;
}

template <class T>
std::vector<const nn::Parameter<T>*> CmpNet<T>::parameters() const {
  auto params = const_cast<CmpNet*>(this)->parameters();
  return {params.begin(), params.end()};
}

template <class T>
std::size_t CmpNet<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template <class T>
void CmpNet<T>::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

template <class T>
template <class Net>
CmpPrediction<T> CmpNet<T>::run(Net& net, const Tensor4<T>& image, const Tensor4<T>& guidance, ForwardState<T>* state) {
  constexpr bool train = !std::is_const_v<Net>;
  const CmpArchConfig& arch = net.arch_;
  if (image.c() != 3 || guidance.c() != 3) throw ShapeMismatch("forward: image and guidance need 3 channels");
  if (image.n() != guidance.n() || image.h() != guidance.h() || image.w() != guidance.w()) {
    throw ShapeMismatch("forward: image " + image.shape().str() + " and guidance " + guidance.shape().str() +
                        " differ");
  }
  const int height = image.h();
  const int width = image.w();
  const int multiple = arch.pad_multiple();
  const int ph = round_up(height, multiple);
  const int pw = round_up(width, multiple);

  auto apply = [&](auto& block, const Tensor4<T>& in, BlockCache<T>* cache) {
    if constexpr (train) {
      return block_train(block, in, *cache);
    } else {
      return block_eval(block, in);
    }
  };
  auto pool = [&](const Tensor4<T>& in, int s, PoolCache<T>* cache) {
    if constexpr (train) {
      cache->input_shape = in.shape();
      return nn::maxpool_forward(in, s, &cache->argmax);
    } else {
      return nn::maxpool_forward(in, s, nullptr);
    }
  };
  if constexpr (train) {
    state->height = height;
    state->width = width;
    state->padded_shape = {image.n(), 3, ph, pw};
    state->encoder.assign(net.encoder_.size(), {});
    state->encoder_pools.assign(net.encoder_.size(), {});
    state->branch_pools.assign(net.branches_.size(), {});
    state->branch_first.assign(net.branches_.size(), {});
    state->branch_second.assign(net.branches_.size(), {});
  }

  Tensor4<T> x = nn::pad_spatial(image, ph, pw);
  const int pools = arch.encoder_pool_count();
  for (std::size_t i = 0; i < net.encoder_.size(); ++i) {
    x = apply(net.encoder_[i], x, train ? &state->encoder[i] : nullptr);
    if (static_cast<int>(i) < pools) x = pool(x, 2, train ? &state->encoder_pools[i] : nullptr);
  }
  if constexpr (train) state->top_input = x;
  const Tensor4<T> features = conv_apply(net.encoder_top_, x);

  const auto [p1, p2] = arch.motion_pooling();
  Tensor4<T> g = nn::pad_spatial(guidance, ph, pw);
  g = apply(net.motion_first_, g, train ? &state->motion_first : nullptr);
  g = pool(g, p1, train ? &state->motion_pool_first : nullptr);
  g = apply(net.motion_second_, g, train ? &state->motion_second : nullptr);
  g = pool(g, p2, train ? &state->motion_pool_second : nullptr);

  const Tensor4<T>* joint_parts[] = {&features, &g};
  const Tensor4<T> joint = nn::concat_channels<T>(joint_parts);

  std::vector<Tensor4<T>> upsampled;
  for (std::size_t b = 0; b < net.branches_.size(); ++b) {
    auto& branch = net.branches_[b];
    Tensor4<T> p = pool(joint, branch.stride, train ? &state->branch_pools[b] : nullptr);
    p = apply(branch.first, p, train ? &state->branch_first[b] : nullptr);
    p = apply(branch.second, p, train ? &state->branch_second[b] : nullptr);
    upsampled.push_back(nn::upsample_bilinear_forward(p, branch.stride));
  }
  std::vector<const Tensor4<T>*> up_parts;
  for (const auto& u : upsampled) up_parts.push_back(&u);
  const Tensor4<T> fused = apply(net.fusion_, nn::concat_channels<T>(up_parts), train ? &state->fusion : nullptr);

  Tensor4<T> lx = conv_apply(net.classifier_x_, fused);
  Tensor4<T> ly = conv_apply(net.classifier_y_, fused);
  if constexpr (train) state->class_logits_shape = lx.shape();
  lx = nn::crop_spatial(nn::upsample_bilinear_forward(lx, arch.encoder_stride), height, width);
  ly = nn::crop_spatial(nn::upsample_bilinear_forward(ly, arch.encoder_stride), height, width);
  return {std::move(lx), std::move(ly)};
}

template <class T>
CmpPrediction<T> CmpNet<T>::forward(const Tensor4<T>& image, const Tensor4<T>& guidance) const {
  return run(*this, image, guidance, nullptr);
}

template <class T>
CmpPrediction<T> CmpNet<T>::forward_train(const Tensor4<T>& image, const Tensor4<T>& guidance, ForwardState<T>& state) {
  return run(*this, image, guidance, &state);
}

template <class T>
void CmpNet<T>::backward(const ForwardState<T>& state, const Tensor4<T>& grad_x, const Tensor4<T>& grad_y) {
  const Shape4 logits_shape = state.class_logits_shape;
  auto logits_grad = [&](const Tensor4<T>& g) {
    nn::require_shape(g.shape(), {logits_shape.n, logits_shape.c, state.height, state.width}, "logit gradient");
    const Tensor4<T> padded = nn::pad_spatial(g, state.padded_shape.h, state.padded_shape.w);
    return nn::upsample_bilinear_backward(padded, arch_.encoder_stride, logits_shape);
  };
  const Tensor4<T>& fused = state.fusion.output;
  Tensor4<T> dfused;
  Tensor4<T> dfused_y;
  nn::conv2d_backward(fused, classifier_x_.weight.value, logits_grad(grad_x), classifier_x_.geometry, &dfused,
                      classifier_x_.weight.grad, &classifier_x_.bias.grad);
  nn::conv2d_backward(fused, classifier_y_.weight.value, logits_grad(grad_y), classifier_y_.geometry, &dfused_y,
                      classifier_y_.weight.grad, &classifier_y_.bias.grad);
  nn::add_inplace(dfused, dfused_y);

  const Tensor4<T> dcat = block_backward(fusion_, state.fusion, dfused, true);
  const int joint_channels = arch_.encoder_out_channels + arch_.motion_channels;
  const std::vector<int> branch_channels(branches_.size(), joint_channels);
  const auto dbranches = nn::split_channels(dcat, branch_channels);

  Tensor4<T> djoint;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    auto& branch = branches_[b];
    Tensor4<T> d = nn::upsample_bilinear_backward(dbranches[b], branch.stride, state.branch_second[b].output.shape());
    d = block_backward(branch.second, state.branch_second[b], d, true);
    d = block_backward(branch.first, state.branch_first[b], d, true);
    d = nn::maxpool_backward(d, state.branch_pools[b].argmax, state.branch_pools[b].input_shape);
    if (djoint.empty()) {
      djoint = std::move(d);
    } else {
      nn::add_inplace(djoint, d);
    }
  }

  const int split[] = {arch_.encoder_out_channels, arch_.motion_channels};
  const auto djoint_parts = nn::split_channels(djoint, split);

  Tensor4<T> dg = nn::maxpool_backward(djoint_parts[1], state.motion_pool_second.argmax,
                                       state.motion_pool_second.input_shape);
  dg = block_backward(motion_second_, state.motion_second, dg, true);
  dg = nn::maxpool_backward(dg, state.motion_pool_first.argmax, state.motion_pool_first.input_shape);
  block_backward(motion_first_, state.motion_first, dg, false);

  Tensor4<T> dx;
  nn::conv2d_backward(state.top_input, encoder_top_.weight.value, djoint_parts[0], encoder_top_.geometry, &dx,
                      encoder_top_.weight.grad, &encoder_top_.bias.grad);
  const int pools = arch_.encoder_pool_count();
  for (int i = static_cast<int>(encoder_.size()) - 1; i >= 0; --i) {
    if (i < pools) dx = nn::maxpool_backward(dx, state.encoder_pools[i].argmax, state.encoder_pools[i].input_shape);
    dx = block_backward(encoder_[i], state.encoder[i], dx, i > 0);
  }
}

template <class T>
std::vector<nn::NamedTensor> CmpNet<T>::export_tensors(bool include_momentum) const {
  auto pack = [](const std::string& name, const Tensor4<T>& t) {
    nn::NamedTensor out{name, {t.n(), t.c(), t.h(), t.w()}, {}};
    out.values.reserve(t.size());
    for (T v : t.data()) out.values.push_back(static_cast<float>(v));
    return out;
  };
  std::vector<nn::NamedTensor> out;
  for (const auto* p : parameters()) out.push_back(pack(p->name, p->value));
  for (const auto* b : blocks()) {
    out.push_back(pack(b->name + ".bn.running_mean", b->running_mean));
    out.push_back(pack(b->name + ".bn.running_var", b->running_var));
  }
  if (include_momentum) {
    for (const auto* p : parameters()) out.push_back(pack("momentum/" + p->name, p->momentum));
  }
  return out;
}

template <class T>
void CmpNet<T>::import_tensors(std::span<const nn::NamedTensor> tensors) {
  std::map<std::string, const nn::NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;
  auto unpack = [&](const std::string& name, Tensor4<T>& dst, bool required) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      if (required) throw FormatError("checkpoint_missing_tensor", "checkpoint lacks tensor '" + name + "'");
      dst.fill(T{});
      return;
    }
    const nn::NamedTensor& t = *it->second;
    const std::vector<std::int32_t> want{dst.n(), dst.c(), dst.h(), dst.w()};
    if (t.dims != want) throw ShapeMismatch("checkpoint tensor '" + name + "' has incompatible dims");
    for (std::size_t i = 0; i < t.values.size(); ++i) dst.data()[i] = static_cast<T>(t.values[i]);
  };
  for (auto* p : parameters()) {
    unpack(p->name, p->value, true);
    unpack("momentum/" + p->name, p->momentum, false);
  }
  for (auto* b : blocks()) {
    unpack(b->name + ".bn.running_mean", b->running_mean, true);
    unpack(b->name + ".bn.running_var", b->running_var, true);
  }
}

template class CmpNet<float>;
template class CmpNet<double>;

// ---------------------------------------------------------------------------

template <class T>
Tensor4<T> images_to_tensor(std::span<const RgbImage* const> images) {
  if (images.empty()) throw InvalidArgument("images_to_tensor: empty batch");
  const int h = images.front()->height();
  const int w = images.front()->width();
  Tensor4<T> out({static_cast<int>(images.size()), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const RgbImage& img = *images[n];
    if (img.width() != w || img.height() != h) throw ShapeMismatch("images_to_tensor: batch sizes differ");
    for (int c = 0; c < 3; ++c) {
      T* plane = out.plane(static_cast<int>(n), c);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          plane[static_cast<std::size_t>(y) * w + x] = static_cast<T>((img.channel(x, y, c) / 255.0 - 0.5) / 0.25);
        }
      }
    }
  }
  return out;
}

template <class T>
Tensor4<T> guidance_to_tensor(std::span<const SparseGuidanceMap* const> maps, float boundary) {
  if (maps.empty()) throw InvalidArgument("guidance_to_tensor: empty batch");
  const int h = maps.front()->height;
  const int w = maps.front()->width;
  Tensor4<T> out({static_cast<int>(maps.size()), 3, h, w});
  const double inv_b = 1.0 / boundary;
  for (std::size_t n = 0; n < maps.size(); ++n) {
    const SparseGuidanceMap& m = *maps[n];
    if (m.width != w || m.height != h) throw ShapeMismatch("guidance_to_tensor: batch sizes differ");
    T* pu = out.plane(static_cast<int>(n), 0);
    T* pv = out.plane(static_cast<int>(n), 1);
    T* pm = out.plane(static_cast<int>(n), 2);
    for (std::size_t i = 0; i < m.u.size(); ++i) {
      pu[i] = static_cast<T>(m.u[i] * inv_b);
      pv[i] = static_cast<T>(m.v[i] * inv_b);
      pm[i] = static_cast<T>(m.mask[i]);
    }
  }
  return out;
}

template <class T>
CmpLoss<T> cmp_loss(const CmpPrediction<T>& pred, std::span<const QuantizedFlow> targets) {
  const Shape4 s = pred.logits_x.shape();
  nn::require_shape(pred.logits_y.shape(), s, "logits_y");
  if (targets.size() != static_cast<std::size_t>(s.n)) throw ShapeMismatch("cmp_loss: target count differs from batch");
  std::vector<int> xs, ys;
  xs.reserve(static_cast<std::size_t>(s.n) * s.plane());
  ys.reserve(xs.capacity());
  for (const QuantizedFlow& q : targets) {
    if (q.spec.bins != s.c) {
      throw InvalidArgument("cmp_loss: logits have " + std::to_string(s.c) + " bins, target has " +
                            std::to_string(q.spec.bins));
    }
    if (q.width != s.w || q.height != s.h) throw ShapeMismatch("cmp_loss: target dims differ from logits");
    xs.insert(xs.end(), q.xbins.begin(), q.xbins.end());
    ys.insert(ys.end(), q.ybins.begin(), q.ybins.end());
  }
  auto lx = nn::softmax_ce_map(pred.logits_x, xs);
  auto ly = nn::softmax_ce_map(pred.logits_y, ys);
  CmpLoss<T> out;
  out.x = lx.loss;
  out.y = ly.loss;
  out.total = out.x + out.y;
  out.grad_x = std::move(lx.grad);
  out.grad_y = std::move(ly.grad);
  return out;
}

template <class T>
std::vector<QuantizedFlow> prediction_bins(const CmpPrediction<T>& pred, const QuantizationSpec& spec) {
  const Shape4 s = pred.logits_x.shape();
  if (s.c != spec.bins) throw InvalidArgument("prediction_bins: bin count mismatch");
  const auto bx = nn::argmax_channels(pred.logits_x);
  const auto by = nn::argmax_channels(pred.logits_y);
  std::vector<QuantizedFlow> out;
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.n; ++n) {
    QuantizedFlow q;
    q.width = s.w;
    q.height = s.h;
    q.spec = spec;
    q.xbins.assign(bx.begin() + static_cast<std::ptrdiff_t>(n * plane), bx.begin() + static_cast<std::ptrdiff_t>((n + 1) * plane));
    q.ybins.assign(by.begin() + static_cast<std::ptrdiff_t>(n * plane), by.begin() + static_cast<std::ptrdiff_t>((n + 1) * plane));
    out.push_back(std::move(q));
  }
  return out;
}

#define CMP_INSTANTIATE_MODEL_IO(T)                                                                 \
  template Tensor4<T> images_to_tensor(std::span<const RgbImage* const>);                          \
  template Tensor4<T> guidance_to_tensor(std::span<const SparseGuidanceMap* const>, float);        \
  template CmpLoss<T> cmp_loss(const CmpPrediction<T>&, std::span<const QuantizedFlow>);           \
  template std::vector<QuantizedFlow> prediction_bins(const CmpPrediction<T>&, const QuantizationSpec&);

CMP_INSTANTIATE_MODEL_IO(float)
CMP_INSTANTIATE_MODEL_IO(double)

#undef CMP_INSTANTIATE_MODEL_IO

std::vector<FlowField> predict_flow_batch(const CmpModel& model, std::span<const RgbImage* const> images,
                                          std::span<const SparseGuidanceMap* const> guidance) {
  const auto image_t = images_to_tensor<float>(images);
  const auto guide_t = guidance_to_tensor<float>(guidance, model.arch().quantization.boundary);
  const auto pred = model.forward(image_t, guide_t);
  std::vector<FlowField> out;
  for (const QuantizedFlow& q : prediction_bins(pred, model.arch().quantization)) out.push_back(dequantize_flow(q));
  return out;
}

FlowField predict_flow(const CmpModel& model, const RgbImage& image, const GuidanceSet& guidance) {
  const SparseGuidanceMap map = rasterize_guidance(guidance, image.width(), image.height());
  const RgbImage* images[] = {&image};
  const SparseGuidanceMap* maps[] = {&map};
  return std::move(predict_flow_batch(model, images, maps).front());
}

void save_model(const std::string& path, const CmpModel& model, const nlohmann::json& extra) {
  nlohmann::json sidecar = {{"format", "cmp-checkpoint"},
                            {"version", 1},
                            {"arch", model.arch()},
                            {"iteration", model.iteration()}};
  if (!extra.empty()) sidecar["extra"] = extra;
  nn::save_checkpoint(path, model.export_tensors(true), sidecar);
}

CmpModel load_model(const std::string& path) {
  const nn::LoadedCheckpoint ckpt = nn::load_checkpoint(path);
  if (!ckpt.sidecar.contains("arch")) throw FormatError("checkpoint_bad_sidecar", "sidecar lacks 'arch'");
  CmpModel model(ckpt.sidecar.at("arch").get<CmpArchConfig>(), 0);
  model.import_tensors(ckpt.tensors);
  model.set_iteration(ckpt.sidecar.value("iteration", std::int64_t{0}));
  return model;
}

}  // namespace cmp
