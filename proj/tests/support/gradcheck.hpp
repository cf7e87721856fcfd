#pragma once

// Central finite differences against the analytic backward passes, in double
// precision. Every check contracts the layer output with a random upstream
// tensor r, so the scalar objective is sum(r * f(inputs)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cmp/model.hpp"
#include "cmp/nn/layers.hpp"

namespace gradcheck {

using T4 = cmp::nn::Tensor4<double>;
using cmp::nn::Shape4;

inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double scale = std::max(std::sqrt(na), std::sqrt(nn));
  if (scale < 1e-12) return std::sqrt(diff);
  return std::sqrt(diff) / scale;
}

inline T4 random_tensor(std::mt19937_64& rng, Shape4 s, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  T4 t(s);
  for (double& v : t.data()) v = d(rng);
  return t;
}

inline double dot(const T4& a, const T4& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
  return s;
}

// Numeric gradient of `objective` with respect to every entry of `t`.
inline std::vector<double> numeric_gradient(T4& t, const std::function<double()>& objective, double h = 1e-5) {
  std::vector<double> g(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double keep = t.data()[i];
    t.data()[i] = keep + h;
    const double up = objective();
    t.data()[i] = keep - h;
    const double down = objective();
    t.data()[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double compare(const T4& analytic, T4& input, const std::function<double()>& objective) {
  const auto num = numeric_gradient(input, objective);
  return relative_error(analytic.data(), num);
}

struct LayerResult {
  std::string layer;
  int cases = 0;
  double worst = 0.0;

  void record(double err) {
    ++cases;
    worst = std::max(worst, err);
  }
};

inline int pick(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

inline LayerResult check_conv(std::mt19937_64& rng, int cases) {
  LayerResult r{"conv2d"};
  while (r.cases < cases) {
    cmp::nn::ConvGeometry g{pick(rng, 1, 2), pick(rng, 0, 2), pick(rng, 1, 2)};
    const int k = std::array{1, 3}[pick(rng, 0, 1)];
    Shape4 xs{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 3, 7), pick(rng, 3, 7)};
    const int cout = pick(rng, 1, 3);
    if (g.output_extent(xs.h, k) <= 0 || g.output_extent(xs.w, k) <= 0) continue;
    T4 x = random_tensor(rng, xs);
    T4 w = random_tensor(rng, {cout, xs.c, k, k});
    T4 b = random_tensor(rng, {1, cout, 1, 1});
    const T4 y0 = cmp::nn::conv2d_forward(x, w, &b, g);
    const T4 up = random_tensor(rng, y0.shape());
    T4 dx, dw(w.shape()), db(b.shape());
    cmp::nn::conv2d_backward(x, w, up, g, &dx, dw, &db);
    auto obj = [&] { return dot(up, cmp::nn::conv2d_forward(x, w, &b, g)); };
    r.record(std::max({compare(dx, x, obj), compare(dw, w, obj), compare(db, b, obj)}));
  }
  return r;
}

inline LayerResult check_batchnorm(std::mt19937_64& rng, int cases) {
  LayerResult r{"batchnorm"};
  for (int i = 0; i < cases; ++i) {
    Shape4 xs{pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 2, 4), pick(rng, 2, 4)};
    T4 x = random_tensor(rng, xs, -2.0, 2.0);
    T4 gamma = random_tensor(rng, {1, xs.c, 1, 1}, 0.5, 1.5);
    T4 beta = random_tensor(rng, {1, xs.c, 1, 1});
    T4 rm({1, xs.c, 1, 1}), rv({1, xs.c, 1, 1}, 1.0);
    cmp::nn::BatchNormCache<double> cache;
    const T4 y0 = cmp::nn::batchnorm_forward_train(x, gamma, beta, rm, rv, cache);
    const T4 up = random_tensor(rng, y0.shape());
    T4 dg(gamma.shape()), dbeta(beta.shape());
    const T4 dx = cmp::nn::batchnorm_backward(cache, gamma, up, dg, dbeta);
    auto obj = [&] {
      T4 m2 = rm, v2 = rv;
      cmp::nn::BatchNormCache<double> c2;
      return dot(up, cmp::nn::batchnorm_forward_train(x, gamma, beta, m2, v2, c2));
    };
    r.record(std::max({compare(dx, x, obj), compare(dg, gamma, obj), compare(dbeta, beta, obj)}));
  }
  return r;
}

inline LayerResult check_relu(std::mt19937_64& rng, int cases) {
  LayerResult r{"relu"};
  for (int i = 0; i < cases; ++i) {
    T4 x = random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)});
    // Keep values away from the kink so the finite difference never straddles it.
    for (double& v : x.data()) v = v < 0 ? v - 0.01 : v + 0.01;
    const T4 y = cmp::nn::relu_forward(x);
    const T4 up = random_tensor(rng, y.shape());
    const T4 dx = cmp::nn::relu_backward(y, up);
    r.record(compare(dx, x, [&] { return dot(up, cmp::nn::relu_forward(x)); }));
  }
  return r;
}

inline LayerResult check_maxpool(std::mt19937_64& rng, int cases) {
  LayerResult r{"maxpool"};
  for (int i = 0; i < cases; ++i) {
    const int s = pick(rng, 1, 3);
    T4 x({pick(rng, 1, 2), pick(rng, 1, 2), s * pick(rng, 1, 3), s * pick(rng, 1, 3)});
    // Distinct values spaced well beyond the step size: no ties, no argmax flips.
    std::vector<double> levels(x.size());
    for (std::size_t k = 0; k < levels.size(); ++k) levels[k] = 0.01 * static_cast<double>(k);
    std::shuffle(levels.begin(), levels.end(), rng);
    std::copy(levels.begin(), levels.end(), x.data().begin());
    std::vector<std::size_t> argmax;
    const T4 y = cmp::nn::maxpool_forward(x, s, &argmax);
    const T4 up = random_tensor(rng, y.shape());
    const T4 dx = cmp::nn::maxpool_backward(up, argmax, x.shape());
    r.record(compare(dx, x, [&] { return dot(up, cmp::nn::maxpool_forward(x, s, static_cast<std::vector<std::size_t>*>(nullptr))); }));
  }
  return r;
}

inline LayerResult check_upsample(std::mt19937_64& rng, int cases) {
  LayerResult r{"upsample_bilinear"};
  for (int i = 0; i < cases; ++i) {
    const int f = pick(rng, 1, 4);
    T4 x = random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 5), pick(rng, 1, 5)});
    const T4 y = cmp::nn::upsample_bilinear_forward(x, f);
    const T4 up = random_tensor(rng, y.shape());
    const T4 dx = cmp::nn::upsample_bilinear_backward(up, f, x.shape());
    r.record(compare(dx, x, [&] { return dot(up, cmp::nn::upsample_bilinear_forward(x, f)); }));
  }
  return r;
}

inline LayerResult check_concat(std::mt19937_64& rng, int cases) {
  LayerResult r{"concat/split"};
  for (int i = 0; i < cases; ++i) {
    const int parts = pick(rng, 1, 4);
    const int n = pick(rng, 1, 2), h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    std::vector<T4> xs;
    std::vector<int> channels;
    for (int p = 0; p < parts; ++p) {
      channels.push_back(pick(rng, 1, 3));
      xs.push_back(random_tensor(rng, {n, channels.back(), h, w}));
    }
    auto forward = [&] {
      std::vector<const T4*> ptrs;
      for (const T4& t : xs) ptrs.push_back(&t);
      return cmp::nn::concat_channels<double>(ptrs);
    };
    const T4 y = forward();
    const T4 up = random_tensor(rng, y.shape());
    const auto grads = cmp::nn::split_channels(up, std::span<const int>(channels));
    double worst = 0.0;
    for (int p = 0; p < parts; ++p) worst = std::max(worst, compare(grads[p], xs[p], [&] { return dot(up, forward()); }));
    r.record(worst);
  }
  return r;
}

inline LayerResult check_pad_crop(std::mt19937_64& rng, int cases) {
  LayerResult r{"pad/crop"};
  for (int i = 0; i < cases; ++i) {
    T4 x = random_tensor(rng, {pick(rng, 1, 2), pick(rng, 1, 2), pick(rng, 1, 5), pick(rng, 1, 5)});
    const int ph = x.h() + pick(rng, 0, 3), pw = x.w() + pick(rng, 0, 3);
    const T4 up_pad = random_tensor(rng, {x.n(), x.c(), ph, pw});
    const double e_pad =
        compare(cmp::nn::crop_spatial(up_pad, x.h(), x.w()), x, [&] { return dot(up_pad, cmp::nn::pad_spatial(x, ph, pw)); });
    const int ch = pick(rng, 1, x.h()), cw = pick(rng, 1, x.w());
    const T4 up_crop = random_tensor(rng, {x.n(), x.c(), ch, cw});
    const double e_crop =
        compare(cmp::nn::pad_spatial(up_crop, x.h(), x.w()), x, [&] { return dot(up_crop, cmp::nn::crop_spatial(x, ch, cw)); });
    r.record(std::max(e_pad, e_crop));
  }
  return r;
}

inline LayerResult check_softmax(std::mt19937_64& rng, int cases) {
  LayerResult r{"softmax_cross_entropy"};
  for (int i = 0; i < cases; ++i) {
    T4 logits = random_tensor(rng, {pick(rng, 1, 2), pick(rng, 2, 19), pick(rng, 1, 4), pick(rng, 1, 4)}, -3.0, 3.0);
    std::vector<int> labels(static_cast<std::size_t>(logits.n()) * logits.h() * logits.w());
    for (int& l : labels) l = pick(rng, 0, logits.c() - 1);
    const auto ce = cmp::nn::softmax_ce_map(logits, std::span<const int>(labels));
    r.record(compare(ce.grad, logits, [&] { return cmp::nn::softmax_ce_map(logits, std::span<const int>(labels)).loss; }));
  }
  return r;
}

inline std::vector<LayerResult> layer_suite(std::uint64_t seed, int cases) {
  std::mt19937_64 rng(seed);
  return {check_conv(rng, cases),    check_batchnorm(rng, cases), check_relu(rng, cases),
          check_maxpool(rng, cases), check_upsample(rng, cases),  check_concat(rng, cases),
          check_pad_crop(rng, cases), check_softmax(rng, cases)};
}

// Whole-network check: sum of both cross-entropy losses with respect to a
// random subset of parameters, plus the guidance input.
inline cmp::CmpArchConfig tiny_arch() {
  cmp::CmpArchConfig a;
  a.encoder_stride = 2;
  a.encoder_channels = {4, 6};
  a.encoder_out_channels = 6;
  a.motion_channels = 4;
  a.propagation_strides = {1, 2};
  a.fusion_channels = 6;
  a.quantization = {5, 4.0f};
  return a;
}

struct EndToEndResult {
  int cases = 0;
  double worst = 0.0;
};

inline EndToEndResult end_to_end(std::uint64_t seed, int cases, int sampled_params = 50) {
  std::mt19937_64 rng(seed);
  EndToEndResult out;
  for (int c = 0; c < cases; ++c) {
    const cmp::CmpArchConfig arch = tiny_arch();
    cmp::CmpNet<double> net(arch, rng());
    const int n = 2, h = 16, w = 16;
    const T4 image = random_tensor(rng, {n, 3, h, w});
    T4 guidance({n, 3, h, w});
    for (int b = 0; b < n; ++b) {
      for (int k = 0; k < 4; ++k) {
        const int x = pick(rng, 0, w - 1), y = pick(rng, 0, h - 1);
        guidance.at(b, 0, y, x) = std::uniform_real_distribution<double>(-1, 1)(rng);
        guidance.at(b, 1, y, x) = std::uniform_real_distribution<double>(-1, 1)(rng);
        guidance.at(b, 2, y, x) = 1.0;
      }
    }
    std::vector<cmp::QuantizedFlow> targets(n);
    for (auto& t : targets) {
      t.width = w;
      t.height = h;
      t.spec = arch.quantization;
      t.xbins.resize(static_cast<std::size_t>(w) * h);
      t.ybins.resize(t.xbins.size());
      for (int& v : t.xbins) v = pick(rng, 0, arch.quantization.bins - 1);
      for (int& v : t.ybins) v = pick(rng, 0, arch.quantization.bins - 1);
    }
    // Perturbing a parameter must not disturb the batch-norm running averages
    // seen by later evaluations, so each objective call runs on a copy.
    auto objective = [&](cmp::CmpNet<double>& model) {
      cmp::CmpNet<double> copy = model;
      cmp::ForwardState<double> st;
      return cmp::cmp_loss(copy.forward_train(image, guidance, st), std::span<const cmp::QuantizedFlow>(targets)).total;
    };

    cmp::CmpNet<double> work = net;
    cmp::ForwardState<double> state;
    work.zero_grad();
    const auto pred = work.forward_train(image, guidance, state);
    const auto loss = cmp::cmp_loss(pred, std::span<const cmp::QuantizedFlow>(targets));
    work.backward(state, loss.grad_x, loss.grad_y);

    auto params = net.parameters();
    auto grads = work.parameters();
    std::vector<double> analytic, numeric;
    const double hstep = 1e-5;
    for (int s = 0; s < sampled_params; ++s) {
      const std::size_t pi = static_cast<std::size_t>(pick(rng, 0, static_cast<int>(params.size()) - 1));
      const std::size_t ei = static_cast<std::size_t>(pick(rng, 0, static_cast<int>(params[pi]->value.size()) - 1));
      double& value = params[pi]->value.data()[ei];
      const double keep = value;
      value = keep + hstep;
      const double up = objective(net);
      value = keep - hstep;
      const double down = objective(net);
      value = keep;
      analytic.push_back(grads[pi]->grad.data()[ei]);
      numeric.push_back((up - down) / (2.0 * hstep));
    }
    out.worst = std::max(out.worst, relative_error(analytic, numeric));
    ++out.cases;
  }
  return out;
}

}  // namespace gradcheck
