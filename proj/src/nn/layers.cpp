#include "cmp/nn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace cmp::nn {

std::string Shape4::str() const {
  return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " + std::to_string(w) + ")";
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

struct ConvDims {
  int cin, cout, kh, kw, h, w, ho, wo;
  int rows() const { return cin * kh * kw; }
  int cols() const { return ho * wo; }
  bool pointwise(const ConvGeometry& g) const {
    return kh == 1 && kw == 1 && g.stride == 1 && g.padding == 0;
  }
};

template <class T>
ConvDims conv_dims(const Tensor4<T>& x, const Tensor4<T>& weight, ConvGeometry g) {
  if (g.stride < 1 || g.dilation < 1 || g.padding < 0) throw InvalidArgument("invalid convolution geometry");
  if (weight.c() != x.c()) {
    throw ShapeMismatch("conv2d: weight expects " + std::to_string(weight.c()) + " input channels, got " +
                        std::to_string(x.c()));
  }
  ConvDims d{x.c(), weight.n(), weight.h(), weight.w(), x.h(), x.w(), g.output_extent(x.h(), weight.h()),
             g.output_extent(x.w(), weight.w())};
  if (d.ho <= 0 || d.wo <= 0) throw ShapeMismatch("conv2d: kernel larger than padded input");
  return d;
}

template <class T>
void im2col(const T* image, const ConvDims& d, const ConvGeometry& g, T* col) {
  for (int c = 0; c < d.cin; ++c) {
    const T* plane = image + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        T* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * d.cols();
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          T* out = row + static_cast<std::size_t>(oy) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::fill(out, out + d.wo, T{});
            continue;
          }
          const T* in = plane + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            out[ox] = (ix >= 0 && ix < d.w) ? in[ix] : T{};
          }
        }
      }
    }
  }
}

template <class T>
void col2im(const T* col, const ConvDims& d, const ConvGeometry& g, T* image) {
  std::fill(image, image + static_cast<std::size_t>(d.cin) * d.h * d.w, T{});
  for (int c = 0; c < d.cin; ++c) {
    T* plane = image + static_cast<std::size_t>(c) * d.h * d.w;
    for (int ky = 0; ky < d.kh; ++ky) {
      for (int kx = 0; kx < d.kw; ++kx) {
        const T* row = col + static_cast<std::size_t>((c * d.kh + ky) * d.kw + kx) * d.cols();
        for (int oy = 0; oy < d.ho; ++oy) {
          const int iy = oy * g.stride - g.padding + ky * g.dilation;
          if (iy < 0 || iy >= d.h) continue;
          const T* in = row + static_cast<std::size_t>(oy) * d.wo;
          T* out = plane + static_cast<std::size_t>(iy) * d.w;
          for (int ox = 0; ox < d.wo; ++ox) {
            const int ix = ox * g.stride - g.padding + kx * g.dilation;
            if (ix >= 0 && ix < d.w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

}  // namespace

template <class T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>* bias, ConvGeometry g) {
  const ConvDims d = conv_dims(x, weight, g);
  if (bias) require_shape(bias->shape(), {1, d.cout, 1, 1}, "conv2d bias");
  Tensor4<T> y({x.n(), d.cout, d.ho, d.wo});
  const ConstMatMap<T> wmat(weight.data().data(), d.cout, d.rows());
  AlignedVector<T> col;
  if (!d.pointwise(g)) col.resize(static_cast<std::size_t>(d.rows()) * d.cols());
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.plane(n, 0);
    if (!d.pointwise(g)) {
      im2col(src, d, g, col.data());
      src = col.data();
    }
    const ConstMatMap<T> cmat(src, d.rows(), d.cols());
    MatMap<T> ymat(y.plane(n, 0), d.cout, d.cols());
    ymat.noalias() = wmat * cmat;
    if (bias) {
      for (int o = 0; o < d.cout; ++o) ymat.row(o).array() += bias->data()[o];
    }
  }
  return y;
}

template <class T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& dy, ConvGeometry g,
                     Tensor4<T>* dx, Tensor4<T>& dweight, Tensor4<T>* dbias) {
  const ConvDims d = conv_dims(x, weight, g);
  require_shape(dy.shape(), {x.n(), d.cout, d.ho, d.wo}, "conv2d output gradient");
  require_shape(dweight.shape(), weight.shape(), "conv2d weight gradient");
  const ConstMatMap<T> wmat(weight.data().data(), d.cout, d.rows());
  MatMap<T> dwmat(dweight.data().data(), d.cout, d.rows());
  if (dx) *dx = Tensor4<T>(x.shape());
  AlignedVector<T> col;
  AlignedVector<T> dcol;
  if (!d.pointwise(g)) {
    col.resize(static_cast<std::size_t>(d.rows()) * d.cols());
    if (dx) dcol.resize(col.size());
  }
  for (int n = 0; n < x.n(); ++n) {
    const T* src = x.plane(n, 0);
    if (!d.pointwise(g)) {
      im2col(src, d, g, col.data());
      src = col.data();
    }
    const ConstMatMap<T> cmat(src, d.rows(), d.cols());
    const ConstMatMap<T> dymat(dy.plane(n, 0), d.cout, d.cols());
    dwmat.noalias() += dymat * cmat.transpose();
    if (dbias) {
      for (int o = 0; o < d.cout; ++o) {
        const T* row = dy.plane(n, o);
        T acc{};
        for (int i = 0; i < d.cols(); ++i) acc += row[i];
        dbias->data()[o] += acc;
      }
    }
    if (dx) {
      if (d.pointwise(g)) {
        MatMap<T> dxmat(dx->plane(n, 0), d.rows(), d.cols());
        dxmat.noalias() = wmat.transpose() * dymat;
      } else {
        MatMap<T> dcmat(dcol.data(), d.rows(), d.cols());
        dcmat.noalias() = wmat.transpose() * dymat;
        col2im(dcol.data(), d, g, dx->plane(n, 0));
      }
    }
  }
}

// ---------------------------------------------------------------------------

template <class T>
Tensor4<T> batchnorm_forward_train(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                                   Tensor4<T>& running_mean, Tensor4<T>& running_var, BatchNormCache<T>& cache) {
  const int channels = x.c();
  const Shape4 pshape{1, channels, 1, 1};
  require_shape(gamma.shape(), pshape, "batchnorm gamma");
  require_shape(beta.shape(), pshape, "batchnorm beta");
  require_shape(running_mean.shape(), pshape, "batchnorm running mean");
  require_shape(running_var.shape(), pshape, "batchnorm running var");
  const std::size_t plane = x.shape().plane();
  const std::size_t m = static_cast<std::size_t>(x.n()) * plane;
  if (m <= 1) throw InvalidArgument("batchnorm: training mode needs more than one value per channel");

  Tensor4<T> y(x.shape());
  cache.xhat = Tensor4<T>(x.shape());
  cache.inv_std.assign(channels, T{});
  for (int c = 0; c < channels; ++c) {
    double sum = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        const double dlt = p[i] - mean;
        sq += dlt * dlt;
      }
    }
    const double var = sq / m;
    const double inv_std = 1.0 / std::sqrt(var + kBatchNormEpsilon);
    cache.inv_std[c] = static_cast<T>(inv_std);
    const T g = gamma.data()[c];
    const T b = beta.data()[c];
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane(n, c);
      T* xh = cache.xhat.plane(n, c);
      T* out = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        xh[i] = static_cast<T>((p[i] - mean) * inv_std);
        out[i] = g * xh[i] + b;
      }
    }
    const double unbiased = var * m / (m - 1);
    running_mean.data()[c] =
        static_cast<T>((1.0 - kBatchNormMomentum) * running_mean.data()[c] + kBatchNormMomentum * mean);
    running_var.data()[c] =
        static_cast<T>((1.0 - kBatchNormMomentum) * running_var.data()[c] + kBatchNormMomentum * unbiased);
  }
  return y;
}

template <class T>
Tensor4<T> batchnorm_forward_eval(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                                  const Tensor4<T>& running_mean, const Tensor4<T>& running_var) {
  const int channels = x.c();
  const Shape4 pshape{1, channels, 1, 1};
  require_shape(gamma.shape(), pshape, "batchnorm gamma");
  require_shape(running_var.shape(), pshape, "batchnorm running var");
  Tensor4<T> y(x.shape());
  const std::size_t plane = x.shape().plane();
  for (int c = 0; c < channels; ++c) {
    const T scale = static_cast<T>(gamma.data()[c] / std::sqrt(static_cast<double>(running_var.data()[c]) + kBatchNormEpsilon));
    const T shift = beta.data()[c] - scale * running_mean.data()[c];
    for (int n = 0; n < x.n(); ++n) {
      const T* p = x.plane(n, c);
      T* out = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) out[i] = scale * p[i] + shift;
    }
  }
  return y;
}

template <class T>
Tensor4<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor4<T>& gamma, const Tensor4<T>& dy,
                              Tensor4<T>& dgamma, Tensor4<T>& dbeta) {
  require_shape(dy.shape(), cache.xhat.shape(), "batchnorm output gradient");
  const std::size_t plane = dy.shape().plane();
  const double m = static_cast<double>(dy.n()) * plane;
  Tensor4<T> dx(dy.shape());
  for (int c = 0; c < dy.c(); ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = cache.xhat.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        sum_dy += g[i];
        sum_dy_xhat += static_cast<double>(g[i]) * xh[i];
      }
    }
    dgamma.data()[c] += static_cast<T>(sum_dy_xhat);
    dbeta.data()[c] += static_cast<T>(sum_dy);
    const double k = static_cast<double>(gamma.data()[c]) * cache.inv_std[c] / m;
    const double mean_dy = sum_dy;
    for (int n = 0; n < dy.n(); ++n) {
      const T* g = dy.plane(n, c);
      const T* xh = cache.xhat.plane(n, c);
      T* out = dx.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        out[i] = static_cast<T>(k * (m * g[i] - mean_dy - xh[i] * sum_dy_xhat));
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.shape());
  auto in = x.data();
  auto out = y.data();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > T{} ? in[i] : T{};
  return y;
}

template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& y, const Tensor4<T>& dy) {
  require_shape(dy.shape(), y.shape(), "relu gradient");
  Tensor4<T> dx(y.shape());
  auto out = dx.data();
  auto fwd = y.data();
  auto g = dy.data();
  for (std::size_t i = 0; i < g.size(); ++i) out[i] = fwd[i] > T{} ? g[i] : T{};
  return dx;
}

template <class T>
Tensor4<T> maxpool_forward(const Tensor4<T>& x, int s, std::vector<std::size_t>* argmax) {
  if (s < 1) throw InvalidArgument("maxpool stride must be >= 1");
  if (x.h() % s != 0 || x.w() % s != 0) {
    throw ShapeMismatch("maxpool: input " + x.shape().str() + " not divisible by stride " + std::to_string(s));
  }
  Tensor4<T> y({x.n(), x.c(), x.h() / s, x.w() / s});
  if (argmax) argmax->assign(y.size(), 0);
  std::size_t o = 0;
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      const std::size_t base = static_cast<std::size_t>(p - x.data().data());
      for (int oy = 0; oy < y.h(); ++oy) {
        for (int ox = 0; ox < y.w(); ++ox, ++o) {
          std::size_t best = static_cast<std::size_t>(oy * s) * x.w() + ox * s;
          for (int ky = 0; ky < s; ++ky) {
            for (int kx = 0; kx < s; ++kx) {
              const std::size_t i = static_cast<std::size_t>(oy * s + ky) * x.w() + ox * s + kx;
              if (p[i] > p[best]) best = i;
            }
          }
          y.data()[o] = p[best];
          if (argmax) (*argmax)[o] = base + best;
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor4<T> maxpool_backward(const Tensor4<T>& dy, std::span<const std::size_t> argmax, Shape4 input_shape) {
  if (argmax.size() != dy.size()) throw ShapeMismatch("maxpool backward: argmax size mismatch");
  Tensor4<T> dx(input_shape);
  for (std::size_t o = 0; o < argmax.size(); ++o) dx.data()[argmax[o]] += dy.data()[o];
  return dx;
}

namespace {

struct UpTap {
  int i0, i1;
  double l1;  // weight of i1
};

std::vector<UpTap> upsample_taps(int in, int factor) {
  std::vector<UpTap> taps(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    if (s < 0) s = 0;
    const int i0 = std::min(static_cast<int>(s), in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, s - i0};
  }
  return taps;
}

}  // namespace

template <class T>
Tensor4<T> upsample_bilinear_forward(const Tensor4<T>& x, int factor) {
  if (factor < 1) throw InvalidArgument("upsample factor must be >= 1");
  if (factor == 1) return x;
  Tensor4<T> y({x.n(), x.c(), x.h() * factor, x.w() * factor});
  const auto ty = upsample_taps(x.h(), factor);
  const auto tx = upsample_taps(x.w(), factor);
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      const T* p = x.plane(n, c);
      T* out = y.plane(n, c);
      for (int oy = 0; oy < y.h(); ++oy) {
        const UpTap& a = ty[oy];
        const T* r0 = p + static_cast<std::size_t>(a.i0) * x.w();
        const T* r1 = p + static_cast<std::size_t>(a.i1) * x.w();
        for (int ox = 0; ox < y.w(); ++ox) {
          const UpTap& b = tx[ox];
          const double top = (1 - b.l1) * r0[b.i0] + b.l1 * r0[b.i1];
          const double bot = (1 - b.l1) * r1[b.i0] + b.l1 * r1[b.i1];
          out[static_cast<std::size_t>(oy) * y.w() + ox] = static_cast<T>((1 - a.l1) * top + a.l1 * bot);
        }
      }
    }
  }
  return y;
}

template <class T>
Tensor4<T> upsample_bilinear_backward(const Tensor4<T>& dy, int factor, Shape4 input_shape) {
  if (factor == 1) return dy;
  require_shape(dy.shape(), {input_shape.n, input_shape.c, input_shape.h * factor, input_shape.w * factor},
                "upsample gradient");
  Tensor4<T> dx(input_shape);
  const auto ty = upsample_taps(input_shape.h, factor);
  const auto tx = upsample_taps(input_shape.w, factor);
  for (int n = 0; n < dy.n(); ++n) {
    for (int c = 0; c < dy.c(); ++c) {
      const T* g = dy.plane(n, c);
      T* out = dx.plane(n, c);
      for (int oy = 0; oy < dy.h(); ++oy) {
        const UpTap& a = ty[oy];
        T* r0 = out + static_cast<std::size_t>(a.i0) * input_shape.w;
        T* r1 = out + static_cast<std::size_t>(a.i1) * input_shape.w;
        for (int ox = 0; ox < dy.w(); ++ox) {
          const UpTap& b = tx[ox];
          const double v = g[static_cast<std::size_t>(oy) * dy.w() + ox];
          r0[b.i0] += static_cast<T>((1 - a.l1) * (1 - b.l1) * v);
          r0[b.i1] += static_cast<T>((1 - a.l1) * b.l1 * v);
          r1[b.i0] += static_cast<T>(a.l1 * (1 - b.l1) * v);
          r1[b.i1] += static_cast<T>(a.l1 * b.l1 * v);
        }
      }
    }
  }
  return dx;
}

template <class T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>* const> parts) {
  if (parts.empty()) throw InvalidArgument("concat of zero tensors");
  const Shape4 first = parts.front()->shape();
  int channels = 0;
  for (const Tensor4<T>* p : parts) {
    if (p->n() != first.n || p->h() != first.h || p->w() != first.w) {
      throw ShapeMismatch("concat: " + p->shape().str() + " incompatible with " + first.str());
    }
    channels += p->c();
  }
  Tensor4<T> y({first.n, channels, first.h, first.w});
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    int offset = 0;
    for (const Tensor4<T>* p : parts) {
      std::copy_n(p->plane(n, 0), plane * p->c(), y.plane(n, offset));
      offset += p->c();
    }
  }
  return y;
}

template <class T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& dy, std::span<const int> channels) {
  int total = 0;
  for (int c : channels) total += c;
  if (total != dy.c()) throw ShapeMismatch("split: channel counts do not sum to " + std::to_string(dy.c()));
  std::vector<Tensor4<T>> parts;
  const std::size_t plane = dy.shape().plane();
  for (int c : channels) parts.emplace_back(Shape4{dy.n(), c, dy.h(), dy.w()});
  for (int n = 0; n < dy.n(); ++n) {
    int offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      std::copy_n(dy.plane(n, offset), plane * channels[k], parts[k].plane(n, 0));
      offset += channels[k];
    }
  }
  return parts;
}

template <class T>
Tensor4<T> pad_spatial(const Tensor4<T>& x, int height, int width) {
  if (height < x.h() || width < x.w()) throw ShapeMismatch("pad_spatial: target smaller than input");
  if (height == x.h() && width == x.w()) return x;
  Tensor4<T> y({x.n(), x.c(), height, width});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int yy = 0; yy < x.h(); ++yy) {
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(yy) * x.w(), x.w(),
                    y.plane(n, c) + static_cast<std::size_t>(yy) * width);
      }
    }
  }
  return y;
}

template <class T>
Tensor4<T> crop_spatial(const Tensor4<T>& x, int height, int width) {
  if (height > x.h() || width > x.w()) throw ShapeMismatch("crop_spatial: target larger than input");
  if (height == x.h() && width == x.w()) return x;
  Tensor4<T> y({x.n(), x.c(), height, width});
  for (int n = 0; n < x.n(); ++n) {
    for (int c = 0; c < x.c(); ++c) {
      for (int yy = 0; yy < height; ++yy) {
        std::copy_n(x.plane(n, c) + static_cast<std::size_t>(yy) * x.w(), width,
                    y.plane(n, c) + static_cast<std::size_t>(yy) * width);
      }
    }
  }
  return y;
}

template <class T>
SoftmaxCrossEntropy<T> softmax_ce_map(const Tensor4<T>& logits, std::span<const int> labels) {
  const int classes = logits.c();
  const std::size_t plane = logits.shape().plane();
  const std::size_t pixels = static_cast<std::size_t>(logits.n()) * plane;
  if (labels.size() != pixels) throw ShapeMismatch("softmax_ce_map: label count does not match logits");
  SoftmaxCrossEntropy<T> out{T{}, Tensor4<T>(logits.shape())};
  const double inv_n = 1.0 / static_cast<double>(pixels);
  double total = 0.0;
  std::vector<double> prob(classes);
  for (int n = 0; n < logits.n(); ++n) {
    const T* base = logits.plane(n, 0);
    T* gbase = out.grad.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      const int label = labels[static_cast<std::size_t>(n) * plane + i];
      if (label < 0 || label >= classes) {
        throw InvalidArgument("softmax_ce_map: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
      }
      double mx = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(base[c * plane + i]));
      double z = 0.0;
      for (int c = 0; c < classes; ++c) {
        prob[c] = std::exp(static_cast<double>(base[c * plane + i]) - mx);
        z += prob[c];
      }
      total += -((static_cast<double>(base[label * plane + i]) - mx) - std::log(z));
      for (int c = 0; c < classes; ++c) {
        const double p = prob[c] / z;
        gbase[c * plane + i] = static_cast<T>((p - (c == label ? 1.0 : 0.0)) * inv_n);
      }
    }
  }
  out.loss = static_cast<T>(total * inv_n);
  return out;
}

template <class T>
std::vector<int> argmax_channels(const Tensor4<T>& logits) {
  const std::size_t plane = logits.shape().plane();
  std::vector<int> out(static_cast<std::size_t>(logits.n()) * plane);
  for (int n = 0; n < logits.n(); ++n) {
    const T* base = logits.plane(n, 0);
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      for (int c = 1; c < logits.c(); ++c) {
        if (base[c * plane + i] > base[best * plane + i]) best = c;
      }
      out[static_cast<std::size_t>(n) * plane + i] = best;
    }
  }
  return out;
}

template <class T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
  Tensor4<T> y = a;
  add_inplace(y, b);
  return y;
}

template <class T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b) {
  require_shape(b.shape(), a.shape(), "add");
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
}

#define CMP_INSTANTIATE_LAYERS(T)                                                                                   \
  template Tensor4<T> conv2d_forward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>*, ConvGeometry);        \
  template void conv2d_backward(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, ConvGeometry, Tensor4<T>*, \
                                Tensor4<T>&, Tensor4<T>*);                                                          \
  template Tensor4<T> batchnorm_forward_train(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&, Tensor4<T>&, \
                                              Tensor4<T>&, BatchNormCache<T>&);                                     \
  template Tensor4<T> batchnorm_forward_eval(const Tensor4<T>&, const Tensor4<T>&, const Tensor4<T>&,               \
                                             const Tensor4<T>&, const Tensor4<T>&);                                 \
  template Tensor4<T> batchnorm_backward(const BatchNormCache<T>&, const Tensor4<T>&, const Tensor4<T>&,            \
                                         Tensor4<T>&, Tensor4<T>&);                                                 \
  template Tensor4<T> relu_forward(const Tensor4<T>&);                                                              \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                                          \
  template Tensor4<T> maxpool_forward(const Tensor4<T>&, int, std::vector<std::size_t>*);                           \
  template Tensor4<T> maxpool_backward(const Tensor4<T>&, std::span<const std::size_t>, Shape4);                    \
  template Tensor4<T> upsample_bilinear_forward(const Tensor4<T>&, int);                                            \
  template Tensor4<T> upsample_bilinear_backward(const Tensor4<T>&, int, Shape4);                                   \
  template Tensor4<T> concat_channels(std::span<const Tensor4<T>* const>);                                          \
  template std::vector<Tensor4<T>> split_channels(const Tensor4<T>&, std::span<const int>);                         \
  template Tensor4<T> pad_spatial(const Tensor4<T>&, int, int);                                                     \
  template Tensor4<T> crop_spatial(const Tensor4<T>&, int, int);                                                    \
  template SoftmaxCrossEntropy<T> softmax_ce_map(const Tensor4<T>&, std::span<const int>);                          \
  template std::vector<int> argmax_channels(const Tensor4<T>&);                                                     \
  template Tensor4<T> add(const Tensor4<T>&, const Tensor4<T>&);                                                    \
  template void add_inplace(Tensor4<T>&, const Tensor4<T>&);

CMP_INSTANTIATE_LAYERS(float)
CMP_INSTANTIATE_LAYERS(double)

#undef CMP_INSTANTIATE_LAYERS

}  // namespace cmp::nn
