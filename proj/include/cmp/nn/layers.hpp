#pragma once

#include <span>
#include <vector>

#include "cmp/nn/tensor.hpp"

namespace cmp::nn {

// Every layer comes as a forward/backward pair over NCHW tensors. Backward
// functions accumulate into parameter gradients and overwrite input
// gradients. Instantiated for float (training) and double (gradient checks).

struct ConvGeometry {
  int stride = 1;
  int padding = 0;
  int dilation = 1;

  int output_extent(int input, int kernel) const {
    return (input + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
  }
};

// weight: (out_channels, in_channels, kh, kw); bias: (1, out_channels, 1, 1) or null.
template <class T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>* bias, ConvGeometry g);

template <class T>
void conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& weight, const Tensor4<T>& dy, ConvGeometry g,
                     Tensor4<T>* dx, Tensor4<T>& dweight, Tensor4<T>* dbias);

enum class NormMode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <class T>
struct BatchNormCache {
  Tensor4<T> xhat;
  std::vector<T> inv_std;
};

// Batch statistics over (N, H, W); updates the running estimates with rate 0.1.
template <class T>
Tensor4<T> batchnorm_forward_train(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                                   Tensor4<T>& running_mean, Tensor4<T>& running_var, BatchNormCache<T>& cache);

template <class T>
Tensor4<T> batchnorm_forward_eval(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                                  const Tensor4<T>& running_mean, const Tensor4<T>& running_var);

template <class T>
Tensor4<T> batchnorm_backward(const BatchNormCache<T>& cache, const Tensor4<T>& gamma, const Tensor4<T>& dy,
                              Tensor4<T>& dgamma, Tensor4<T>& dbeta);

template <class T>
Tensor4<T> relu_forward(const Tensor4<T>& x);

// Uses the forward output to gate the gradient.
template <class T>
Tensor4<T> relu_backward(const Tensor4<T>& y, const Tensor4<T>& dy);

// Non-overlapping max pooling (kernel = stride = s). `argmax` receives the flat
// input index chosen for each output element (first occurrence on ties).
template <class T>
Tensor4<T> maxpool_forward(const Tensor4<T>& x, int s, std::vector<std::size_t>* argmax);

template <class T>
Tensor4<T> maxpool_backward(const Tensor4<T>& dy, std::span<const std::size_t> argmax, Shape4 input_shape);

// Bilinear upsampling by an integer factor, align_corners = false.
template <class T>
Tensor4<T> upsample_bilinear_forward(const Tensor4<T>& x, int factor);

template <class T>
Tensor4<T> upsample_bilinear_backward(const Tensor4<T>& dy, int factor, Shape4 input_shape);

template <class T>
Tensor4<T> concat_channels(std::span<const Tensor4<T>* const> parts);

template <class T>
std::vector<Tensor4<T>> split_channels(const Tensor4<T>& dy, std::span<const int> channels);

// Zero padding on the bottom/right edge, and its adjoint.
template <class T>
Tensor4<T> pad_spatial(const Tensor4<T>& x, int height, int width);

template <class T>
Tensor4<T> crop_spatial(const Tensor4<T>& x, int height, int width);

template <class T>
struct SoftmaxCrossEntropy {
  T loss{};
  Tensor4<T> grad;
};

// Mean over all N*H*W pixels of -log softmax(logits)[label]; grad = (P - onehot) / N.
template <class T>
SoftmaxCrossEntropy<T> softmax_ce_map(const Tensor4<T>& logits, std::span<const int> labels);

// Per-pixel argmax over channels, lowest index on ties.
template <class T>
std::vector<int> argmax_channels(const Tensor4<T>& logits);

template <class T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b);

template <class T>
void add_inplace(Tensor4<T>& a, const Tensor4<T>& b);

}  // namespace cmp::nn
