#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmp/flow.hpp"
#include "cmp/guidance.hpp"
#include "cmp/nn/checkpoint.hpp"
#include "cmp/nn/layers.hpp"
#include "cmp/nn/tensor.hpp"

namespace cmp {

struct CmpArchConfig {
  int encoder_stride = 4;
  std::vector<int> encoder_channels = {16, 32, 64};
  int encoder_out_channels = 64;
  int motion_channels = 16;
  std::vector<int> propagation_strides = {1, 2, 4};
  int fusion_channels = 64;
  QuantizationSpec quantization{19, 8.0f};

  void validate() const;
  // Spatial multiple that inputs are zero-padded to before the forward pass.
  int pad_multiple() const;
  // Pooling factors of the two sparse-motion blocks; their product is encoder_stride.
  std::pair<int, int> motion_pooling() const;
  int encoder_pool_count() const;

  static CmpArchConfig desk();
};

void to_json(nlohmann::json& j, const CmpArchConfig& a);
void from_json(const nlohmann::json& j, CmpArchConfig& a);

template <class T>
struct CmpPrediction {
  nn::Tensor4<T> logits_x;
  nn::Tensor4<T> logits_y;
};

template <class T>
struct CmpLoss {
  double total = 0.0;  // L = L_x + L_y
  double x = 0.0;
  double y = 0.0;
  nn::Tensor4<T> grad_x;
  nn::Tensor4<T> grad_y;
};

namespace detail {

template <class T>
struct ConvLayer {
  nn::Parameter<T> weight;
  nn::Parameter<T> bias;
  bool has_bias = false;
  nn::ConvGeometry geometry;
};

template <class T>
struct ConvBnRelu {
  ConvLayer<T> conv;
  nn::Parameter<T> gamma;
  nn::Parameter<T> beta;
  nn::Tensor4<T> running_mean;
  nn::Tensor4<T> running_var;
  std::string name;
};

template <class T>
struct BlockCache {
  nn::Tensor4<T> input;
  nn::BatchNormCache<T> bn;
  nn::Tensor4<T> output;
};

template <class T>
struct PoolCache {
  std::vector<std::size_t> argmax;
  nn::Shape4 input_shape;
};

template <class T>
struct Branch {
  int stride = 1;
  ConvBnRelu<T> first;
  ConvBnRelu<T> second;
};

}  // namespace detail

// Intermediate activations of one training-mode forward pass.
template <class T>
struct ForwardState {
  int height = 0;
  int width = 0;
  nn::Shape4 padded_shape;
  std::vector<detail::BlockCache<T>> encoder;
  std::vector<detail::PoolCache<T>> encoder_pools;
  nn::Tensor4<T> top_input;
  detail::BlockCache<T> motion_first;
  detail::BlockCache<T> motion_second;
  detail::PoolCache<T> motion_pool_first;
  detail::PoolCache<T> motion_pool_second;
  std::vector<detail::PoolCache<T>> branch_pools;
  std::vector<detail::BlockCache<T>> branch_first;
  std::vector<detail::BlockCache<T>> branch_second;
  detail::BlockCache<T> fusion;
  nn::Shape4 class_logits_shape;
};

// Image encoder + sparse motion encoder + propagation nets + fusion net +
// per-axis classifiers. T is float for training and double for gradient checks.
template <class T>
class CmpNet {
 public:
  CmpNet(const CmpArchConfig& arch, std::uint64_t seed);

  const CmpArchConfig& arch() const noexcept { return arch_; }

  // Eval-mode forward (running batch-norm statistics). Thread-safe.
  CmpPrediction<T> forward(const nn::Tensor4<T>& image, const nn::Tensor4<T>& guidance) const;

  // Train-mode forward; records activations in `state` and updates running statistics.
  CmpPrediction<T> forward_train(const nn::Tensor4<T>& image, const nn::Tensor4<T>& guidance, ForwardState<T>& state);

  // Accumulates parameter gradients from logit gradients.
  void backward(const ForwardState<T>& state, const nn::Tensor4<T>& grad_x, const nn::Tensor4<T>& grad_y);

  std::vector<nn::Parameter<T>*> parameters();
  std::vector<const nn::Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  std::int64_t iteration() const noexcept { return iteration_; }
  void set_iteration(std::int64_t it) noexcept { iteration_ = it; }

  // Parameters, batch-norm running statistics and optionally momentum buffers.
  std::vector<nn::NamedTensor> export_tensors(bool include_momentum) const;
  void import_tensors(std::span<const nn::NamedTensor> tensors);

 private:
  template <class Net>
  static CmpPrediction<T> run(Net& net, const nn::Tensor4<T>& image, const nn::Tensor4<T>& guidance,
                              ForwardState<T>* state);

  std::vector<detail::ConvBnRelu<T>*> blocks();
  std::vector<const detail::ConvBnRelu<T>*> blocks() const;

  CmpArchConfig arch_;
  std::vector<detail::ConvBnRelu<T>> encoder_;
  detail::ConvLayer<T> encoder_top_;
  detail::ConvBnRelu<T> motion_first_;
  detail::ConvBnRelu<T> motion_second_;
  std::vector<detail::Branch<T>> branches_;
  detail::ConvBnRelu<T> fusion_;
  detail::ConvLayer<T> classifier_x_;
  detail::ConvLayer<T> classifier_y_;
  std::int64_t iteration_ = 0;
};

using CmpModel = CmpNet<float>;

// RGB in [0, 255] -> (x / 255 - 0.5) / 0.25, stacked into (N, 3, H, W).
template <class T>
nn::Tensor4<T> images_to_tensor(std::span<const RgbImage* const> images);

// (u / B, v / B, mask) planes stacked into (N, 3, H, W).
template <class T>
nn::Tensor4<T> guidance_to_tensor(std::span<const SparseGuidanceMap* const> maps, float boundary);

// L = L_x + L_y over every pixel of every item.
template <class T>
CmpLoss<T> cmp_loss(const CmpPrediction<T>& pred, std::span<const QuantizedFlow> targets);

// Per-pixel argmax bins for each batch item.
template <class T>
std::vector<QuantizedFlow> prediction_bins(const CmpPrediction<T>& pred, const QuantizationSpec& spec);

// Rasterize, eval-mode forward, argmax and dequantize.
FlowField predict_flow(const CmpModel& model, const RgbImage& image, const GuidanceSet& guidance);

std::vector<FlowField> predict_flow_batch(const CmpModel& model, std::span<const RgbImage* const> images,
                                          std::span<const SparseGuidanceMap* const> guidance);

void save_model(const std::string& path, const CmpModel& model, const nlohmann::json& extra = nlohmann::json::object());
CmpModel load_model(const std::string& path);

}  // namespace cmp
