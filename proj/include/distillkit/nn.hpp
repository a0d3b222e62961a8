#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "distillkit/tensor.hpp"

namespace distillkit {

struct Parameter {
  std::string name;
  Tensor value;
};

namespace nn {

/// 3x3 "same"-padded convolution, NHWC input, HWIO kernel.
struct Conv2d {
  std::size_t kernel = 0; // parameter index, [K,K,in,out]
  std::size_t bias = 0;   // [out]
  int in_channels = 0;
  int out_channels = 0;
  int kernel_size = 3;
  int stride = 1;
  int padding = 1;
};

/// Per-sample normalization over (H,W,C) with a per-channel affine.
struct LayerNorm {
  std::size_t gamma = 0;
  std::size_t beta = 0;
  float epsilon = 1e-5f;
};

/// x * sigmoid(x)
struct Silu {};

struct GlobalAvgPool {};

struct Dense {
  std::size_t kernel = 0; // [in,out]
  std::size_t bias = 0;   // [out]
  int in_features = 0;
  int out_features = 0;
};

using Layer = std::variant<Conv2d, LayerNorm, Silu, GlobalAvgPool, Dense>;

/// Whatever a layer needs to keep from the forward pass for backprop.
struct LayerCache {
  Shape input_shape;
  Tensor input;
  Tensor aux;             // im2col matrix, normalized activations, ...
  std::vector<float> inv; // per-sample inverse std for LayerNorm
};

Tensor forward(const Layer &layer, const std::vector<Parameter> &params, const Tensor &x,
               LayerCache *cache);

/// Returns d(loss)/d(input) and accumulates parameter gradients into
/// `grads` (aligned with `params`). When `need_input_grad` is false the
/// returned tensor is empty.
Tensor backward(const Layer &layer, const std::vector<Parameter> &params,
                const LayerCache &cache, const Tensor &dy, std::vector<Tensor> &grads,
                bool need_input_grad = true);

/// Glorot-uniform kernel and zero bias, appended to `params`.
Conv2d make_conv(std::vector<Parameter> &params, const std::string &prefix, int in_channels,
                 int out_channels, int stride, std::mt19937_64 &rng);
LayerNorm make_layer_norm(std::vector<Parameter> &params, const std::string &prefix,
                          int channels);
Dense make_dense(std::vector<Parameter> &params, const std::string &prefix, int in_features,
                 int out_features, std::mt19937_64 &rng);

int conv_output_size(int input, int kernel, int stride, int padding);

} // namespace nn
} // namespace distillkit
