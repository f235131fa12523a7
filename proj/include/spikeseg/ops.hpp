#pragma once

#include <span>

#include "spikeseg/tensor.hpp"

namespace spikeseg {

// Differentiable spatial primitives. All are pure functions over immutable
// inputs with fixed reduction order: identical inputs give bit-identical
// outputs across runs and worker counts.

struct ConvGrads {
  Tensor4 input;
  Tensor4 weights;
};

Tensor4 conv2d_forward(const Tensor4& input, const Tensor4& weights, const ConvSpec& spec);
ConvGrads conv2d_backward(const Tensor4& input, const Tensor4& weights,
                          const Tensor4& grad_out, const ConvSpec& spec);
// pieces used by the network engine
Tensor4 conv2d_backward_input(const Tensor4& weights, const Tensor4& grad_out,
                              const ConvSpec& spec, int in_h, int in_w);
void conv2d_backward_weights_accum(const Tensor4& input, const Tensor4& grad_out,
                                   const ConvSpec& spec, Tensor4& grad_weights);

// Transposed convolution, fixed to exact 2x spatial upsampling
// (stride 2 with kernel = 2*padding + 2, default k=4 p=1).
// Weights are stored (in_channels, out_channels, k, k).
void check_transpose_spec(const ConvSpec& spec);  // config_error unless doubling
Tensor4 transpose_conv_forward(const Tensor4& input, const Tensor4& weights, const ConvSpec& spec);
ConvGrads transpose_conv_backward(const Tensor4& input, const Tensor4& weights,
                                  const Tensor4& grad_out, const ConvSpec& spec);
Tensor4 transpose_conv_backward_input(const Tensor4& weights, const Tensor4& grad_out,
                                      const ConvSpec& spec);
void transpose_conv_backward_weights_accum(const Tensor4& input, const Tensor4& grad_out,
                                           const ConvSpec& spec, Tensor4& grad_weights);

// 2x2 mean pooling, stride 2. Backward spreads grad/4 uniformly.
Tensor4 avg_pool2_forward(const Tensor4& input);
Tensor4 avg_pool2_backward(const Tensor4& grad_out);

// Align-corners bilinear interpolation (upsampling only).
Tensor4 bilinear_upsample(const Tensor4& input, int out_h, int out_w);
Tensor4 bilinear_upsample_backward(const Tensor4& grad_out, int in_h, int in_w);

void add_channel_bias(Tensor4& t, std::span<const float> bias);

}  // namespace spikeseg
