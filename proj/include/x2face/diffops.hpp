#pragma once

// Differentiable numerical primitives. Every forward kernel has a matching
// backward that either returns or accumulates gradients. Kernels are
// OpenMP-parallel; serial reference versions live in diffops_reference.hpp.

#include <vector>

#include "x2face/tensor.hpp"

namespace x2face::ops {

// Bilinear sampling with corner-aligned coordinates (x = -1 is the center of
// column 0, x = +1 the center of column W-1) and zero padding outside.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplerGrid<T>& grid);

// Either output pointer may be null. grad_input / grad_grid are overwritten.
template <typename T>
void bilinear_sample_backward(const Tensor<T>& input, const SamplerGrid<T>& grid,
                              const Tensor<T>& grad_out, Tensor<T>* grad_input,
                              SamplerGrid<T>* grad_grid);

// Corner-aligned 2x bilinear upsampling.
template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& input);

template <typename T>
Tensor<T> bilinear_upsample2x_backward(const Tensor<T>& grad_out, Shape4 input_shape);

// Resize to arbitrary extents with the same corner-aligned convention.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int height, int width);

// weight: (out, in, k, k); bias: (out, 1, 1, 1).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad);

// grad_weight and grad_bias are accumulated into; grad_input (if non-null) is overwritten.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     int stride, int pad, Tensor<T>* grad_input, Tensor<T>& grad_weight,
                     Tensor<T>& grad_bias);

// Input gradient only, for frozen weights.
template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& weight, const Tensor<T>& grad_out,
                                Shape4 input_shape, int stride, int pad);

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;       // x_hat
  std::vector<T> inv_std;     // per channel
};

// Training-mode batch norm: normalizes with batch statistics (biased variance)
// and updates running statistics with the given momentum (unbiased variance).
template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                           BatchNormCache<T>* cache);

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps);

template <typename T>
Tensor<T> batch_norm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                              const Tensor<T>& gamma, Tensor<T>& grad_gamma, Tensor<T>& grad_beta);

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope);
template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, T slope);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> tanh(const Tensor<T>& x);
// Takes the forward output y = tanh(x).
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& grad_out);

// Affine map on flattened samples: input (n, in, 1, 1) or anything with
// in = c*h*w; weight (out, in, 1, 1); bias (out, 1, 1, 1). Output (n, out, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias);
template <typename T>
void linear_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_input, Tensor<T>& grad_weight, Tensor<T>& grad_bias);

// 2x2 max pooling, stride 2. argmax holds the flat input index per output.
template <typename T>
Tensor<T> max_pool2x(const Tensor<T>& input, std::vector<std::size_t>* argmax);
template <typename T>
Tensor<T> max_pool2x_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                              Shape4 input_shape);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
// Inverse of concat_channels for gradients: splits at channel `first`.
template <typename T>
void split_channels(const Tensor<T>& t, int first, Tensor<T>& a, Tensor<T>& b);

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src);

}  // namespace x2face::ops
