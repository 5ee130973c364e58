#pragma once

// Straightforward serial implementations of the parallel kernels, used by
// tests and the benchmark as the ground truth the fast paths must reproduce.

#include "x2face/tensor.hpp"

namespace x2face::ops::reference {

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplerGrid<T>& grid);

template <typename T>
void bilinear_sample_backward(const Tensor<T>& input, const SamplerGrid<T>& grid,
                              const Tensor<T>& grad_out, Tensor<T>& grad_input,
                              SamplerGrid<T>& grad_grid);

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& input);

// Direct seven-loop convolution.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad);

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     int stride, int pad, Tensor<T>& grad_input, Tensor<T>& grad_weight,
                     Tensor<T>& grad_bias);

}  // namespace x2face::ops::reference
