#pragma once

// Trainable building blocks with hand-written backward passes. A layer keeps
// whatever it needs for backward from the most recent recording forward call.

#include <random>
#include <string>
#include <vector>

#include "x2face/diffops.hpp"

namespace x2face {

enum class Mode { kTrain, kInfer };

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Shape4 shape) : name(std::move(n)), value(shape), grad(shape) {}
};

// Non-trainable persistent state (batch-norm running statistics).
template <typename T>
struct Buffer {
  std::string name;
  Tensor<T> value;
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int pad);

  // Fan-in scaled uniform initialization: bound gain / sqrt(fan_in).
  void init(std::mt19937_64& rng, double gain = 1.0);

  Tensor<T> forward(const Tensor<T>& x, bool record);
  // Accumulates parameter gradients; returns the input gradient when requested.
  Tensor<T> backward(const Tensor<T>& grad_out, bool input_grad = true);
  // Input gradient with weights treated as constants.
  Tensor<T> backward_input(const Tensor<T>& grad_out) const;

  std::vector<Parameter<T>*> parameters() { return {&weight_, &bias_}; }
  int in_channels() const { return weight_.value.channels(); }
  int out_channels() const { return weight_.value.batch(); }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  int stride_ = 1;
  int pad_ = 0;
  Tensor<T> input_;
};

template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

  BatchNorm2d() = default;
  BatchNorm2d(const std::string& name, int channels);

  Tensor<T> forward(const Tensor<T>& x, Mode mode, bool record);
  Tensor<T> backward(const Tensor<T>& grad_out);

  std::vector<Parameter<T>*> parameters() { return {&gamma_, &beta_}; }
  std::vector<Buffer<T>*> buffers() { return {&running_mean_, &running_var_}; }

 private:
  Parameter<T> gamma_;
  Parameter<T> beta_;
  Buffer<T> running_mean_;
  Buffer<T> running_var_;
  ops::BatchNormCache<T> cache_;
};

// Fully connected map on flattened samples.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features);

  void init(std::mt19937_64& rng);
  Tensor<T> forward(const Tensor<T>& x, bool record);
  Tensor<T> backward(const Tensor<T>& grad_out, bool input_grad = true);

  std::vector<Parameter<T>*> parameters() { return {&weight_, &bias_}; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
  for (auto* p : params) p->grad.zero();
}

}  // namespace x2face
