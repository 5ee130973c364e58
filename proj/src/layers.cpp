#include "x2face/layers.hpp"

#include <cmath>

namespace x2face {
namespace {

template <typename T>
void uniform_fill(Tensor<T>& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, int pad)
    : weight_(name + ".weight", Shape4{out_channels, in_channels, kernel, kernel}),
      bias_(name + ".bias", Shape4{out_channels, 1, 1, 1}),
      stride_(stride),
      pad_(pad) {}

template <typename T>
void Conv2d<T>::init(std::mt19937_64& rng, double gain) {
  const Shape4 s = weight_.value.shape();
  const double bound = gain / std::sqrt(static_cast<double>(s.d1) * s.d2 * s.d3);
  uniform_fill(weight_.value, bound, rng);
  uniform_fill(bias_.value, bound / gain, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool record) {
  if (record) input_ = x;
  return ops::conv2d(x, weight_.value, bias_.value, stride_, pad_);
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out, bool input_grad) {
  require(!input_.empty(), ErrorCode::kPrecondition, weight_.name + ": backward without forward");
  Tensor<T> grad_in;
  ops::conv2d_backward(input_, weight_.value, grad_out, stride_, pad_,
                       input_grad ? &grad_in : nullptr, weight_.grad, bias_.grad);
  return grad_in;
}

template <typename T>
Tensor<T> Conv2d<T>::backward_input(const Tensor<T>& grad_out) const {
  require(!input_.empty(), ErrorCode::kPrecondition, weight_.name + ": backward without forward");
  return ops::conv2d_backward_input(weight_.value, grad_out, input_.shape(), stride_, pad_);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(const std::string& name, int channels)
    : gamma_(name + ".gamma", Shape4{channels, 1, 1, 1}),
      beta_(name + ".beta", Shape4{channels, 1, 1, 1}),
      running_mean_{name + ".running_mean", Tensor<T>(channels, 1, 1, 1)},
      running_var_{name + ".running_var", Tensor<T>(channels, 1, 1, 1, T(1))} {
  gamma_.value.fill(T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, Mode mode, bool record) {
  if (mode == Mode::kInfer)
    return ops::batch_norm_infer(x, gamma_.value, beta_.value, running_mean_.value,
                                 running_var_.value, T(kEps));
  return ops::batch_norm_train(x, gamma_.value, beta_.value, running_mean_.value,
                               running_var_.value, T(kMomentum), T(kEps),
                               record ? &cache_ : nullptr);
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& grad_out) {
  return ops::batch_norm_backward(grad_out, cache_, gamma_.value, gamma_.grad, beta_.grad);
}

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features)
    : weight_(name + ".weight", Shape4{out_features, in_features, 1, 1}),
      bias_(name + ".bias", Shape4{out_features, 1, 1, 1}) {}

template <typename T>
void Linear<T>::init(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight_.value.channels()));
  uniform_fill(weight_.value, bound, rng);
  uniform_fill(bias_.value, bound, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool record) {
  if (record) input_ = x;
  return ops::linear(x, weight_.value, bias_.value);
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, bool input_grad) {
  require(!input_.empty(), ErrorCode::kPrecondition, weight_.name + ": backward without forward");
  Tensor<T> grad_in;
  ops::linear_backward(input_, weight_.value, grad_out, input_grad ? &grad_in : nullptr,
                       weight_.grad, bias_.grad);
  return grad_in;
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm2d<float>;
template class BatchNorm2d<double>;
template class Linear<float>;
template class Linear<double>;

}  // namespace x2face
