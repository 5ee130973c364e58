#include "x2face/diffops_reference.hpp"

#include <cmath>
#include <limits>

namespace x2face::ops::reference {
namespace {

template <typename T>
T to_pixel(T g, int size) {
  if (size <= 1) return T(0);
  T p = (g + T(1)) * T(size - 1) / T(2);
  const T r = std::nearbyint(p);
  if (std::abs(p - r) <= T(8) * std::numeric_limits<T>::epsilon() * T(size)) p = r;
  return p;
}

template <typename T>
T pixel(const Tensor<T>& t, int n, int c, int y, int x) {
  if (y < 0 || y >= t.height() || x < 0 || x >= t.width()) return T(0);
  return t(n, c, y, x);
}

}  // namespace

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplerGrid<T>& grid) {
  require(input.batch() == grid.batch(), ErrorCode::kPrecondition, "batch mismatch");
  Tensor<T> out(input.batch(), input.channels(), grid.height(), grid.width());
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c)
      for (int i = 0; i < grid.height(); ++i)
        for (int j = 0; j < grid.width(); ++j) {
          const T px = to_pixel(grid.x(n, i, j), input.width());
          const T py = to_pixel(grid.y(n, i, j), input.height());
          const int x0 = static_cast<int>(std::floor(px));
          const int y0 = static_cast<int>(std::floor(py));
          const T ax = px - T(x0), ay = py - T(y0);
          out(n, c, i, j) = (T(1) - ax) * (T(1) - ay) * pixel(input, n, c, y0, x0) +
                            ax * (T(1) - ay) * pixel(input, n, c, y0, x0 + 1) +
                            (T(1) - ax) * ay * pixel(input, n, c, y0 + 1, x0) +
                            ax * ay * pixel(input, n, c, y0 + 1, x0 + 1);
        }
  return out;
}

template <typename T>
void bilinear_sample_backward(const Tensor<T>& input, const SamplerGrid<T>& grid,
                              const Tensor<T>& grad_out, Tensor<T>& grad_input,
                              SamplerGrid<T>& grad_grid) {
  const int H = input.height(), W = input.width();
  grad_input = Tensor<T>(input.shape());
  grad_grid = SamplerGrid<T>(grid.batch(), grid.height(), grid.width());
  auto scatter = [&](int n, int c, int y, int x, T v) {
    if (y >= 0 && y < H && x >= 0 && x < W) grad_input(n, c, y, x) += v;
  };
  for (int n = 0; n < input.batch(); ++n)
    for (int i = 0; i < grid.height(); ++i)
      for (int j = 0; j < grid.width(); ++j) {
        const T px = to_pixel(grid.x(n, i, j), W);
        const T py = to_pixel(grid.y(n, i, j), H);
        const int x0 = static_cast<int>(std::floor(px));
        const int y0 = static_cast<int>(std::floor(py));
        const T ax = px - T(x0), ay = py - T(y0);
        T dpx = T(0), dpy = T(0);
        for (int c = 0; c < input.channels(); ++c) {
          const T g = grad_out(n, c, i, j);
          scatter(n, c, y0, x0, (T(1) - ax) * (T(1) - ay) * g);
          scatter(n, c, y0, x0 + 1, ax * (T(1) - ay) * g);
          scatter(n, c, y0 + 1, x0, (T(1) - ax) * ay * g);
          scatter(n, c, y0 + 1, x0 + 1, ax * ay * g);
          const T v00 = pixel(input, n, c, y0, x0), v01 = pixel(input, n, c, y0, x0 + 1);
          const T v10 = pixel(input, n, c, y0 + 1, x0), v11 = pixel(input, n, c, y0 + 1, x0 + 1);
          dpx += g * ((T(1) - ay) * (v01 - v00) + ay * (v11 - v10));
          dpy += g * ((T(1) - ax) * (v10 - v00) + ax * (v11 - v01));
        }
        grad_grid.x(n, i, j) = W > 1 ? dpx * T(W - 1) / T(2) : T(0);
        grad_grid.y(n, i, j) = H > 1 ? dpy * T(H - 1) / T(2) : T(0);
      }
}

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& input) {
  const int H = input.height(), W = input.width();
  Tensor<T> out(input.batch(), input.channels(), 2 * H, 2 * W);
  auto src_pos = [](int o, int in) {
    return in == 1 ? 0.0 : static_cast<double>(o) * (in - 1) / (2 * in - 1);
  };
  for (int n = 0; n < input.batch(); ++n)
    for (int c = 0; c < input.channels(); ++c)
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j) {
          const double sy = src_pos(i, H), sx = src_pos(j, W);
          const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
          const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
          const T fy = T(sy - y0), fx = T(sx - x0);
          out(n, c, i, j) = (T(1) - fy) * ((T(1) - fx) * input(n, c, y0, x0) + fx * input(n, c, y0, x1)) +
                            fy * ((T(1) - fx) * input(n, c, y1, x0) + fx * input(n, c, y1, x1));
        }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
  const int k = weight.height();
  const int Ho = (input.height() + 2 * pad - k) / stride + 1;
  const int Wo = (input.width() + 2 * pad - k) / stride + 1;
  Tensor<T> out(input.batch(), weight.batch(), Ho, Wo);
  for (int n = 0; n < input.batch(); ++n)
    for (int o = 0; o < weight.batch(); ++o)
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          T acc = bias[o];
          for (int c = 0; c < input.channels(); ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj)
                acc += weight(o, c, ki, kj) * pixel(input, n, c, oy * stride - pad + ki, ox * stride - pad + kj);
          out(n, o, oy, ox) = acc;
        }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     int stride, int pad, Tensor<T>& grad_input, Tensor<T>& grad_weight,
                     Tensor<T>& grad_bias) {
  const int k = weight.height();
  grad_input = Tensor<T>(input.shape());
  for (int n = 0; n < grad_out.batch(); ++n)
    for (int o = 0; o < grad_out.channels(); ++o)
      for (int oy = 0; oy < grad_out.height(); ++oy)
        for (int ox = 0; ox < grad_out.width(); ++ox) {
          const T g = grad_out(n, o, oy, ox);
          grad_bias[o] += g;
          for (int c = 0; c < input.channels(); ++c)
            for (int ki = 0; ki < k; ++ki)
              for (int kj = 0; kj < k; ++kj) {
                const int iy = oy * stride - pad + ki, ix = ox * stride - pad + kj;
                if (iy < 0 || iy >= input.height() || ix < 0 || ix >= input.width()) continue;
                grad_weight(o, c, ki, kj) += g * input(n, c, iy, ix);
                grad_input(n, c, iy, ix) += g * weight(o, c, ki, kj);
              }
        }
}

#define X2FACE_INSTANTIATE_REFERENCE(T)                                                           \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const SamplerGrid<T>&);                    \
  template void bilinear_sample_backward(const Tensor<T>&, const SamplerGrid<T>&,                 \
                                         const Tensor<T>&, Tensor<T>&, SamplerGrid<T>&);          \
  template Tensor<T> bilinear_upsample2x(const Tensor<T>&);                                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);     \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,  \
                                Tensor<T>&, Tensor<T>&, Tensor<T>&);

X2FACE_INSTANTIATE_REFERENCE(float)
X2FACE_INSTANTIATE_REFERENCE(double)

}  // namespace x2face::ops::reference
