#include "x2face/diffops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

namespace x2face::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Maps a normalized coordinate to a pixel-space position. Positions within a
// few ulps of a pixel center are snapped onto it so identity grids are exact.
template <typename T>
inline T to_pixel(T g, int size) {
  if (size <= 1) return T(0);
  T p = (g + T(1)) * T(size - 1) / T(2);
  const T r = std::nearbyint(p);
  if (std::abs(p - r) <= T(8) * std::numeric_limits<T>::epsilon() * T(size)) p = r;
  return p;
}

struct Corner {
  int x0, y0;
  bool vx0, vx1, vy0, vy1;
};

template <typename T>
inline Corner corner_of(T px, T py, int w, int h, T& wx, T& wy) {
  const T fx = std::floor(px);
  const T fy = std::floor(py);
  wx = px - fx;
  wy = py - fy;
  Corner c{};
  // Clamp huge coordinates before the int conversion; they sample zeros anyway.
  const T lim = T(1 << 24);
  c.x0 = static_cast<int>(std::clamp(fx, -lim, lim));
  c.y0 = static_cast<int>(std::clamp(fy, -lim, lim));
  c.vx0 = c.x0 >= 0 && c.x0 < w;
  c.vx1 = c.x0 + 1 >= 0 && c.x0 + 1 < w;
  c.vy0 = c.y0 >= 0 && c.y0 < h;
  c.vy1 = c.y0 + 1 >= 0 && c.y0 + 1 < h;
  return c;
}

void check_grid(const Shape4& in, int grid_batch) {
  require(in.d0 == grid_batch, ErrorCode::kPrecondition,
          "bilinear_sample: input batch " + std::to_string(in.d0) + " != grid batch " +
              std::to_string(grid_batch));
}

}  // namespace

template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplerGrid<T>& grid) {
  check_grid(input.shape(), grid.batch());
  const int N = input.batch(), C = input.channels(), H = input.height(), W = input.width();
  const int Ho = grid.height(), Wo = grid.width();
  Tensor<T> out(N, C, Ho, Wo);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int i = 0; i < Ho; ++i) {
      for (int j = 0; j < Wo; ++j) {
        T wx, wy;
        const Corner k = corner_of(to_pixel(grid.x(n, i, j), W), to_pixel(grid.y(n, i, j), H),
                                   W, H, wx, wy);
        const T w00 = (T(1) - wx) * (T(1) - wy), w01 = wx * (T(1) - wy);
        const T w10 = (T(1) - wx) * wy, w11 = wx * wy;
        for (int c = 0; c < C; ++c) {
          const T* src = input.plane(n, c);
          T v = T(0);
          if (k.vy0 && k.vx0) v += w00 * src[k.y0 * W + k.x0];
          if (k.vy0 && k.vx1) v += w01 * src[k.y0 * W + k.x0 + 1];
          if (k.vy1 && k.vx0) v += w10 * src[(k.y0 + 1) * W + k.x0];
          if (k.vy1 && k.vx1) v += w11 * src[(k.y0 + 1) * W + k.x0 + 1];
          out(n, c, i, j) = v;
        }
      }
    }
  }
  return out;
}

template <typename T>
void bilinear_sample_backward(const Tensor<T>& input, const SamplerGrid<T>& grid,
                              const Tensor<T>& grad_out, Tensor<T>* grad_input,
                              SamplerGrid<T>* grad_grid) {
  check_grid(input.shape(), grid.batch());
  const int N = input.batch(), C = input.channels(), H = input.height(), W = input.width();
  const int Ho = grid.height(), Wo = grid.width();
  require(grad_out.shape() == Shape4{N, C, Ho, Wo}, ErrorCode::kShapeMismatch,
          "bilinear_sample_backward: grad_out shape " + grad_out.shape().str());

  if (grad_input != nullptr) {
    *grad_input = Tensor<T>(input.shape());
    // Each (n, c) plane is owned by one thread, so scatters never race.
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int c = 0; c < C; ++c) {
        T* dst = grad_input->plane(n, c);
        const T* g = grad_out.plane(n, c);
        for (int i = 0; i < Ho; ++i) {
          for (int j = 0; j < Wo; ++j) {
            T wx, wy;
            const Corner k = corner_of(to_pixel(grid.x(n, i, j), W),
                                       to_pixel(grid.y(n, i, j), H), W, H, wx, wy);
            const T go = g[i * Wo + j];
            if (k.vy0 && k.vx0) dst[k.y0 * W + k.x0] += (T(1) - wx) * (T(1) - wy) * go;
            if (k.vy0 && k.vx1) dst[k.y0 * W + k.x0 + 1] += wx * (T(1) - wy) * go;
            if (k.vy1 && k.vx0) dst[(k.y0 + 1) * W + k.x0] += (T(1) - wx) * wy * go;
            if (k.vy1 && k.vx1) dst[(k.y0 + 1) * W + k.x0 + 1] += wx * wy * go;
          }
        }
      }
    }
  }

  if (grad_grid != nullptr) {
    *grad_grid = SamplerGrid<T>(N, Ho, Wo);
    const T sx = W > 1 ? T(W - 1) / T(2) : T(0);
    const T sy = H > 1 ? T(H - 1) / T(2) : T(0);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
      for (int i = 0; i < Ho; ++i) {
        for (int j = 0; j < Wo; ++j) {
          T wx, wy;
          const Corner k = corner_of(to_pixel(grid.x(n, i, j), W), to_pixel(grid.y(n, i, j), H),
                                     W, H, wx, wy);
          T dx = T(0), dy = T(0);
          for (int c = 0; c < C; ++c) {
            const T* src = input.plane(n, c);
            const T v00 = (k.vy0 && k.vx0) ? src[k.y0 * W + k.x0] : T(0);
            const T v01 = (k.vy0 && k.vx1) ? src[k.y0 * W + k.x0 + 1] : T(0);
            const T v10 = (k.vy1 && k.vx0) ? src[(k.y0 + 1) * W + k.x0] : T(0);
            const T v11 = (k.vy1 && k.vx1) ? src[(k.y0 + 1) * W + k.x0 + 1] : T(0);
            const T go = grad_out(n, c, i, j);
            dx += go * ((T(1) - wy) * (v01 - v00) + wy * (v11 - v10));
            dy += go * ((T(1) - wx) * (v10 - v00) + wx * (v11 - v01));
          }
          grad_grid->x(n, i, j) = dx * sx;
          grad_grid->y(n, i, j) = dy * sy;
        }
      }
    }
  }
}

namespace {

// Source index pairs and weights for corner-aligned resampling along one axis.
template <typename T>
struct AxisMap {
  std::vector<int> lo, hi;
  std::vector<T> frac;
};

template <typename T>
AxisMap<T> axis_map(int in, int out) {
  AxisMap<T> m;
  m.lo.resize(out);
  m.hi.resize(out);
  m.frac.resize(out);
  for (int o = 0; o < out; ++o) {
    if (in == 1 || out == 1) {
      m.lo[o] = m.hi[o] = 0;
      m.frac[o] = T(0);
      continue;
    }
    // Exact rational position o*(in-1)/(out-1).
    const long num = static_cast<long>(o) * (in - 1);
    const long den = out - 1;
    const int lo = static_cast<int>(num / den);
    m.lo[o] = lo;
    m.hi[o] = std::min(lo + 1, in - 1);
    m.frac[o] = T(num - static_cast<long>(lo) * den) / T(den);
  }
  return m;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, int height, int width) {
  require(height >= 1 && width >= 1, ErrorCode::kPrecondition, "resize target must be positive");
  const int N = input.batch(), C = input.channels(), H = input.height(), W = input.width();
  const auto my = axis_map<T>(H, height);
  const auto mx = axis_map<T>(W, width);
  Tensor<T> out(N, C, height, width);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* src = input.plane(n, c);
      T* dst = out.plane(n, c);
      for (int i = 0; i < height; ++i) {
        const T fy = my.frac[i];
        const T* r0 = src + my.lo[i] * W;
        const T* r1 = src + my.hi[i] * W;
        for (int j = 0; j < width; ++j) {
          const T fx = mx.frac[j];
          const T top = (T(1) - fx) * r0[mx.lo[j]] + fx * r0[mx.hi[j]];
          const T bot = (T(1) - fx) * r1[mx.lo[j]] + fx * r1[mx.hi[j]];
          dst[i * width + j] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& input) {
  return bilinear_resize(input, input.height() * 2, input.width() * 2);
}

template <typename T>
Tensor<T> bilinear_upsample2x_backward(const Tensor<T>& grad_out, Shape4 input_shape) {
  const int N = input_shape.d0, C = input_shape.d1, H = input_shape.d2, W = input_shape.d3;
  const int Ho = 2 * H, Wo = 2 * W;
  require(grad_out.shape() == Shape4{N, C, Ho, Wo}, ErrorCode::kShapeMismatch,
          "upsample backward: grad shape " + grad_out.shape().str());
  const auto my = axis_map<T>(H, Ho);
  const auto mx = axis_map<T>(W, Wo);
  Tensor<T> grad(input_shape);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T* g = grad_out.plane(n, c);
      T* dst = grad.plane(n, c);
      for (int i = 0; i < Ho; ++i) {
        const T fy = my.frac[i];
        T* r0 = dst + my.lo[i] * W;
        T* r1 = dst + my.hi[i] * W;
        for (int j = 0; j < Wo; ++j) {
          const T fx = mx.frac[j];
          const T go = g[i * Wo + j];
          r0[mx.lo[j]] += (T(1) - fy) * (T(1) - fx) * go;
          r0[mx.hi[j]] += (T(1) - fy) * fx * go;
          r1[mx.lo[j]] += fy * (T(1) - fx) * go;
          r1[mx.hi[j]] += fy * fx * go;
        }
      }
    }
  }
  return grad;
}

namespace {

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

template <typename T>
void im2col(const T* src, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* col) {
  const int rows = C * k * k;
#pragma omp parallel for schedule(static)
  for (int r = 0; r < rows; ++r) {
    const int c = r / (k * k);
    const int ki = (r / k) % k;
    const int kj = r % k;
    const T* plane = src + static_cast<std::size_t>(c) * H * W;
    T* dst = col + static_cast<std::size_t>(r) * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy) {
      const int iy = oy * stride - pad + ki;
      if (iy < 0 || iy >= H) {
        std::fill_n(dst + oy * Wo, Wo, T(0));
        continue;
      }
      for (int ox = 0; ox < Wo; ++ox) {
        const int ix = ox * stride - pad + kj;
        dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? plane[iy * W + ix] : T(0);
      }
    }
  }
}

template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int Ho, int Wo, T* dst) {
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    T* plane = dst + static_cast<std::size_t>(c) * H * W;
    std::fill_n(plane, H * W, T(0));
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + static_cast<std::size_t>((c * k + ki) * k + kj) * Ho * Wo;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < W) plane[iy * W + ix] += src[oy * Wo + ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require(weight.channels() == input.channels(), ErrorCode::kShapeMismatch,
          "conv2d: weight expects " + std::to_string(weight.channels()) +
              " input channels, got " + std::to_string(input.channels()));
  require(weight.height() == weight.width(), ErrorCode::kShapeMismatch, "conv2d: non-square kernel");
  require(bias.size() == static_cast<std::size_t>(weight.batch()), ErrorCode::kShapeMismatch,
          "conv2d: bias length mismatch");
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int pad) {
  check_conv(input, weight, bias);
  const int N = input.batch(), C = input.channels(), H = input.height(), W = input.width();
  const int O = weight.batch(), k = weight.height();
  const int Ho = conv_out(H, k, stride, pad), Wo = conv_out(W, k, stride, pad);
  require(Ho > 0 && Wo > 0, ErrorCode::kShapeMismatch, "conv2d: empty output");
  Tensor<T> out(N, O, Ho, Wo);
  const int K = C * k * k, P = Ho * Wo;
  RowMat<T> col(K, P);
  Eigen::Map<const RowMat<T>> wm(weight.ptr(), O, K);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.ptr(), O);
  for (int n = 0; n < N; ++n) {
    im2col(input.sample(n), C, H, W, k, stride, pad, Ho, Wo, col.data());
    Eigen::Map<RowMat<T>> om(out.sample(n), O, P);
    om.noalias() = wm * col;
    om.colwise() += bv;
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     int stride, int pad, Tensor<T>* grad_input, Tensor<T>& grad_weight,
                     Tensor<T>& grad_bias) {
  const int N = input.batch(), C = input.channels(), H = input.height(), W = input.width();
  const int O = weight.batch(), k = weight.height();
  const int Ho = conv_out(H, k, stride, pad), Wo = conv_out(W, k, stride, pad);
  require(grad_out.shape() == Shape4{N, O, Ho, Wo}, ErrorCode::kShapeMismatch,
          "conv2d_backward: grad_out shape " + grad_out.shape().str());
  require(grad_weight.shape() == weight.shape(), ErrorCode::kShapeMismatch,
          "conv2d_backward: grad_weight shape");
  const int K = C * k * k, P = Ho * Wo;
  RowMat<T> col(K, P);
  RowMat<T> dcol;
  Eigen::Map<const RowMat<T>> wm(weight.ptr(), O, K);
  Eigen::Map<RowMat<T>> gw(grad_weight.ptr(), O, K);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> gb(grad_bias.ptr(), O);
  if (grad_input != nullptr) *grad_input = Tensor<T>(input.shape());
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const RowMat<T>> go(grad_out.sample(n), O, P);
    im2col(input.sample(n), C, H, W, k, stride, pad, Ho, Wo, col.data());
    gw.noalias() += go * col.transpose();
    gb += go.rowwise().sum();
    if (grad_input != nullptr) {
      dcol.noalias() = wm.transpose() * go;
      col2im(dcol.data(), C, H, W, k, stride, pad, Ho, Wo, grad_input->sample(n));
    }
  }
}

template <typename T>
Tensor<T> conv2d_backward_input(const Tensor<T>& weight, const Tensor<T>& grad_out,
                                Shape4 input_shape, int stride, int pad) {
  const int N = input_shape.d0, C = input_shape.d1, H = input_shape.d2, W = input_shape.d3;
  const int O = weight.batch(), k = weight.height();
  const int Ho = conv_out(H, k, stride, pad), Wo = conv_out(W, k, stride, pad);
  require(grad_out.shape() == Shape4{N, O, Ho, Wo} && weight.channels() == C,
          ErrorCode::kShapeMismatch,
          "conv2d_backward_input: grad_out shape " + grad_out.shape().str());
  const int K = C * k * k, P = Ho * Wo;
  Eigen::Map<const RowMat<T>> wm(weight.ptr(), O, K);
  Tensor<T> grad_input(input_shape);
  RowMat<T> dcol;
  for (int n = 0; n < N; ++n) {
    Eigen::Map<const RowMat<T>> go(grad_out.sample(n), O, P);
    dcol.noalias() = wm.transpose() * go;
    col2im(dcol.data(), C, H, W, k, stride, pad, Ho, Wo, grad_input.sample(n));
  }
  return grad_input;
}

template <typename T>
Tensor<T> batch_norm_train(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                           BatchNormCache<T>* cache) {
  const int N = input.batch(), C = input.channels(), HW = input.height() * input.width();
  require(gamma.size() == static_cast<std::size_t>(C), ErrorCode::kShapeMismatch,
          "batch_norm: parameter length mismatch");
  const std::size_t M = static_cast<std::size_t>(N) * HW;
  Tensor<T> out(input.shape());
  Tensor<T> xhat(input.shape());
  std::vector<T> inv_std(C);
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* p = input.plane(n, c);
      for (int i = 0; i < HW; ++i) sum += p[i];
    }
    const double mean = sum / static_cast<double>(M);
    double sq = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* p = input.plane(n, c);
      for (int i = 0; i < HW; ++i) sq += (p[i] - mean) * (p[i] - mean);
    }
    const double var = sq / static_cast<double>(M);
    const T istd = T(1.0 / std::sqrt(var + double(eps)));
    inv_std[c] = istd;
    for (int n = 0; n < N; ++n) {
      const T* p = input.plane(n, c);
      T* xh = xhat.plane(n, c);
      T* o = out.plane(n, c);
      for (int i = 0; i < HW; ++i) {
        xh[i] = (p[i] - T(mean)) * istd;
        o[i] = gamma[c] * xh[i] + beta[c];
      }
    }
    const double unbiased = M > 1 ? sq / static_cast<double>(M - 1) : var;
    running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * T(mean);
    running_var[c] = (T(1) - momentum) * running_var[c] + momentum * T(unbiased);
  }
  if (cache != nullptr) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
  const int N = input.batch(), C = input.channels(), HW = input.height() * input.width();
  Tensor<T> out(input.shape());
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const T scale = gamma[c] / std::sqrt(running_var[c] + eps);
      const T shift = beta[c] - running_mean[c] * scale;
      const T* p = input.plane(n, c);
      T* o = out.plane(n, c);
      for (int i = 0; i < HW; ++i) o[i] = p[i] * scale + shift;
    }
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                              const Tensor<T>& gamma, Tensor<T>& grad_gamma, Tensor<T>& grad_beta) {
  const Tensor<T>& xhat = cache.normalized;
  const int N = grad_out.batch(), C = grad_out.channels(), HW = grad_out.height() * grad_out.width();
  require(xhat.shape() == grad_out.shape(), ErrorCode::kShapeMismatch,
          "batch_norm_backward: stale cache");
  const T M = T(static_cast<double>(N) * HW);
  Tensor<T> grad(grad_out.shape());
#pragma omp parallel for schedule(static)
  for (int c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* g = grad_out.plane(n, c);
      const T* xh = xhat.plane(n, c);
      for (int i = 0; i < HW; ++i) {
        sum_g += g[i];
        sum_gx += double(g[i]) * xh[i];
      }
    }
    grad_beta[c] += T(sum_g);
    grad_gamma[c] += T(sum_gx);
    const T k = gamma[c] * cache.inv_std[c] / M;
    for (int n = 0; n < N; ++n) {
      const T* g = grad_out.plane(n, c);
      const T* xh = xhat.plane(n, c);
      T* d = grad.plane(n, c);
      for (int i = 0; i < HW; ++i) d[i] = k * (M * g[i] - T(sum_g) - xh[i] * T(sum_gx));
    }
  }
  return grad;
}

namespace {

template <typename T, typename F>
Tensor<T> map_unary(const Tensor<T>& x, F f) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.size();
  const T* src = x.ptr();
  T* dst = out.ptr();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(src[i]);
  return out;
}

template <typename T, typename F>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, F f) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          "elementwise shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.shape());
  const std::size_t n = a.size();
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* dst = out.ptr();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dst[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope) {
  return map_unary(x, [slope](T v) { return v > T(0) ? v : slope * v; });
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out, T slope) {
  return map_binary(x, grad_out, [slope](T v, T g) { return v > T(0) ? g : slope * g; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return v > T(0) ? v : T(0); });
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& grad_out) {
  return map_binary(x, grad_out, [](T v, T g) { return v > T(0) ? g : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return map_unary(x, [](T v) { return std::tanh(v); });
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& grad_out) {
  return map_binary(y, grad_out, [](T v, T g) { return g * (T(1) - v * v); });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  const int N = input.batch();
  const int in = static_cast<int>(input.size() / N);
  const int out_dim = weight.batch();
  require(static_cast<int>(weight.size() / out_dim) == in, ErrorCode::kShapeMismatch,
          "linear: input width " + std::to_string(in) + " does not match weight " +
              weight.shape().str());
  Tensor<T> out(N, out_dim, 1, 1);
  Eigen::Map<const RowMat<T>> x(input.ptr(), N, in);
  Eigen::Map<const RowMat<T>> w(weight.ptr(), out_dim, in);
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.ptr(), out_dim);
  Eigen::Map<RowMat<T>> y(out.ptr(), N, out_dim);
  y.noalias() = x * w.transpose();
  y.rowwise() += b;
  return out;
}

template <typename T>
void linear_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                     Tensor<T>* grad_input, Tensor<T>& grad_weight, Tensor<T>& grad_bias) {
  const int N = input.batch();
  const int in = static_cast<int>(input.size() / N);
  const int out_dim = weight.batch();
  Eigen::Map<const RowMat<T>> x(input.ptr(), N, in);
  Eigen::Map<const RowMat<T>> w(weight.ptr(), out_dim, in);
  Eigen::Map<const RowMat<T>> g(grad_out.ptr(), N, out_dim);
  Eigen::Map<RowMat<T>> gw(grad_weight.ptr(), out_dim, in);
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(grad_bias.ptr(), out_dim);
  gw.noalias() += g.transpose() * x;
  gb += g.colwise().sum();
  if (grad_input != nullptr) {
    *grad_input = Tensor<T>(input.shape());
    Eigen::Map<RowMat<T>> gx(grad_input->ptr(), N, in);
    gx.noalias() = g * w;
  }
}

template <typename T>
Tensor<T> max_pool2x(const Tensor<T>& input, std::vector<std::size_t>* argmax) {
  const int N = input.batch(), C = input.channels(), H = input.height(), W = input.width();
  require(H >= 2 && W >= 2, ErrorCode::kShapeMismatch, "max_pool2x: input too small");
  const int Ho = H / 2, Wo = W / 2;
  Tensor<T> out(N, C, Ho, Wo);
  if (argmax != nullptr) argmax->assign(out.size(), 0);
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int c = 0; c < C; ++c) {
      const std::size_t base = static_cast<std::size_t>(n * C + c) * H * W;
      const std::size_t obase = static_cast<std::size_t>(n * C + c) * Ho * Wo;
      for (int i = 0; i < Ho; ++i) {
        for (int j = 0; j < Wo; ++j) {
          std::size_t best = base + (2 * i) * W + 2 * j;
          for (int di = 0; di < 2; ++di)
            for (int dj = 0; dj < 2; ++dj) {
              const std::size_t idx = base + (2 * i + di) * W + 2 * j + dj;
              if (input[idx] > input[best]) best = idx;
            }
          out[obase + i * Wo + j] = input[best];
          if (argmax != nullptr) (*argmax)[obase + i * Wo + j] = best;
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> max_pool2x_backward(const Tensor<T>& grad_out, const std::vector<std::size_t>& argmax,
                              Shape4 input_shape) {
  require(argmax.size() == grad_out.size(), ErrorCode::kShapeMismatch,
          "max_pool2x_backward: stale argmax");
  Tensor<T> grad(input_shape);
  // Windows do not overlap, so each input index receives at most one write.
  for (std::size_t i = 0; i < argmax.size(); ++i) grad[argmax[i]] += grad_out[i];
  return grad;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.batch() == b.batch() && a.height() == b.height() && a.width() == b.width(),
          ErrorCode::kShapeMismatch,
          "concat_channels: " + a.shape().str() + " vs " + b.shape().str());
  Tensor<T> out(a.batch(), a.channels() + b.channels(), a.height(), a.width());
  const std::size_t sa = static_cast<std::size_t>(a.channels()) * a.height() * a.width();
  const std::size_t sb = static_cast<std::size_t>(b.channels()) * b.height() * b.width();
  for (int n = 0; n < a.batch(); ++n) {
    std::copy_n(a.sample(n), sa, out.sample(n));
    std::copy_n(b.sample(n), sb, out.sample(n) + sa);
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& t, int first, Tensor<T>& a, Tensor<T>& b) {
  require(first > 0 && first < t.channels(), ErrorCode::kShapeMismatch, "split_channels: bad split");
  a = Tensor<T>(t.batch(), first, t.height(), t.width());
  b = Tensor<T>(t.batch(), t.channels() - first, t.height(), t.width());
  const std::size_t sa = a.size() / t.batch();
  const std::size_t sb = b.size() / t.batch();
  for (int n = 0; n < t.batch(); ++n) {
    std::copy_n(t.sample(n), sa, a.sample(n));
    std::copy_n(t.sample(n) + sa, sb, b.sample(n));
  }
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src) {
  require(dst.shape() == src.shape(), ErrorCode::kShapeMismatch,
          "add_inplace: " + dst.shape().str() + " vs " + src.shape().str());
  const std::size_t n = dst.size();
  T* d = dst.ptr();
  const T* s = src.ptr();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
}

#define X2FACE_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> bilinear_sample(const Tensor<T>&, const SamplerGrid<T>&);                     \
  template void bilinear_sample_backward(const Tensor<T>&, const SamplerGrid<T>&,                  \
                                         const Tensor<T>&, Tensor<T>*, SamplerGrid<T>*);           \
  template Tensor<T> bilinear_upsample2x(const Tensor<T>&);                                        \
  template Tensor<T> bilinear_upsample2x_backward(const Tensor<T>&, Shape4);                       \
  template Tensor<T> bilinear_resize(const Tensor<T>&, int, int);                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int);      \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, int,   \
                                Tensor<T>*, Tensor<T>&, Tensor<T>&);                               \
  template Tensor<T> conv2d_backward_input(const Tensor<T>&, const Tensor<T>&, Shape4, int, int); \
  template Tensor<T> batch_norm_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                      Tensor<T>&, Tensor<T>&, T, T, BatchNormCache<T>*);           \
  template Tensor<T> batch_norm_infer(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                      const Tensor<T>&, const Tensor<T>&, T);                      \
  template Tensor<T> batch_norm_backward(const Tensor<T>&, const BatchNormCache<T>&,               \
                                         const Tensor<T>&, Tensor<T>&, Tensor<T>&);                \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                                              \
  template Tensor<T> leaky_relu_backward(const Tensor<T>&, const Tensor<T>&, T);                   \
  template Tensor<T> relu(const Tensor<T>&);                                                       \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> tanh(const Tensor<T>&);                                                       \
  template Tensor<T> tanh_backward(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>*, \
                                Tensor<T>&, Tensor<T>&);                                           \
  template Tensor<T> max_pool2x(const Tensor<T>&, std::vector<std::size_t>*);                      \
  template Tensor<T> max_pool2x_backward(const Tensor<T>&, const std::vector<std::size_t>&,        \
                                         Shape4);                                                  \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                          \
  template void split_channels(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);                     \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

X2FACE_INSTANTIATE_OPS(float)
X2FACE_INSTANTIATE_OPS(double)

}  // namespace x2face::ops
