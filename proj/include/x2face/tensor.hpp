#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "x2face/error.hpp"

namespace x2face {

// Four-dimensional extent. For image tensors the axes are
// (batch, channels, height, width); sampler grids use (batch, height, width, 2).
struct Shape4 {
  int d0 = 0;
  int d1 = 0;
  int d2 = 0;
  int d3 = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(d0) * d1 * d2 * d3;
  }
  friend bool operator==(const Shape4&, const Shape4&) = default;
  std::string str() const {
    return "(" + std::to_string(d0) + ", " + std::to_string(d1) + ", " +
           std::to_string(d2) + ", " + std::to_string(d3) + ")";
  }
};

template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape4 shape, T fill = T{0}) : shape_(shape), data_(shape.numel(), fill) {
    require(shape.d0 > 0 && shape.d1 > 0 && shape.d2 > 0 && shape.d3 > 0,
            ErrorCode::kPrecondition, "tensor extents must be positive, got " + shape.str());
  }
  Tensor(int n, int c, int h, int w, T fill = T{0}) : Tensor(Shape4{n, c, h, w}, fill) {}

  const Shape4& shape() const { return shape_; }
  int batch() const { return shape_.d0; }
  int channels() const { return shape_.d1; }
  int height() const { return shape_.d2; }
  int width() const { return shape_.d3; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  // Pointer to the start of sample n / plane (n, c).
  T* sample(int n) { return data_.data() + static_cast<std::size_t>(n) * shape_.d1 * shape_.d2 * shape_.d3; }
  const T* sample(int n) const {
    return data_.data() + static_cast<std::size_t>(n) * shape_.d1 * shape_.d2 * shape_.d3;
  }
  T* plane(int n, int c) { return sample(n) + static_cast<std::size_t>(c) * shape_.d2 * shape_.d3; }
  const T* plane(int n, int c) const {
    return sample(n) + static_cast<std::size_t>(c) * shape_.d2 * shape_.d3;
  }

  T& operator()(int i0, int i1, int i2, int i3) { return data_[index(i0, i1, i2, i3)]; }
  const T& operator()(int i0, int i1, int i2, int i3) const { return data_[index(i0, i1, i2, i3)]; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T{0}); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  // Same data, different extents; element count must agree.
  Tensor reshaped(Shape4 shape) const {
    require(shape.numel() == data_.size(), ErrorCode::kShapeMismatch,
            "cannot reshape " + shape_.str() + " to " + shape.str());
    Tensor out = *this;
    out.shape_ = shape;
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data().begin(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t index(int i0, int i1, int i2, int i3) const {
    return ((static_cast<std::size_t>(i0) * shape_.d1 + i1) * shape_.d2 + i2) * shape_.d3 + i3;
  }

  Shape4 shape_{};
  std::vector<T> data_;
};

// Per-pixel normalized sampling coordinates, layout (batch, height, width, 2).
// Component 0 is x (indexes width), component 1 is y (indexes height).
template <typename T>
struct SamplerGrid {
  Tensor<T> coords;

  SamplerGrid() = default;
  explicit SamplerGrid(Tensor<T> c) : coords(std::move(c)) {
    require(coords.shape().d3 == 2, ErrorCode::kShapeMismatch,
            "sampler grid last dimension must be 2, got " + coords.shape().str());
  }
  SamplerGrid(int n, int h, int w) : coords(Shape4{n, h, w, 2}) {}

  int batch() const { return coords.shape().d0; }
  int height() const { return coords.shape().d1; }
  int width() const { return coords.shape().d2; }
  T& x(int n, int i, int j) { return coords(n, i, j, 0); }
  T& y(int n, int i, int j) { return coords(n, i, j, 1); }
  T x(int n, int i, int j) const { return coords(n, i, j, 0); }
  T y(int n, int i, int j) const { return coords(n, i, j, 1); }

  friend bool operator==(const SamplerGrid&, const SamplerGrid&) = default;
};

// Grid mapping output pixel (i, j) to the normalized center of input pixel (i, j).
template <typename T>
SamplerGrid<T> identity_grid(int batch, int height, int width) {
  SamplerGrid<T> g(batch, height, width);
  for (int n = 0; n < batch; ++n)
    for (int i = 0; i < height; ++i)
      for (int j = 0; j < width; ++j) {
        g.x(n, i, j) = width > 1 ? T(-1) + T(2) * T(j) / T(width - 1) : T(0);
        g.y(n, i, j) = height > 1 ? T(-1) + T(2) * T(i) / T(height - 1) : T(0);
      }
  return g;
}

// Convert between (n, 2, h, w) channel-major head outputs and (n, h, w, 2) grids.
template <typename T>
SamplerGrid<T> grid_from_channels(const Tensor<T>& flow) {
  require(flow.channels() == 2, ErrorCode::kShapeMismatch,
          "flow tensor must have 2 channels, got " + flow.shape().str());
  SamplerGrid<T> g(flow.batch(), flow.height(), flow.width());
  for (int n = 0; n < flow.batch(); ++n)
    for (int i = 0; i < flow.height(); ++i)
      for (int j = 0; j < flow.width(); ++j) {
        g.x(n, i, j) = flow(n, 0, i, j);
        g.y(n, i, j) = flow(n, 1, i, j);
      }
  return g;
}

template <typename T>
Tensor<T> channels_from_grid(const SamplerGrid<T>& g) {
  Tensor<T> flow(g.batch(), 2, g.height(), g.width());
  for (int n = 0; n < g.batch(); ++n)
    for (int i = 0; i < g.height(); ++i)
      for (int j = 0; j < g.width(); ++j) {
        flow(n, 0, i, j) = g.x(n, i, j);
        flow(n, 1, i, j) = g.y(n, i, j);
      }
  return flow;
}

// Select samples [begin, begin + count) along the batch axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& t, int begin, int count) {
  require(begin >= 0 && count > 0 && begin + count <= t.batch(), ErrorCode::kPrecondition,
          "batch slice out of range");
  Shape4 s = t.shape();
  s.d0 = count;
  Tensor<T> out(s);
  const std::size_t per = static_cast<std::size_t>(s.d1) * s.d2 * s.d3;
  std::copy_n(t.sample(begin), per * count, out.ptr());
  return out;
}

template <typename T>
Tensor<T> concat_batch(const std::vector<const Tensor<T>*>& parts) {
  require(!parts.empty(), ErrorCode::kPrecondition, "concat of zero tensors");
  Shape4 s = parts.front()->shape();
  int total = 0;
  for (const auto* p : parts) {
    require(p->channels() == s.d1 && p->height() == s.d2 && p->width() == s.d3,
            ErrorCode::kShapeMismatch, "batch concat shape mismatch");
    total += p->batch();
  }
  s.d0 = total;
  Tensor<T> out(s);
  T* dst = out.ptr();
  for (const auto* p : parts) dst = std::copy(p->data().begin(), p->data().end(), dst);
  return out;
}

template <typename T>
double mean_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(double(a[i]) - double(b[i]));
  return s / static_cast<double>(a.size());
}

}  // namespace x2face
