#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "rapkit/errors.hpp"

namespace rapkit {

// Dense row-major tensor. Image batches use NCHW order, logits N x classes.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(count(shape_), T(0)) {}

  Tensor(std::vector<std::size_t> shape, T fill)
      : shape_(std::move(shape)), data_(count(shape_), fill) {}

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return {data_.data(), data_.size()}; }
  std::span<const T> span() const { return {data_.data(), data_.size()}; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // rank-2 accessors
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  // rank-4 NCHW accessors
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  // per-image slice of an NCHW batch (contiguous CHW block)
  std::span<T> image(std::size_t n) {
    const std::size_t stride = size() / shape_[0];
    return {data_.data() + n * stride, stride};
  }
  std::span<const T> image(std::size_t n) const {
    const std::size_t stride = size() / shape_[0];
    return {data_.data() + n * stride, stride};
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  Tensor& operator+=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Tensor& operator-=(const Tensor& o) {
    check_same(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
  friend Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }
  friend Tensor operator*(Tensor a, T s) { return a *= s; }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                           std::multiplies<>());
  }

 private:
  void check_same(const Tensor& o) const {
    if (!same_shape(o)) throw InvalidInput("tensor shape mismatch");
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
inline T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));  // sign(0) = 0
}

template <typename T>
inline void clamp_scalar_box(Tensor<T>& x, T lo, T hi) {
  for (auto& v : x.span()) v = std::clamp(v, lo, hi);
}

// clip x into the L-inf ball of radius eps around center, elementwise
template <typename T>
inline void clamp_linf_ball(Tensor<T>& x, const Tensor<T>& center, T eps) {
  if (!x.same_shape(center)) throw InvalidInput("clamp_linf_ball: shape mismatch");
  const T* c = center.data();
  T* p = x.data();
  for (std::size_t i = 0; i < x.size(); ++i)
    p[i] = std::clamp(p[i], c[i] - eps, c[i] + eps);
}

template <typename T>
inline T linf_distance(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw InvalidInput("linf_distance: shape mismatch");
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
inline bool all_finite(const Tensor<T>& t) {
  for (const auto& v : t.span())
    if (!std::isfinite(v)) return false;
  return true;
}

template <typename To, typename From>
inline Tensor<To> tensor_cast(const Tensor<From>& src) {
  Tensor<To> out(src.shape());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = static_cast<To>(src[i]);
  return out;
}

// Image batch with paired labels. `target_labels` is empty for untargeted
// data; `image_ids` are stable global indices that seed per-image random
// streams (so batching never changes a given image's randomness).
template <typename T>
struct ImageBatch {
  Tensor<T> pixels;                        // N x C x H x W, values in [0,1]
  std::vector<int> labels;                 // y
  std::vector<int> target_labels;          // y_t (optional)
  std::vector<std::int64_t> image_ids;     // global indices

  std::size_t size() const { return pixels.empty() ? 0 : pixels.dim(0); }

  bool has_targets() const { return !target_labels.empty(); }

  void validate() const {
    if (pixels.empty()) {
      if (!labels.empty() || !target_labels.empty())
        throw InvalidInput("empty batch with labels attached");
      return;
    }
    if (pixels.rank() != 4) throw InvalidInput("image batch must be rank-4 (NCHW)");
    if (labels.size() != pixels.dim(0))
      throw InvalidInput("label count does not match batch size");
    if (!target_labels.empty() && target_labels.size() != pixels.dim(0))
      throw InvalidInput("target label count does not match batch size");
    if (image_ids.size() != pixels.dim(0))
      throw InvalidInput("image_ids must cover the batch");
  }
};

template <typename To, typename From>
inline ImageBatch<To> batch_cast(const ImageBatch<From>& src) {
  return ImageBatch<To>{tensor_cast<To>(src.pixels), src.labels, src.target_labels,
                        src.image_ids};
}

}  // namespace rapkit
