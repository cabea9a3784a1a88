#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <vector>

#include "rapkit/tensor.hpp"

// Per-image layer primitives. Every batch-level routine maps these over the
// images one at a time, so a given image's arithmetic is identical whatever
// the batch around it looks like (bitwise batch-size invariance), and
// image-level parallelism stays reproducible.
namespace rapkit::nn {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using VecMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <typename T>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// ---- dense -----------------------------------------------------------------

// y = W x + b, W is (out x in) row-major
template <typename T>
inline void dense_forward(const Tensor<T>& w, const Tensor<T>& b, const T* x, T* y) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  ConstMatMap<T> wm(w.data(), out, in);
  ConstVecMap<T> xv(x, in);
  VecMap<T> yv(y, out);
  yv.noalias() = wm * xv;
  yv += ConstVecMap<T>(b.data(), out);
}

template <typename T>
inline void dense_backward_input(const Tensor<T>& w, const T* gy, T* gx) {
  const std::size_t out = w.dim(0), in = w.dim(1);
  ConstMatMap<T> wm(w.data(), out, in);
  ConstVecMap<T> gyv(gy, out);
  VecMap<T> gxv(gx, in);
  gxv.noalias() = wm.transpose() * gyv;
}

template <typename T>
inline void dense_backward_params(const T* x, const T* gy, Tensor<T>& gw, Tensor<T>& gb) {
  const std::size_t out = gw.dim(0), in = gw.dim(1);
  MatMap<T> gwm(gw.data(), out, in);
  gwm.noalias() += ConstVecMap<T>(gy, out) * ConstVecMap<T>(x, in).transpose();
  VecMap<T>(gb.data(), out) += ConstVecMap<T>(gy, out);
}

// ---- relu ------------------------------------------------------------------

template <typename T>
inline void relu_forward(T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] < T(0)) x[i] = T(0);
}

// gx = gy where pre-activation > 0 (pre is the cached input to relu)
template <typename T>
inline void relu_backward(const T* pre, const T* gy, T* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) gx[i] = pre[i] > T(0) ? gy[i] : T(0);
}

// ---- 3x3 conv, stride 1, zero pad 1 (spatial size preserved) ---------------

// col is (K=C*9) x (P=H*W), row-major
template <typename T>
inline void im2col3x3(const T* x, std::size_t c_in, std::size_t h, std::size_t w,
                      std::vector<T>& col) {
  const std::size_t p = h * w;
  col.assign(c_in * 9 * p, T(0));
  for (std::size_t c = 0; c < c_in; ++c) {
    const T* xc = x + c * p;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t k = (c * 3 + std::size_t(dy + 1)) * 3 + std::size_t(dx + 1);
        T* row = col.data() + k * p;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = long(y) + dy;
          if (sy < 0 || sy >= long(h)) continue;
          for (std::size_t xpos = 0; xpos < w; ++xpos) {
            const long sx = long(xpos) + dx;
            if (sx < 0 || sx >= long(w)) continue;
            row[y * w + xpos] = xc[std::size_t(sy) * w + std::size_t(sx)];
          }
        }
      }
    }
  }
}

// scatter-add adjoint of im2col3x3
template <typename T>
inline void col2im3x3(const std::vector<T>& gcol, std::size_t c_in, std::size_t h,
                      std::size_t w, T* gx) {
  const std::size_t p = h * w;
  for (std::size_t c = 0; c < c_in; ++c) {
    T* gc = gx + c * p;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t k = (c * 3 + std::size_t(dy + 1)) * 3 + std::size_t(dx + 1);
        const T* row = gcol.data() + k * p;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = long(y) + dy;
          if (sy < 0 || sy >= long(h)) continue;
          for (std::size_t xpos = 0; xpos < w; ++xpos) {
            const long sx = long(xpos) + dx;
            if (sx < 0 || sx >= long(w)) continue;
            gc[std::size_t(sy) * w + std::size_t(sx)] += row[y * w + xpos];
          }
        }
      }
    }
  }
}

// w is (F x K) with K = C*9; y is (F x P) == CHW feature map
template <typename T>
inline void conv3x3_forward(const Tensor<T>& w, const Tensor<T>& b, const std::vector<T>& col,
                            std::size_t p, T* y) {
  const std::size_t f = w.dim(0), k = w.dim(1);
  ConstMatMap<T> wm(w.data(), f, k);
  ConstMatMap<T> cm(col.data(), k, p);
  MatMap<T> ym(y, f, p);
  ym.noalias() = wm * cm;
  for (std::size_t fi = 0; fi < f; ++fi)
    VecMap<T>(y + fi * p, p).array() += b[fi];
}

template <typename T>
inline void conv3x3_backward_input(const Tensor<T>& w, const T* gy, std::size_t c_in,
                                   std::size_t h, std::size_t wpix, T* gx,
                                   std::vector<T>& gcol_scratch) {
  const std::size_t f = w.dim(0), k = w.dim(1), p = h * wpix;
  gcol_scratch.assign(k * p, T(0));
  ConstMatMap<T> wm(w.data(), f, k);
  ConstMatMap<T> gym(gy, f, p);
  MatMap<T>(gcol_scratch.data(), k, p).noalias() = wm.transpose() * gym;
  for (std::size_t i = 0; i < c_in * p; ++i) gx[i] = T(0);
  col2im3x3(gcol_scratch, c_in, h, wpix, gx);
}

template <typename T>
inline void conv3x3_backward_params(const std::vector<T>& col, const T* gy, std::size_t p,
                                    Tensor<T>& gw, Tensor<T>& gb) {
  const std::size_t f = gw.dim(0), k = gw.dim(1);
  MatMap<T> gwm(gw.data(), f, k);
  ConstMatMap<T> gym(gy, f, p);
  ConstMatMap<T> cm(col.data(), k, p);
  gwm.noalias() += gym * cm.transpose();
  for (std::size_t fi = 0; fi < f; ++fi) gb[fi] += ConstVecMap<T>(gy + fi * p, p).sum();
}

// ---- 2x2 average pool, stride 2 ---------------------------------------------

template <typename T>
inline void avgpool2_forward(const T* x, std::size_t c, std::size_t h, std::size_t w, T* y) {
  const std::size_t ho = h / 2, wo = w / 2;
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* xc = x + ci * h * w;
    T* yc = y + ci * ho * wo;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const std::size_t r = 2 * i, s = 2 * j;
        yc[i * wo + j] = (xc[r * w + s] + xc[r * w + s + 1] + xc[(r + 1) * w + s] +
                          xc[(r + 1) * w + s + 1]) *
                         T(0.25);
      }
  }
}

template <typename T>
inline void avgpool2_backward(const T* gy, std::size_t c, std::size_t h, std::size_t w, T* gx) {
  const std::size_t ho = h / 2, wo = w / 2;
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* gyc = gy + ci * ho * wo;
    T* gxc = gx + ci * h * w;
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        const T v = gyc[i * wo + j] * T(0.25);
        const std::size_t r = 2 * i, s = 2 * j;
        gxc[r * w + s] = v;
        gxc[r * w + s + 1] = v;
        gxc[(r + 1) * w + s] = v;
        gxc[(r + 1) * w + s + 1] = v;
      }
  }
}

}  // namespace rapkit::nn
