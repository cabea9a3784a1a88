#pragma once

#include <array>
#include <cmath>
#include <span>

#include "rapkit/model.hpp"
#include "rapkit/util/parallel.hpp"

namespace rapkit {

// Closed-form scalar landscapes wrapped as two-class models. The first logit
// is -L(x) and the second is 0, so a targeted logit attack on class 0
// minimizes L exactly: attack_loss = mean_i L(x_i).
template <typename T>
class AnalyticModel : public Model<T> {
 public:
  explicit AnalyticModel(std::array<std::size_t, 3> input_shape)
      : input_shape_(input_shape) {}

  static constexpr LossSpec attack_spec() {
    return {LossKind::logit, AttackMode::targeted};
  }

  int num_classes() const override { return 2; }
  std::array<std::size_t, 3> input_shape() const override { return input_shape_; }

  Tensor<T> forward(const Tensor<T>& batch) const override {
    this->check_batch_shape(batch);
    const std::size_t n = batch.dim(0);
    Tensor<T> logits({n, 2});
    parallel_for(n, [&](std::size_t i) {
      logits.at(i, 0) = -value(batch.image(i));
      logits.at(i, 1) = T(0);
    });
    return logits;
  }

  LossAndGrad<T> loss_and_input_gradient(const Tensor<T>& batch,
                                         std::span<const int> labels,
                                         LossSpec spec) const override {
    const Tensor<T> logits = forward(batch);
    const T loss = attack_loss(logits, labels, spec);
    return {loss, logits_vjp(batch, attack_loss_grad(logits, labels, spec))};
  }

  Tensor<T> logits_vjp(const Tensor<T>& batch, const Tensor<T>& upstream) const override {
    this->check_batch_shape(batch);
    Tensor<T> grad(batch.shape());
    parallel_for(batch.dim(0), [&](std::size_t i) {
      auto g = grad.image(i);
      gradient(batch.image(i), g);
      const T u0 = -upstream.at(i, 0);  // logit0 = -L
      for (auto& v : g) v *= u0;
    });
    return grad;
  }

 protected:
  virtual T value(std::span<const T> x) const = 0;
  virtual void gradient(std::span<const T> x, std::span<T> g) const = 0;  // dL/dx

 private:
  std::array<std::size_t, 3> input_shape_;
};

// L(x) = ||x - center||^2. Isotropic; flatness probes at the minimum read
// exactly f(a) = a^2 for unit directions.
template <typename T>
class QuadraticWellModel final : public AnalyticModel<T> {
 public:
  QuadraticWellModel(std::array<std::size_t, 3> input_shape, Tensor<T> center)
      : AnalyticModel<T>(input_shape), center_(std::move(center)) {}

 protected:
  T value(std::span<const T> x) const override {
    T s = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const T d = x[i] - center_[i];
      s += d * d;
    }
    return s;
  }
  void gradient(std::span<const T> x, std::span<T> g) const override {
    for (std::size_t i = 0; i < x.size(); ++i) g[i] = T(2) * (x[i] - center_[i]);
  }

 private:
  Tensor<T> center_;
};

// Two-basin landscape on [0,1]^2 (input shape 1x1x2): one narrow dip and one
// wide dip of equal depth. Basin geometry is simple enough to certify with a
// brute-force grid.
template <typename T>
class SharpFlatLandscape final : public AnalyticModel<T> {
 public:
  struct Geometry {
    std::array<double, 2> flat_center{0.30, 0.50};
    std::array<double, 2> sharp_center{0.72, 0.50};
    double flat_sigma = 0.16;
    double sharp_sigma = 0.035;
    double flat_depth = 1.0;
    double sharp_depth = 1.0;
  };

  SharpFlatLandscape() : SharpFlatLandscape(Geometry{}) {}
  explicit SharpFlatLandscape(Geometry geo)
      : AnalyticModel<T>({1, 1, 2}), geo_(geo) {}

  const Geometry& geometry() const { return geo_; }

  // scalar double-precision view for grid oracles
  static double loss_at(const Geometry& geo, double u, double v) {
    return 1.0 - geo.flat_depth * bump(u, v, geo.flat_center, geo.flat_sigma) -
           geo.sharp_depth * bump(u, v, geo.sharp_center, geo.sharp_sigma);
  }

 protected:
  T value(std::span<const T> x) const override {
    return static_cast<T>(loss_at(geo_, double(x[0]), double(x[1])));
  }
  void gradient(std::span<const T> x, std::span<T> g) const override {
    const double u = double(x[0]), v = double(x[1]);
    double gu = 0, gv = 0;
    accum_grad(u, v, geo_.flat_center, geo_.flat_sigma, geo_.flat_depth, gu, gv);
    accum_grad(u, v, geo_.sharp_center, geo_.sharp_sigma, geo_.sharp_depth, gu, gv);
    g[0] = static_cast<T>(gu);
    g[1] = static_cast<T>(gv);
  }

 private:
  static double bump(double u, double v, const std::array<double, 2>& c, double sigma) {
    const double du = (u - c[0]) / sigma, dv = (v - c[1]) / sigma;
    return std::exp(-0.5 * (du * du + dv * dv));
  }
  static void accum_grad(double u, double v, const std::array<double, 2>& c, double sigma,
                         double depth, double& gu, double& gv) {
    const double b = bump(u, v, c, sigma);
    gu += depth * b * (u - c[0]) / (sigma * sigma);
    gv += depth * b * (v - c[1]) / (sigma * sigma);
  }

  Geometry geo_;
};

}  // namespace rapkit
