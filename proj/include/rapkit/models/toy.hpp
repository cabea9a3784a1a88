#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rapkit/model.hpp"
#include "rapkit/models/layers.hpp"
#include "rapkit/util/parallel.hpp"

namespace rapkit {

template <typename ModelT>
class ToyTrainer;  // parameter-gradient passes live with the trainer

// Per-channel normalization applied inside the model; attack code never sees it.
struct Preprocessing {
  std::vector<double> mean;  // per channel
  std::vector<double> std;   // per channel, > 0

  static Preprocessing identity(std::size_t channels) {
    return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
  }
};

enum class ModelArch { mlp, small_cnn };

inline std::string to_string(ModelArch a) {
  return a == ModelArch::mlp ? "mlp" : "small_cnn";
}

// Named float tensors; the on-disk weight format and the exchange type
// between trainers and typed models.
using WeightMap = std::map<std::string, Tensor<float>>;

namespace detail {

// per-row attack-loss helpers so batch routines can stay per-image
template <typename T>
inline T row_loss(const T* row, std::size_t classes, int label, LossSpec spec) {
  if (spec.kind == LossKind::cross_entropy) {
    const T ce = log_sum_exp(row, classes) - row[label];
    return spec.targeted() ? ce : -ce;
  }
  return spec.targeted() ? -row[label] : row[label];
}

// writes scale * d(row loss)/d(row) into g
template <typename T>
inline void row_loss_grad(const T* row, std::size_t classes, int label, LossSpec spec,
                          T scale, T* g) {
  if (spec.kind == LossKind::cross_entropy) {
    const T lse = log_sum_exp(row, classes);
    const T dir = spec.targeted() ? scale : -scale;
    for (std::size_t c = 0; c < classes; ++c) g[c] = dir * std::exp(row[c] - lse);
    g[label] -= dir;
  } else {
    for (std::size_t c = 0; c < classes; ++c) g[c] = T(0);
    g[label] = spec.targeted() ? -scale : scale;
  }
}

template <typename T>
inline void check_labels_for(const Tensor<T>& batch, std::span<const int> labels,
                             int classes) {
  if (labels.size() != batch.dim(0))
    throw InvalidInput("label count does not match batch size");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw InvalidInput("label out of range at row " + std::to_string(i));
}

}  // namespace detail

// Common scaffolding for models evaluated image-by-image.
template <typename T>
class PerImageModel : public Model<T> {
 public:
  PerImageModel(std::array<std::size_t, 3> input_shape, int classes, Preprocessing prep)
      : input_shape_(input_shape), classes_(classes), prep_(std::move(prep)) {
    if (prep_.mean.size() != input_shape_[0] || prep_.std.size() != input_shape_[0])
      throw InvalidConfig("preprocessing channel count mismatch");
    for (double s : prep_.std)
      if (s <= 0) throw InvalidConfig("preprocessing std must be positive");
  }

  int num_classes() const override { return classes_; }
  std::array<std::size_t, 3> input_shape() const override { return input_shape_; }

  Tensor<T> forward(const Tensor<T>& batch) const override {
    this->check_batch_shape(batch);
    const std::size_t n = batch.dim(0);
    Tensor<T> logits({n, std::size_t(classes_)});
    parallel_for(n, [&](std::size_t i) {
      forward_one(batch.image(i).data(), logits.data() + i * classes_);
    });
    return logits;
  }

  LossAndGrad<T> loss_and_input_gradient(const Tensor<T>& batch,
                                         std::span<const int> labels,
                                         LossSpec spec) const override {
    this->check_batch_shape(batch);
    detail::check_labels_for(batch, labels, classes_);
    const std::size_t n = batch.dim(0);
    Tensor<T> grad(batch.shape());
    std::vector<T> per_loss(n);
    const T inv_n = T(1) / static_cast<T>(n);
    parallel_for(n, [&](std::size_t i) {
      std::vector<T> logits_row(classes_), glogits(classes_);
      forward_one(batch.image(i).data(), logits_row.data());
      for (const T v : logits_row)
        if (!std::isfinite(v)) throw NumericError("non-finite logits");
      per_loss[i] = detail::row_loss(logits_row.data(), std::size_t(classes_), labels[i], spec);
      detail::row_loss_grad(logits_row.data(), std::size_t(classes_), labels[i], spec,
                            inv_n, glogits.data());
      backward_one(batch.image(i).data(), glogits.data(), grad.image(i).data());
    });
    T loss = 0;
    for (const T v : per_loss) loss += v;
    return {loss * inv_n, std::move(grad)};
  }

  Tensor<T> logits_vjp(const Tensor<T>& batch, const Tensor<T>& upstream) const override {
    this->check_batch_shape(batch);
    if (upstream.rank() != 2 || upstream.dim(0) != batch.dim(0) ||
        upstream.dim(1) != std::size_t(classes_))
      throw InvalidInput("upstream gradient shape mismatch");
    Tensor<T> grad(batch.shape());
    parallel_for(batch.dim(0), [&](std::size_t i) {
      backward_one(batch.image(i).data(), upstream.data() + i * classes_,
                   grad.image(i).data());
    });
    return grad;
  }

 protected:
  // z = (x - mean_c) / std_c
  void preprocess_one(const T* x, T* z) const {
    const std::size_t c = input_shape_[0], hw = input_shape_[1] * input_shape_[2];
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T m = static_cast<T>(prep_.mean[ci]), s = static_cast<T>(prep_.std[ci]);
      for (std::size_t i = 0; i < hw; ++i) z[ci * hw + i] = (x[ci * hw + i] - m) / s;
    }
  }
  void preprocess_backward_one(const T* gz, T* gx) const {
    const std::size_t c = input_shape_[0], hw = input_shape_[1] * input_shape_[2];
    for (std::size_t ci = 0; ci < c; ++ci) {
      const T s = static_cast<T>(prep_.std[ci]);
      for (std::size_t i = 0; i < hw; ++i) gx[ci * hw + i] = gz[ci * hw + i] / s;
    }
  }

  virtual void forward_one(const T* x_chw, T* logits_row) const = 0;
  // full forward re-run plus backward; writes d(sum upstream.logits)/dx
  virtual void backward_one(const T* x_chw, const T* glogits, T* gx_chw) const = 0;

  std::array<std::size_t, 3> input_shape_;
  int classes_;
  Preprocessing prep_;

 public:
  const Preprocessing& preprocessing() const { return prep_; }
};

// ---- MLP: flatten -> [dense -> relu]* -> dense ------------------------------

template <typename T>
class MlpModel final : public PerImageModel<T> {
 public:
  MlpModel(std::array<std::size_t, 3> input_shape, int classes, std::vector<int> hidden,
           Preprocessing prep)
      : PerImageModel<T>(input_shape, classes, std::move(prep)), hidden_(std::move(hidden)) {
    std::size_t in = Tensor<T>::count({input_shape[0], input_shape[1], input_shape[2]});
    for (int h : hidden_) {
      if (h <= 0) throw InvalidConfig("mlp hidden width must be positive");
      w_.emplace_back(std::vector<std::size_t>{std::size_t(h), in});
      b_.emplace_back(std::vector<std::size_t>{std::size_t(h)});
      in = std::size_t(h);
    }
    w_.emplace_back(std::vector<std::size_t>{std::size_t(classes), in});
    b_.emplace_back(std::vector<std::size_t>{std::size_t(classes)});
  }

  const std::vector<int>& hidden_widths() const { return hidden_; }
  std::vector<Tensor<T>>& weights() { return w_; }
  std::vector<Tensor<T>>& biases() { return b_; }
  const std::vector<Tensor<T>>& weights() const { return w_; }
  const std::vector<Tensor<T>>& biases() const { return b_; }

  WeightMap export_weights() const {
    WeightMap m;
    for (std::size_t i = 0; i < w_.size(); ++i) {
      m["fc" + std::to_string(i) + ".w"] = tensor_cast<float>(w_[i]);
      m["fc" + std::to_string(i) + ".b"] = tensor_cast<float>(b_[i]);
    }
    return m;
  }
  void import_weights(const WeightMap& m) {
    for (std::size_t i = 0; i < w_.size(); ++i) {
      load_named(m, "fc" + std::to_string(i) + ".w", w_[i]);
      load_named(m, "fc" + std::to_string(i) + ".b", b_[i]);
    }
  }

 protected:
  void forward_one(const T* x, T* logits) const override {
    std::vector<std::vector<T>> acts;
    run_forward(x, acts);
    std::copy(acts.back().begin(), acts.back().end(), logits);
  }

  void backward_one(const T* x, const T* glogits, T* gx) const override {
    std::vector<std::vector<T>> acts;
    run_forward(x, acts);
    const std::size_t layers = w_.size();
    std::vector<T> g(glogits, glogits + this->classes_), gprev;
    for (std::size_t li = layers; li-- > 0;) {
      gprev.assign(w_[li].dim(1), T(0));
      nn::dense_backward_input(w_[li], g.data(), gprev.data());
      if (li > 0)  // relu mask: post-activation of the previous layer
        nn::relu_backward(acts[li].data(), gprev.data(), gprev.data(), gprev.size());
      g = std::move(gprev);
    }
    this->preprocess_backward_one(g.data(), gx);
  }

 private:
  // acts[0] = preprocessed input, acts[i>0] = post-activation of layer i-1
  // (post-relu for hidden layers, raw logits for the last).
  void run_forward(const T* x, std::vector<std::vector<T>>& acts) const {
    const std::size_t layers = w_.size();
    acts.resize(layers + 1);
    acts[0].resize(w_[0].dim(1));
    this->preprocess_one(x, acts[0].data());
    for (std::size_t li = 0; li < layers; ++li) {
      acts[li + 1].resize(w_[li].dim(0));
      nn::dense_forward(w_[li], b_[li], acts[li].data(), acts[li + 1].data());
      if (li + 1 < layers) nn::relu_forward(acts[li + 1].data(), acts[li + 1].size());
    }
  }

  static void load_named(const WeightMap& m, const std::string& key, Tensor<T>& dst) {
    auto it = m.find(key);
    if (it == m.end()) throw InvalidInput("missing weight tensor: " + key);
    if (it->second.shape() != dst.shape())
      throw InvalidInput("weight tensor shape mismatch: " + key);
    dst = tensor_cast<T>(it->second);
  }

  std::vector<int> hidden_;
  std::vector<Tensor<T>> w_, b_;

  template <typename>
  friend class ToyTrainer;
};

// ---- small CNN: [conv3x3 -> relu -> avgpool2] x2 -> dense -> relu -> dense --

struct SmallCnnShape {
  int conv1 = 8;
  int conv2 = 16;
  int hidden = 64;
};

template <typename T>
class SmallCnnModel final : public PerImageModel<T> {
 public:
  SmallCnnModel(std::array<std::size_t, 3> input_shape, int classes, SmallCnnShape shape,
                Preprocessing prep)
      : PerImageModel<T>(input_shape, classes, std::move(prep)), cnn_(shape) {
    const auto [c, h, w] = input_shape;
    if (h % 4 != 0 || w % 4 != 0)
      throw InvalidConfig("small_cnn needs H and W divisible by 4");
    conv1_w_ = Tensor<T>({std::size_t(cnn_.conv1), c * 9});
    conv1_b_ = Tensor<T>({std::size_t(cnn_.conv1)});
    conv2_w_ = Tensor<T>({std::size_t(cnn_.conv2), std::size_t(cnn_.conv1) * 9});
    conv2_b_ = Tensor<T>({std::size_t(cnn_.conv2)});
    flat_ = std::size_t(cnn_.conv2) * (h / 4) * (w / 4);
    fc1_w_ = Tensor<T>({std::size_t(cnn_.hidden), flat_});
    fc1_b_ = Tensor<T>({std::size_t(cnn_.hidden)});
    fc2_w_ = Tensor<T>({std::size_t(classes), std::size_t(cnn_.hidden)});
    fc2_b_ = Tensor<T>({std::size_t(classes)});
  }

  const SmallCnnShape& cnn_shape() const { return cnn_; }

  WeightMap export_weights() const {
    WeightMap m;
    m["conv1.w"] = tensor_cast<float>(conv1_w_);
    m["conv1.b"] = tensor_cast<float>(conv1_b_);
    m["conv2.w"] = tensor_cast<float>(conv2_w_);
    m["conv2.b"] = tensor_cast<float>(conv2_b_);
    m["fc1.w"] = tensor_cast<float>(fc1_w_);
    m["fc1.b"] = tensor_cast<float>(fc1_b_);
    m["fc2.w"] = tensor_cast<float>(fc2_w_);
    m["fc2.b"] = tensor_cast<float>(fc2_b_);
    return m;
  }
  void import_weights(const WeightMap& m) {
    auto load = [&](const std::string& key, Tensor<T>& dst) {
      auto it = m.find(key);
      if (it == m.end()) throw InvalidInput("missing weight tensor: " + key);
      if (it->second.shape() != dst.shape())
        throw InvalidInput("weight tensor shape mismatch: " + key);
      dst = tensor_cast<T>(it->second);
    };
    load("conv1.w", conv1_w_);
    load("conv1.b", conv1_b_);
    load("conv2.w", conv2_w_);
    load("conv2.b", conv2_b_);
    load("fc1.w", fc1_w_);
    load("fc1.b", fc1_b_);
    load("fc2.w", fc2_w_);
    load("fc2.b", fc2_b_);
  }

 protected:
  struct Acts {
    std::vector<T> pre;          // preprocessed input
    std::vector<T> col1, col2;   // im2col matrices
    std::vector<T> conv1, pool1; // post-relu / pooled maps
    std::vector<T> conv2, pool2;
    std::vector<T> fc1;          // post-relu hidden
    std::vector<T> logits;
  };

  void forward_one(const T* x, T* logits) const override {
    Acts a;
    run_forward(x, a);
    std::copy(a.logits.begin(), a.logits.end(), logits);
  }

  void backward_one(const T* x, const T* glogits, T* gx) const override {
    Acts a;
    run_forward(x, a);
    const auto [c, h, w] = this->input_shape_;
    const std::size_t h2 = h / 2, w2 = w / 2;

    std::vector<T> gfc1(cnn_.hidden);
    nn::dense_backward_input(fc2_w_, glogits, gfc1.data());
    nn::relu_backward(a.fc1.data(), gfc1.data(), gfc1.data(), gfc1.size());

    std::vector<T> gpool2(flat_);
    nn::dense_backward_input(fc1_w_, gfc1.data(), gpool2.data());

    std::vector<T> gconv2(std::size_t(cnn_.conv2) * h2 * w2);
    nn::avgpool2_backward(gpool2.data(), cnn_.conv2, h2, w2, gconv2.data());
    nn::relu_backward(a.conv2.data(), gconv2.data(), gconv2.data(), gconv2.size());

    std::vector<T> gpool1(std::size_t(cnn_.conv1) * h2 * w2), gcol;
    nn::conv3x3_backward_input(conv2_w_, gconv2.data(), cnn_.conv1, h2, w2, gpool1.data(),
                               gcol);

    std::vector<T> gconv1(std::size_t(cnn_.conv1) * h * w);
    nn::avgpool2_backward(gpool1.data(), cnn_.conv1, h, w, gconv1.data());
    nn::relu_backward(a.conv1.data(), gconv1.data(), gconv1.data(), gconv1.size());

    std::vector<T> gpre(c * h * w);
    nn::conv3x3_backward_input(conv1_w_, gconv1.data(), c, h, w, gpre.data(), gcol);
    this->preprocess_backward_one(gpre.data(), gx);
  }

  void run_forward(const T* x, Acts& a) const {
    const auto [c, h, w] = this->input_shape_;
    const std::size_t h2 = h / 2, w2 = w / 2;
    a.pre.resize(c * h * w);
    this->preprocess_one(x, a.pre.data());

    nn::im2col3x3(a.pre.data(), c, h, w, a.col1);
    a.conv1.resize(std::size_t(cnn_.conv1) * h * w);
    nn::conv3x3_forward(conv1_w_, conv1_b_, a.col1, h * w, a.conv1.data());
    nn::relu_forward(a.conv1.data(), a.conv1.size());
    a.pool1.resize(std::size_t(cnn_.conv1) * h2 * w2);
    nn::avgpool2_forward(a.conv1.data(), cnn_.conv1, h, w, a.pool1.data());

    nn::im2col3x3(a.pool1.data(), cnn_.conv1, h2, w2, a.col2);
    a.conv2.resize(std::size_t(cnn_.conv2) * h2 * w2);
    nn::conv3x3_forward(conv2_w_, conv2_b_, a.col2, h2 * w2, a.conv2.data());
    nn::relu_forward(a.conv2.data(), a.conv2.size());
    a.pool2.resize(flat_);
    nn::avgpool2_forward(a.conv2.data(), cnn_.conv2, h2, w2, a.pool2.data());

    a.fc1.resize(cnn_.hidden);
    nn::dense_forward(fc1_w_, fc1_b_, a.pool2.data(), a.fc1.data());
    nn::relu_forward(a.fc1.data(), a.fc1.size());
    a.logits.resize(this->classes_);
    nn::dense_forward(fc2_w_, fc2_b_, a.fc1.data(), a.logits.data());
  }

 private:
  SmallCnnShape cnn_;
  std::size_t flat_ = 0;
  Tensor<T> conv1_w_, conv1_b_, conv2_w_, conv2_b_, fc1_w_, fc1_b_, fc2_w_, fc2_b_;

  template <typename>
  friend class ToyTrainer;
};

// ---- linear model (tests and closed-form oracles): logits = W flatten(z) + b

template <typename T>
class LinearModel final : public PerImageModel<T> {
 public:
  LinearModel(std::array<std::size_t, 3> input_shape, int classes, Preprocessing prep)
      : PerImageModel<T>(input_shape, classes, std::move(prep)),
        w_({std::size_t(classes),
            Tensor<T>::count({input_shape[0], input_shape[1], input_shape[2]})}),
        b_({std::size_t(classes)}) {}

  Tensor<T>& weight() { return w_; }
  Tensor<T>& bias() { return b_; }

 protected:
  void forward_one(const T* x, T* logits) const override {
    std::vector<T> z(w_.dim(1));
    this->preprocess_one(x, z.data());
    nn::dense_forward(w_, b_, z.data(), logits);
  }
  void backward_one(const T*, const T* glogits, T* gx) const override {
    std::vector<T> gz(w_.dim(1));
    nn::dense_backward_input(w_, glogits, gz.data());
    this->preprocess_backward_one(gz.data(), gx);
  }

 private:
  Tensor<T> w_, b_;
};

}  // namespace rapkit
