#include "rapkit/models/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rapkit/rng.hpp"
#include "rapkit/util/parallel.hpp"

namespace rapkit {

namespace {

// d softmax-CE / d logits into g, scaled; returns CE value
float ce_grad_row(const float* logits, std::size_t classes, int label, float scale,
                  float* g) {
  float m = logits[0];
  for (std::size_t c = 1; c < classes; ++c) m = std::max(m, logits[c]);
  float sum = 0.0f;
  for (std::size_t c = 0; c < classes; ++c) sum += std::exp(logits[c] - m);
  const float lse = m + std::log(sum);
  for (std::size_t c = 0; c < classes; ++c) g[c] = scale * std::exp(logits[c] - lse);
  g[label] -= scale;
  return lse - logits[label];
}

struct ParamRefs {
  std::vector<Tensor<float>*> tensors;
  std::vector<std::size_t> fan_in;  // 0 for biases
};

}  // namespace

// Friend of the toy models; owns the parameter-gradient backward passes the
// public Model interface does not expose.
template <typename ModelT>
class ToyTrainer;

template <>
class ToyTrainer<MlpModel<float>> {
 public:
  using M = MlpModel<float>;

  static ParamRefs params(M& m) {
    ParamRefs p;
    for (std::size_t i = 0; i < m.w_.size(); ++i) {
      p.tensors.push_back(&m.w_[i]);
      p.fan_in.push_back(m.w_[i].dim(1));
      p.tensors.push_back(&m.b_[i]);
      p.fan_in.push_back(0);
    }
    return p;
  }

  // grads layout matches params(): [w0, b0, w1, b1, ...]
  static float accumulate(const M& m, const float* x, int label, float scale,
                          std::vector<Tensor<float>>& grads) {
    std::vector<std::vector<float>> acts;
    m.run_forward(x, acts);
    const auto& logits = acts.back();
    std::vector<float> g(logits.size());
    const float ce = ce_grad_row(logits.data(), logits.size(), label, scale, g.data());
    const std::size_t layers = m.w_.size();
    std::vector<float> gprev;
    for (std::size_t li = layers; li-- > 0;) {
      nn::dense_backward_params(acts[li].data(), g.data(), grads[2 * li], grads[2 * li + 1]);
      if (li == 0) break;
      gprev.assign(m.w_[li].dim(1), 0.0f);
      nn::dense_backward_input(m.w_[li], g.data(), gprev.data());
      nn::relu_backward(acts[li].data(), gprev.data(), gprev.data(), gprev.size());
      g = std::move(gprev);
    }
    return ce;
  }
};

template <>
class ToyTrainer<SmallCnnModel<float>> {
 public:
  using M = SmallCnnModel<float>;

  static ParamRefs params(M& m) {
    ParamRefs p;
    auto add = [&](Tensor<float>& t, std::size_t fan) {
      p.tensors.push_back(&t);
      p.fan_in.push_back(fan);
    };
    add(m.conv1_w_, m.conv1_w_.dim(1));
    add(m.conv1_b_, 0);
    add(m.conv2_w_, m.conv2_w_.dim(1));
    add(m.conv2_b_, 0);
    add(m.fc1_w_, m.fc1_w_.dim(1));
    add(m.fc1_b_, 0);
    add(m.fc2_w_, m.fc2_w_.dim(1));
    add(m.fc2_b_, 0);
    return p;
  }

  // grads layout: [conv1_w, conv1_b, conv2_w, conv2_b, fc1_w, fc1_b, fc2_w, fc2_b]
  static float accumulate(const M& m, const float* x, int label, float scale,
                          std::vector<Tensor<float>>& grads) {
    typename M::Acts a;
    m.run_forward(x, a);
    std::vector<float> glog(a.logits.size());
    const float ce = ce_grad_row(a.logits.data(), a.logits.size(), label, scale, glog.data());

    const auto shape = m.input_shape();
    const std::size_t h = shape[1], w = shape[2];
    const std::size_t h2 = h / 2, w2 = w / 2;

    nn::dense_backward_params(a.fc1.data(), glog.data(), grads[6], grads[7]);
    std::vector<float> gfc1(a.fc1.size());
    nn::dense_backward_input(m.fc2_w_, glog.data(), gfc1.data());
    nn::relu_backward(a.fc1.data(), gfc1.data(), gfc1.data(), gfc1.size());

    nn::dense_backward_params(a.pool2.data(), gfc1.data(), grads[4], grads[5]);
    std::vector<float> gpool2(a.pool2.size());
    nn::dense_backward_input(m.fc1_w_, gfc1.data(), gpool2.data());

    std::vector<float> gconv2(a.conv2.size());
    nn::avgpool2_backward(gpool2.data(), std::size_t(m.cnn_.conv2), h2, w2, gconv2.data());
    nn::relu_backward(a.conv2.data(), gconv2.data(), gconv2.data(), gconv2.size());
    nn::conv3x3_backward_params(a.col2, gconv2.data(), h2 * w2, grads[2], grads[3]);

    std::vector<float> gpool1(a.pool1.size()), gcol;
    nn::conv3x3_backward_input(m.conv2_w_, gconv2.data(), std::size_t(m.cnn_.conv1), h2, w2,
                               gpool1.data(), gcol);
    std::vector<float> gconv1(a.conv1.size());
    nn::avgpool2_backward(gpool1.data(), std::size_t(m.cnn_.conv1), h, w, gconv1.data());
    nn::relu_backward(a.conv1.data(), gconv1.data(), gconv1.data(), gconv1.size());
    nn::conv3x3_backward_params(a.col1, gconv1.data(), h * w, grads[0], grads[1]);
    return ce;
  }
};

namespace {

template <typename ModelT>
double evaluate_accuracy(const ModelT& model, const data::Dataset& ds) {
  if (ds.empty()) return 0.0;
  std::size_t correct = 0;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const auto batch = ds.batch(start, chunk);
    const auto preds = predict_classes(model.forward(batch.pixels));
    for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == batch.labels[i];
  }
  return double(correct) / double(ds.size());
}

Preprocessing dataset_preprocessing(const data::Dataset& train) {
  const auto shape = train.image_shape();
  Preprocessing prep = Preprocessing::identity(shape[0]);
  if (train.empty()) return prep;
  const auto batch = train.all();
  const std::size_t n = batch.size(), hw = shape[1] * shape[2];
  for (std::size_t c = 0; c < shape[0]; ++c) {
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto img = batch.pixels.image(i);
      for (std::size_t k = 0; k < hw; ++k) {
        const double v = img[c * hw + k];
        sum += v;
        sum_sq += v * v;
      }
    }
    const double count = double(n) * double(hw);
    const double mean = sum / count;
    const double var = std::max(sum_sq / count - mean * mean, 1e-4);
    prep.mean[c] = mean;
    prep.std[c] = std::sqrt(var);
  }
  return prep;
}

template <typename ModelT>
TrainResult train_model(ModelT& model, const ToyModelSpec& spec, const data::Dataset& train,
                        const data::Dataset& test, const TrainOptions& opts) {
  using Trainer = ToyTrainer<ModelT>;
  ParamRefs params = Trainer::params(model);

  // He-normal init, biases zero, fixed parameter order
  Rng init_rng(derive_seed(spec.training_seed, {0x1417u}));
  for (std::size_t p = 0; p < params.tensors.size(); ++p) {
    Tensor<float>& t = *params.tensors[p];
    if (params.fan_in[p] == 0) {
      for (auto& v : t.span()) v = 0.0f;
    } else {
      const double s = std::sqrt(2.0 / double(params.fan_in[p]));
      for (auto& v : t.span()) v = float(init_rng.normal() * s);
    }
  }

  std::vector<Tensor<float>> velocity;
  for (auto* t : params.tensors) velocity.emplace_back(t->shape());

  const auto full = train.all();
  const std::size_t n = full.size();
  if (n == 0) throw TrainingError("empty training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  double lr = opts.lr;
  const int chunks = 4;  // fixed chunking keeps the reduce order worker-independent
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    if (std::find(opts.lr_drop_epochs.begin(), opts.lr_drop_epochs.end(), epoch) !=
        opts.lr_drop_epochs.end())
      lr *= opts.lr_drop_factor;

    Rng shuffle_rng(derive_seed(spec.training_seed, {0x5u, std::uint64_t(epoch)}));
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle_rng.uniform_int(i + 1)]);

    for (std::size_t start = 0; start < n; start += std::size_t(opts.batch_size)) {
      const std::size_t bsz = std::min(std::size_t(opts.batch_size), n - start);
      const float scale = 1.0f / float(bsz);

      std::vector<std::vector<Tensor<float>>> chunk_grads(std::size_t(chunks));
      for (auto& cg : chunk_grads)
        for (auto* t : params.tensors) cg.emplace_back(t->shape());

      parallel_for(std::size_t(chunks), [&](std::size_t ci) {
        for (std::size_t i = ci; i < bsz; i += std::size_t(chunks)) {
          const std::size_t idx = order[start + i];
          Trainer::accumulate(model, full.pixels.image(idx).data(), full.labels[idx],
                              scale, chunk_grads[ci]);
        }
      });
      for (std::size_t ci = 1; ci < std::size_t(chunks); ++ci)
        for (std::size_t p = 0; p < params.tensors.size(); ++p)
          chunk_grads[0][p] += chunk_grads[ci][p];

      for (std::size_t p = 0; p < params.tensors.size(); ++p) {
        Tensor<float>& w = *params.tensors[p];
        Tensor<float>& v = velocity[p];
        const Tensor<float>& g = chunk_grads[0][p];
        const float wd = params.fan_in[p] == 0 ? 0.0f : float(opts.weight_decay);
        const float flr = float(lr), mom = float(opts.momentum);
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = mom * v[k] - flr * (g[k] + wd * w[k]);
          w[k] += v[k];
        }
      }
    }
  }

  TrainResult out;
  out.manifest.spec = spec;
  out.manifest.preprocessing = model.preprocessing();
  out.manifest.train_accuracy = evaluate_accuracy(model, train);
  out.manifest.test_accuracy = evaluate_accuracy(model, test);
  out.weights = model.export_weights();
  if (out.manifest.test_accuracy < opts.accuracy_floor)
    throw TrainingError("held-out accuracy " + std::to_string(out.manifest.test_accuracy) +
                        " below floor " + std::to_string(opts.accuracy_floor));
  return out;
}

}  // namespace

TrainResult train_toy(const ToyModelSpec& spec, const data::Dataset& train,
                      const data::Dataset& test, const TrainOptions& opts) {
  spec.validate();
  if (train.image_shape() != spec.input_shape)
    throw InvalidInput("training data shape does not match the model spec");
  if (train.class_count() > spec.num_classes)
    throw InvalidInput("dataset has more classes than the model spec");

  const Preprocessing prep = dataset_preprocessing(train);
  if (spec.architecture == ModelArch::mlp) {
    MlpModel<float> model(spec.input_shape, spec.num_classes, spec.mlp_hidden, prep);
    return train_model(model, spec, train, test, opts);
  }
  SmallCnnModel<float> model(spec.input_shape, spec.num_classes, spec.cnn, prep);
  return train_model(model, spec, train, test, opts);
}

std::filesystem::path ensure_model(const std::filesystem::path& store_root,
                                   const ToyModelSpec& spec, const data::Dataset& train,
                                   const data::Dataset& test, const TrainOptions& opts) {
  const auto dir = store_root / spec.name;
  if (model_exists(dir)) {
    const auto existing = load_model(dir);
    if (existing.manifest.spec.spec_hash() == spec.spec_hash()) return dir;
  }
  const auto result = train_toy(spec, train, test, opts);
  save_model(dir, result.manifest, result.weights);
  return dir;
}

}  // namespace rapkit
