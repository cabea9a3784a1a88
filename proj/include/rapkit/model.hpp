#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rapkit/errors.hpp"
#include "rapkit/loss.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit {

template <typename T>
struct LossAndGrad {
  T loss;          // batch-mean attack loss
  Tensor<T> grad;  // d loss / d batch pixels, same shape as the batch
};

// Differentiable-classifier contract. Preprocessing (per-channel mean/std) is
// internal: callers always operate in raw [0,1] pixel space. Probe points may
// lie outside [0,1] and must still evaluate.
template <typename T>
class Model {
 public:
  virtual ~Model() = default;

  virtual int num_classes() const = 0;
  virtual std::array<std::size_t, 3> input_shape() const = 0;  // C,H,W
  virtual bool has_input_gradient() const { return true; }
  virtual bool concurrent_inference_safe() const { return true; }

  // N x num_classes logits.
  virtual Tensor<T> forward(const Tensor<T>& batch) const = 0;

  // Batch-mean attack loss and its exact gradient w.r.t. the batch pixels,
  // in one forward + one backward pass.
  virtual LossAndGrad<T> loss_and_input_gradient(const Tensor<T>& batch,
                                                 std::span<const int> labels,
                                                 LossSpec spec) const = 0;

  // Backprop an arbitrary upstream d(scalar)/d(logits) (N x classes) to the
  // input pixels. Lets wrappers (ensembles) differentiate functions of the
  // logits that are not the attack loss.
  virtual Tensor<T> logits_vjp(const Tensor<T>& batch, const Tensor<T>& upstream) const = 0;

  Tensor<T> input_gradient(const Tensor<T>& batch, std::span<const int> labels,
                           LossSpec spec) const {
    return loss_and_input_gradient(batch, labels, spec).grad;
  }

  void check_batch_shape(const Tensor<T>& batch) const {
    const auto s = input_shape();
    if (batch.rank() != 4 || batch.dim(1) != s[0] || batch.dim(2) != s[1] ||
        batch.dim(3) != s[2])
      throw InvalidInput("batch shape does not match model input shape");
  }
};

// argmax with ties broken to the lowest class index
template <typename T>
std::vector<int> predict_classes(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw InvalidInput("logits must be N x classes");
  std::vector<int> out(logits.dim(0));
  const std::size_t classes = logits.dim(1);
  for (std::size_t i = 0; i < logits.dim(0); ++i) {
    const T* row = logits.data() + i * classes;
    int best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = static_cast<int>(c);
    out[i] = best;
  }
  return out;
}

}  // namespace rapkit
