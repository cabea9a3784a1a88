#pragma once

#include <memory>
#include <vector>

#include "rapkit/model.hpp"

namespace rapkit {

// Logit-averaging ensemble: forward is the arithmetic mean of member logits,
// gradients are the mean of member vjps (shared upstream, by linearity).
template <typename T>
class EnsembleModel final : public Model<T> {
 public:
  explicit EnsembleModel(std::vector<std::shared_ptr<const Model<T>>> members)
      : members_(std::move(members)) {
    if (members_.empty()) throw InvalidConfig("ensemble needs at least one member");
    for (const auto& m : members_) {
      if (!m) throw InvalidConfig("null ensemble member");
      if (m->num_classes() != members_[0]->num_classes())
        throw InvalidConfig("ensemble members disagree on class count");
      if (m->input_shape() != members_[0]->input_shape())
        throw InvalidConfig("ensemble members disagree on input shape");
      if (!m->has_input_gradient())
        throw CapabilityError("ensemble members must be differentiable");
    }
  }

  int num_classes() const override { return members_[0]->num_classes(); }
  std::array<std::size_t, 3> input_shape() const override {
    return members_[0]->input_shape();
  }

  Tensor<T> forward(const Tensor<T>& batch) const override {
    Tensor<T> acc = members_[0]->forward(batch);
    for (std::size_t m = 1; m < members_.size(); ++m) acc += members_[m]->forward(batch);
    acc *= T(1) / static_cast<T>(members_.size());
    return acc;
  }

  LossAndGrad<T> loss_and_input_gradient(const Tensor<T>& batch,
                                         std::span<const int> labels,
                                         LossSpec spec) const override {
    const Tensor<T> logits = forward(batch);
    const T loss = attack_loss(logits, labels, spec);
    return {loss, logits_vjp(batch, attack_loss_grad(logits, labels, spec))};
  }

  Tensor<T> logits_vjp(const Tensor<T>& batch, const Tensor<T>& upstream) const override {
    Tensor<T> acc = members_[0]->logits_vjp(batch, upstream);
    for (std::size_t m = 1; m < members_.size(); ++m)
      acc += members_[m]->logits_vjp(batch, upstream);
    acc *= T(1) / static_cast<T>(members_.size());
    return acc;
  }

  std::size_t member_count() const { return members_.size(); }

 private:
  std::vector<std::shared_ptr<const Model<T>>> members_;
};

}  // namespace rapkit
