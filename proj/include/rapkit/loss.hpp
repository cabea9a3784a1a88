#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "rapkit/errors.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit {

enum class LossKind { cross_entropy, logit };
enum class AttackMode { targeted, untargeted };

struct LossSpec {
  LossKind kind = LossKind::cross_entropy;
  AttackMode mode = AttackMode::untargeted;

  bool targeted() const { return mode == AttackMode::targeted; }
};

inline std::string to_string(LossKind k) {
  return k == LossKind::cross_entropy ? "ce" : "logit";
}
inline std::string to_string(AttackMode m) {
  return m == AttackMode::targeted ? "targeted" : "untargeted";
}

namespace detail {

template <typename T>
inline void check_logits_labels(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw InvalidInput("logits must be N x classes");
  if (labels.size() != logits.dim(0))
    throw InvalidInput("label count does not match logit rows");
  const int classes = static_cast<int>(logits.dim(1));
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= classes)
      throw InvalidInput("label out of range at row " + std::to_string(i));
  if (!all_finite(logits)) throw NumericError("non-finite logits");
}

// numerically stable log-sum-exp of one logit row
template <typename T>
inline T log_sum_exp(const T* row, std::size_t classes) {
  T m = row[0];
  for (std::size_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
  T s = 0;
  for (std::size_t c = 0; c < classes; ++c) s += std::exp(row[c] - m);
  return m + std::log(s);
}

}  // namespace detail

// Per-example value of the scalar the outer loop minimizes.
//   targeted   ce:    CE(logits_i, y_t_i)
//   targeted   logit: -logits_i[y_t_i]
//   untargeted ce:    -CE(logits_i, y_i)
//   untargeted logit:  logits_i[y_i]
// `labels` are y_t in targeted mode and y in untargeted mode.
template <typename T>
std::vector<T> per_example_loss(const Tensor<T>& logits, std::span<const int> labels,
                                LossSpec spec) {
  detail::check_logits_labels(logits, labels);
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * classes;
    const int y = labels[i];
    if (spec.kind == LossKind::cross_entropy) {
      const T ce = detail::log_sum_exp(row, classes) - row[y];
      out[i] = spec.targeted() ? ce : -ce;
    } else {
      out[i] = spec.targeted() ? -row[y] : row[y];
    }
  }
  return out;
}

// Batch-mean attack loss.
template <typename T>
T attack_loss(const Tensor<T>& logits, std::span<const int> labels, LossSpec spec) {
  const auto per = per_example_loss(logits, labels, spec);
  if (per.empty()) return T(0);
  T s = 0;
  for (T v : per) s += v;
  return s / static_cast<T>(per.size());
}

// d attack_loss / d logits (N x classes).
template <typename T>
Tensor<T> attack_loss_grad(const Tensor<T>& logits, std::span<const int> labels,
                           LossSpec spec) {
  detail::check_logits_labels(logits, labels);
  const std::size_t n = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  Tensor<T> grad(logits.shape());
  const T inv_n = T(1) / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = logits.data() + i * classes;
    T* g = grad.data() + i * classes;
    const int y = labels[i];
    if (spec.kind == LossKind::cross_entropy) {
      // d mean-CE / d logits = (softmax - onehot) / N, negated when untargeted
      const T lse = detail::log_sum_exp(row, classes);
      const T dir = spec.targeted() ? T(1) : T(-1);
      for (std::size_t c = 0; c < classes; ++c)
        g[c] = dir * inv_n * std::exp(row[c] - lse);
      g[y] -= dir * inv_n;
    } else {
      g[y] = (spec.targeted() ? T(-1) : T(1)) * inv_n;
    }
  }
  return grad;
}

// Labels the attack objective uses: y_t when targeted, y otherwise.
template <typename T>
inline std::span<const int> attack_labels(const ImageBatch<T>& batch, LossSpec spec) {
  if (spec.targeted()) {
    if (!batch.has_targets())
      throw InvalidInput("targeted mode requires target labels in the batch");
    return batch.target_labels;
  }
  return batch.labels;
}

}  // namespace rapkit
