#pragma once

#include <map>
#include <span>
#include <string>

#include "rapkit/model.hpp"
#include "rapkit/models/remote.hpp"

namespace rapkit::eval {

// Percent of successful attacks: argmax(target logits) != y (untargeted) or
// == y_t (targeted); ties break to the lowest class index. `labels` are y or
// y_t accordingly.
double success_rate(const Model<float>& target, const Tensor<float>& adv,
                    std::span<const int> labels, AttackMode mode);

struct RemoteRate {
  double rate = 0.0;  // percent over evaluated images
  int evaluated = 0;
  int failed = 0;  // transport failures excluded from the denominator
};

// Percent of images whose mapped top-k remote predictions contain the target
// label. Per-image transport errors are excluded with a warning count.
RemoteRate remote_success_rate(const RemoteClassifierSpec& spec,
                               const ImageBatch<float>& adv,
                               std::span<const int> target_labels,
                               const std::map<std::string, int>& label_map);

// One-sided exact sign test: P(X >= n_plus) for X ~ Binomial(n_plus+n_minus, 1/2).
double sign_test_pvalue(int n_plus, int n_minus);

}  // namespace rapkit::eval
