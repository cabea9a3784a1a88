#include "rapkit/eval/metrics.hpp"

#include <cmath>

#include "rapkit/errors.hpp"

namespace rapkit::eval {

double success_rate(const Model<float>& target, const Tensor<float>& adv,
                    std::span<const int> labels, AttackMode mode) {
  if (adv.rank() != 4) throw InvalidInput("adversarial batch must be NCHW");
  if (labels.size() != adv.dim(0)) throw InvalidInput("label count mismatch");
  if (adv.dim(0) == 0) return 0.0;
  const auto preds = predict_classes(target.forward(adv));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool success =
        mode == AttackMode::targeted ? preds[i] == labels[i] : preds[i] != labels[i];
    hits += success;
  }
  return 100.0 * double(hits) / double(preds.size());
}

RemoteRate remote_success_rate(const RemoteClassifierSpec& spec,
                               const ImageBatch<float>& adv,
                               std::span<const int> target_labels,
                               const std::map<std::string, int>& label_map) {
  if (target_labels.size() != adv.size())
    throw InvalidInput("target label count does not match the batch");
  RemoteRate out;
  if (adv.size() == 0) return out;

  RemoteCallStats stats;
  const auto results = try_remote_predict(spec, adv, &stats);
  int hits = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    if (!results[i]) {
      ++out.failed;
      continue;
    }
    ++out.evaluated;
    bool contains = false;
    for (const auto& p : *results[i]) {
      const auto it = label_map.find(p.label);
      if (it != label_map.end() && it->second == target_labels[i]) {
        contains = true;
        break;
      }
    }
    hits += contains;
  }
  if (out.evaluated > 0) out.rate = 100.0 * double(hits) / double(out.evaluated);
  return out;
}

double sign_test_pvalue(int n_plus, int n_minus) {
  if (n_plus < 0 || n_minus < 0) throw InvalidInput("sign test counts must be >= 0");
  const int n = n_plus + n_minus;
  if (n == 0) return 1.0;
  // exact binomial tail via log factorials
  const auto log_choose = [n](int k) {
    return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
           std::lgamma(double(n - k) + 1.0);
  };
  const double log_half_n = double(n) * std::log(0.5);
  double p = 0.0;
  for (int k = n_plus; k <= n; ++k) p += std::exp(log_choose(k) + log_half_n);
  return std::min(p, 1.0);
}

}  // namespace rapkit::eval
