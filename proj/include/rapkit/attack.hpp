#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "rapkit/errors.hpp"
#include "rapkit/loss.hpp"
#include "rapkit/model.hpp"
#include "rapkit/pipeline.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit {

struct AttackBudget {
  double epsilon = 16.0 / 255.0;  // L-inf radius, pixel units

  void validate() const {
    if (!(epsilon > 0.0) || epsilon > 1.0)
      throw InvalidConfig("budget epsilon must be in (0,1]");
  }
};

struct RAPConfig {
  AttackBudget budget;
  double alpha = 2.0 / 255.0;      // outer step size
  int iterations = 400;            // K
  int late_start = 0;              // K_LS; inner stage runs in iterations k >= K_LS (0-based)
  double epsilon_n = 16.0 / 255.0; // inner radius
  double alpha_n = 2.0 / 255.0;    // inner step size
  int inner_iterations = 8;        // T
  LossSpec loss;
  std::vector<int> checkpoints;    // sorted 1-based completed-step counts

  // The inner stage is a no-op when the radius is zero or the gate never
  // opens; those configs degrade exactly to the wrapped baseline attack.
  bool inner_enabled() const {
    return epsilon_n > 0.0 && late_start < iterations;
  }

  void validate() const {
    budget.validate();
    if (!(alpha > 0.0)) throw InvalidConfig("alpha must be positive");
    if (iterations < 1) throw InvalidConfig("iterations (K) must be >= 1");
    if (late_start < 0) throw InvalidConfig("late_start (K_LS) must be >= 0");
    if (epsilon_n < 0.0) throw InvalidConfig("epsilon_n must be >= 0");
    if (inner_iterations < 1) throw InvalidConfig("inner_iterations (T) must be >= 1");
    if (inner_enabled() && !(alpha_n > 0.0))
      throw InvalidConfig("alpha_n must be positive when the inner stage is active");
    for (std::size_t i = 0; i < checkpoints.size(); ++i) {
      if (checkpoints[i] < 1 || checkpoints[i] > iterations)
        throw InvalidConfig("checkpoint outside [1, K]");
      if (i > 0 && checkpoints[i] <= checkpoints[i - 1])
        throw InvalidConfig("checkpoints must be strictly increasing");
    }
  }
};

struct PassCounter {
  std::int64_t forward = 0;
  std::int64_t backward = 0;
};

template <typename T>
struct AttackTrace {
  std::vector<int> checkpoint_iters;        // completed-step counts snapshotted
  std::vector<Tensor<T>> checkpoint_batches;
  std::vector<T> outer_losses;              // one per completed iteration
  PassCounter passes;
  std::uint64_t rng_seed = 0;
  bool truncated = false;
  int completed_iterations = 0;
  int zero_grad_warnings = 0;
  Tensor<T> final_adv;

  bool operator==(const AttackTrace& o) const {
    return checkpoint_iters == o.checkpoint_iters &&
           checkpoint_batches == o.checkpoint_batches && outer_losses == o.outer_losses &&
           passes.forward == o.passes.forward && passes.backward == o.passes.backward &&
           truncated == o.truncated && completed_iterations == o.completed_iterations &&
           final_adv == o.final_adv;
  }
};

// Appendix-style cost model: the outer stage costs multiplicity passes per
// iteration, the inner stage T passes for each of the max(0, K - K_LS)
// iterations it is active in (no input transform runs inside it).
inline std::int64_t expected_pass_count(const RAPConfig& cfg, int pipeline_multiplicity) {
  cfg.validate();
  if (pipeline_multiplicity < 1) throw InvalidConfig("multiplicity must be >= 1");
  const std::int64_t outer =
      std::int64_t(pipeline_multiplicity) * std::int64_t(cfg.iterations);
  std::int64_t inner = 0;
  if (cfg.inner_enabled())
    inner = std::int64_t(std::max(0, cfg.iterations - cfg.late_start)) *
            std::int64_t(cfg.inner_iterations);
  return outer + inner;
}

// Projected gradient ascent for the worst-case perturbation around x_adv:
// n <- clip_{|n| <= eps_n}( n + alpha_n * sign( d L / d n at x_adv + n ) ).
// The probe x_adv + n is evaluated as-is (no [0,1] clip, no input transform).
template <typename T>
Tensor<T> inner_maximize(const Model<T>& model, const Tensor<T>& x_adv,
                         std::span<const int> labels, LossSpec spec, double epsilon_n,
                         double alpha_n, int steps, PassCounter& counter) {
  if (epsilon_n < 0.0) throw InvalidConfig("epsilon_n must be >= 0");
  if (steps < 1) throw InvalidConfig("inner_iterations (T) must be >= 1");
  if (!model.has_input_gradient())
    throw CapabilityError("inner maximization needs input gradients");

  const T eps = static_cast<T>(epsilon_n);
  const T step = static_cast<T>(alpha_n);
  Tensor<T> n(x_adv.shape());
  for (int t = 0; t < steps; ++t) {
    const Tensor<T> probe = x_adv + n;
    const auto lg = model.loss_and_input_gradient(probe, labels, spec);
    ++counter.forward;
    ++counter.backward;
    for (std::size_t i = 0; i < n.size(); ++i) {
      n[i] += step * sign_of(lg.grad[i]);
      n[i] = std::clamp(n[i], -eps, eps);
    }
  }
  return n;
}

// One projected sign-descent step on x_adv through the full pipeline;
// returns the batch-mean outer loss at the gradient evaluation point.
template <typename T>
T outer_step(const Model<T>& model, const Tensor<T>& x, Tensor<T>& x_adv,
             const Tensor<T>& n_rap, const PipelineSpec& pipeline, const RAPConfig& cfg,
             std::span<const int> labels, GradTransformState<T>& gstate,
             const TransformContext& ctx, PassCounter& counter) {
  if (!x.same_shape(x_adv) || !x.same_shape(n_rap))
    throw InvalidInput("outer_step: x, x_adv and n_rap shapes must agree");

  const Tensor<T> probe = x_adv + n_rap;  // deliberately not clipped to [0,1]
  auto copies = expand_input_transforms(pipeline.input_transforms, probe, ctx);

  Tensor<T> grad_sum(x.shape());
  T loss_sum = 0;
  for (auto& copy : copies) {
    auto lg = model.loss_and_input_gradient(copy.value, labels, cfg.loss);
    ++counter.forward;
    ++counter.backward;
    grad_sum += pullback_gradient(copy, std::move(lg.grad));
    loss_sum += lg.loss;
  }
  const T inv_m = T(1) / static_cast<T>(copies.size());
  grad_sum *= inv_m;

  const Tensor<T> g = apply_grad_transforms(std::move(grad_sum), pipeline.grad_transforms, gstate);

  const T alpha = static_cast<T>(cfg.alpha);
  for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] -= alpha * sign_of(g[i]);
  clamp_linf_ball(x_adv, x, static_cast<T>(cfg.budget.epsilon));
  clamp_scalar_box(x_adv, T(0), T(1));

  return loss_sum * inv_m;
}

using ContinuePredicate = std::function<bool(int completed_iterations)>;

namespace detail {

template <typename T>
void check_budget_invariant(const Tensor<T>& x, const Tensor<T>& x_adv, double epsilon) {
  const T tol = static_cast<T>(epsilon + 1e-6);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T v = x_adv[i];
    if (std::abs(v - x[i]) > tol || v < T(0) || v > T(1) || !std::isfinite(v))
      throw NumericError("budget invariant violated after outer step");
  }
}

template <typename T>
void preflight(const Model<T>& model, const ImageBatch<T>& batch,
               const PipelineSpec& pipeline, const RAPConfig& cfg) {
  batch.validate();
  cfg.validate();
  pipeline.validate();
  model.check_batch_shape(batch.pixels);
  if (!model.has_input_gradient())
    throw CapabilityError("attack requires a differentiable surrogate model");
}

}  // namespace detail

// Full min-max attack loop (Algorithm 1 shape): K outer iterations; from
// iteration K_LS on, each outer step first solves the inner maximization for
// the worst-case perturbation n_rap and differentiates at x_adv + n_rap.
// Deterministic given (seed, model, batch, cfg, pipeline); `should_continue`
// makes interruption cooperative (the truncated trace is still valid).
template <typename T>
AttackTrace<T> rap_attack(const Model<T>& model, const ImageBatch<T>& batch,
                          const PipelineSpec& pipeline, const RAPConfig& cfg,
                          std::uint64_t seed, const ContinuePredicate& should_continue = {}) {
  detail::preflight(model, batch, pipeline, cfg);
  const auto labels = attack_labels(batch, cfg.loss);

  const Tensor<T>& x = batch.pixels;
  Tensor<T> x_adv = x;
  const Tensor<T> zero(x.shape());
  GradTransformState<T> gstate;

  AttackTrace<T> trace;
  trace.rng_seed = seed;
  trace.outer_losses.reserve(std::size_t(cfg.iterations));
  std::size_t next_checkpoint = 0;

  for (int k = 0; k < cfg.iterations; ++k) {
    if (should_continue && !should_continue(k)) {
      trace.truncated = true;
      break;
    }
    Tensor<T> n_rap;
    if (cfg.inner_enabled() && k >= cfg.late_start) {
      n_rap = inner_maximize(model, x_adv, labels, cfg.loss, cfg.epsilon_n, cfg.alpha_n,
                             cfg.inner_iterations, trace.passes);
    } else {
      n_rap = zero;
    }
    const TransformContext ctx{seed, k, batch.image_ids};
    const T loss =
        outer_step(model, x, x_adv, n_rap, pipeline, cfg, labels, gstate, ctx, trace.passes);
    detail::check_budget_invariant(x, x_adv, cfg.budget.epsilon);
    trace.outer_losses.push_back(loss);
    trace.completed_iterations = k + 1;
    if (next_checkpoint < cfg.checkpoints.size() &&
        cfg.checkpoints[next_checkpoint] == k + 1) {
      trace.checkpoint_iters.push_back(k + 1);
      trace.checkpoint_batches.push_back(x_adv);
      ++next_checkpoint;
    }
  }
  trace.zero_grad_warnings = gstate.zero_grad_warnings;
  trace.final_adv = std::move(x_adv);
  return trace;
}

// The plain iterative attack the pipeline wraps (I/MI/DI/MTDI... depending on
// the recipe), written as its own straight-line loop with no inner-stage
// machinery. Degenerate RAP configurations are required to reproduce this
// bitwise, which is only a meaningful check because the loop is independent.
template <typename T>
AttackTrace<T> baseline_attack(const Model<T>& model, const ImageBatch<T>& batch,
                               const PipelineSpec& pipeline, const RAPConfig& cfg,
                               std::uint64_t seed,
                               const ContinuePredicate& should_continue = {}) {
  detail::preflight(model, batch, pipeline, cfg);
  const auto labels = attack_labels(batch, cfg.loss);

  const Tensor<T>& x = batch.pixels;
  Tensor<T> x_adv = x;
  GradTransformState<T> gstate;
  const T alpha = static_cast<T>(cfg.alpha);
  const T eps = static_cast<T>(cfg.budget.epsilon);

  AttackTrace<T> trace;
  trace.rng_seed = seed;
  std::size_t next_checkpoint = 0;

  for (int k = 0; k < cfg.iterations; ++k) {
    if (should_continue && !should_continue(k)) {
      trace.truncated = true;
      break;
    }
    const TransformContext ctx{seed, k, batch.image_ids};
    auto copies = expand_input_transforms(pipeline.input_transforms, x_adv, ctx);
    Tensor<T> grad_sum(x.shape());
    T loss_sum = 0;
    for (auto& copy : copies) {
      auto lg = model.loss_and_input_gradient(copy.value, labels, cfg.loss);
      ++trace.passes.forward;
      ++trace.passes.backward;
      grad_sum += pullback_gradient(copy, std::move(lg.grad));
      loss_sum += lg.loss;
    }
    const T inv_m = T(1) / static_cast<T>(copies.size());
    grad_sum *= inv_m;
    const Tensor<T> g =
        apply_grad_transforms(std::move(grad_sum), pipeline.grad_transforms, gstate);
    for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] -= alpha * sign_of(g[i]);
    clamp_linf_ball(x_adv, x, eps);
    clamp_scalar_box(x_adv, T(0), T(1));

    trace.outer_losses.push_back(loss_sum * inv_m);
    trace.completed_iterations = k + 1;
    if (next_checkpoint < cfg.checkpoints.size() &&
        cfg.checkpoints[next_checkpoint] == k + 1) {
      trace.checkpoint_iters.push_back(k + 1);
      trace.checkpoint_batches.push_back(x_adv);
      ++next_checkpoint;
    }
  }
  trace.zero_grad_warnings = gstate.zero_grad_warnings;
  trace.final_adv = std::move(x_adv);
  return trace;
}

}  // namespace rapkit
