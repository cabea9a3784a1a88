#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <variant>
#include <vector>

#include "rapkit/errors.hpp"
#include "rapkit/rng.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit {

// ---- input-transform descriptors (immutable, shareable) ---------------------

struct IdentityTransform {};
struct DiTransform {
  double prob = 0.7;  // per batch-call application probability
};
struct SiTransform {
  int m = 5;  // scale copies x / 2^i, i = 0..m-1
};
struct AdmixTransform {
  int m1 = 5;        // nested scale copies
  int m2 = 3;        // mixup draws
  double eta = 0.2;  // mix weight
};
struct EotTransform;

using InputTransform =
    std::variant<IdentityTransform, DiTransform, SiTransform, AdmixTransform, EotTransform>;

struct EotTransform {
  int n_samples = 10;
  std::shared_ptr<const InputTransform> inner;
};

// ---- gradient-transform descriptors -----------------------------------------

struct TiSmoothTransform {
  int kernel_size = 5;
};
struct MiTransform {
  double mu = 1.0;
};
using GradTransform = std::variant<TiSmoothTransform, MiTransform>;

int transform_multiplicity(const InputTransform& tr);

struct PipelineSpec {
  std::vector<InputTransform> input_transforms;
  std::vector<GradTransform> grad_transforms;

  int multiplicity() const {
    int m = 1;
    for (const auto& tr : input_transforms) m *= transform_multiplicity(tr);
    return m;
  }

  void validate() const;
};

inline int transform_multiplicity(const InputTransform& tr) {
  struct V {
    int operator()(const IdentityTransform&) const { return 1; }
    int operator()(const DiTransform&) const { return 1; }
    int operator()(const SiTransform& t) const { return t.m; }
    int operator()(const AdmixTransform& t) const { return t.m1 * t.m2; }
    int operator()(const EotTransform& t) const {
      return t.n_samples * (t.inner ? transform_multiplicity(*t.inner) : 1);
    }
  };
  return std::visit(V{}, tr);
}

inline void validate_transform(const InputTransform& tr) {
  struct V {
    void operator()(const IdentityTransform&) const {}
    void operator()(const DiTransform& t) const {
      if (t.prob < 0.0 || t.prob > 1.0) throw InvalidConfig("di prob must be in [0,1]");
    }
    void operator()(const SiTransform& t) const {
      if (t.m < 1) throw InvalidConfig("si m must be >= 1");
    }
    void operator()(const AdmixTransform& t) const {
      if (t.m1 < 1 || t.m2 < 1) throw InvalidConfig("admix copy counts must be >= 1");
      if (t.eta < 0.0 || t.eta >= 1.0) throw InvalidConfig("admix eta must be in [0,1)");
    }
    void operator()(const EotTransform& t) const {
      if (t.n_samples < 1) throw InvalidConfig("eot n_samples must be >= 1");
      if (t.inner) validate_transform(*t.inner);
    }
  };
  std::visit(V{}, tr);
}

inline void PipelineSpec::validate() const {
  for (const auto& tr : input_transforms) validate_transform(tr);
  for (const auto& gt : grad_transforms) {
    if (const auto* ti = std::get_if<TiSmoothTransform>(&gt)) {
      if (ti->kernel_size < 1 || ti->kernel_size % 2 == 0)
        throw InvalidConfig("ti kernel_size must be odd and >= 1");
    } else if (const auto* mi = std::get_if<MiTransform>(&gt)) {
      if (mi->mu < 0.0) throw InvalidConfig("mi mu must be >= 0");
    }
  }
}

// ---- bilinear resize (half-pixel centers) and its adjoint --------------------

namespace detail {

struct AxisTap {
  std::size_t i0, i1;
  double frac;  // weight of i1
};

inline std::vector<AxisTap> resize_axis(std::size_t src, std::size_t dst) {
  std::vector<AxisTap> taps(dst);
  const double scale = double(src) / double(dst);
  for (std::size_t d = 0; d < dst; ++d) {
    double s = (double(d) + 0.5) * scale - 0.5;
    if (s < 0.0) s = 0.0;
    const double smax = double(src - 1);
    if (s > smax) s = smax;
    const auto i0 = static_cast<std::size_t>(s);
    taps[d] = {i0, std::min(i0 + 1, src - 1), s - double(i0)};
  }
  return taps;
}

// one CHW image, (h,w) -> (ho,wo)
template <typename T>
void bilinear_resize_one(const T* in, std::size_t c, std::size_t h, std::size_t w,
                         std::size_t ho, std::size_t wo, T* out) {
  const auto ys = resize_axis(h, ho), xs = resize_axis(w, wo);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* ic = in + ci * h * w;
    T* oc = out + ci * ho * wo;
    for (std::size_t y = 0; y < ho; ++y) {
      const auto& ty = ys[y];
      for (std::size_t x = 0; x < wo; ++x) {
        const auto& tx = xs[x];
        const double v00 = ic[ty.i0 * w + tx.i0], v01 = ic[ty.i0 * w + tx.i1];
        const double v10 = ic[ty.i1 * w + tx.i0], v11 = ic[ty.i1 * w + tx.i1];
        const double top = v00 + (v01 - v00) * tx.frac;
        const double bot = v10 + (v11 - v10) * tx.frac;
        oc[y * wo + x] = static_cast<T>(top + (bot - top) * ty.frac);
      }
    }
  }
}

// adjoint: scatter gout (ho,wo) back to gin (h,w), accumulating
template <typename T>
void bilinear_resize_adjoint_one(const T* gout, std::size_t c, std::size_t h, std::size_t w,
                                 std::size_t ho, std::size_t wo, T* gin) {
  const auto ys = resize_axis(h, ho), xs = resize_axis(w, wo);
  for (std::size_t ci = 0; ci < c; ++ci) {
    const T* gc = gout + ci * ho * wo;
    T* ic = gin + ci * h * w;
    for (std::size_t y = 0; y < ho; ++y) {
      const auto& ty = ys[y];
      for (std::size_t x = 0; x < wo; ++x) {
        const auto& tx = xs[x];
        const double g = gc[y * wo + x];
        const double fy = ty.frac, fx = tx.frac;
        ic[ty.i0 * w + tx.i0] += static_cast<T>(g * (1.0 - fy) * (1.0 - fx));
        ic[ty.i0 * w + tx.i1] += static_cast<T>(g * (1.0 - fy) * fx);
        ic[ty.i1 * w + tx.i0] += static_cast<T>(g * fy * (1.0 - fx));
        ic[ty.i1 * w + tx.i1] += static_cast<T>(g * fy * fx);
      }
    }
  }
}

}  // namespace detail

// ---- expansion of the input stack into transformed copies -------------------

struct TransformContext {
  std::uint64_t run_seed = 0;
  std::int64_t iteration = 0;
  std::span<const std::int64_t> image_ids;  // one per batch row
};

namespace detail {

// per-image DI draw; sizes are fixed by the draw, so the chain stays linear
struct DiDraw {
  std::size_t scaled_h, scaled_w;  // ceil(size * s)
  std::size_t top, left;           // pad placement
};

struct DiStep {
  bool applied = false;
  std::size_t h = 0, w = 0;          // original size
  std::size_t pad_h = 0, pad_w = 0;  // padded (enlarged square) size
  std::vector<DiDraw> draws;         // per image
};

template <typename T>
struct ScaleStep {
  T factor;
};

template <typename T>
using AdjointStep = std::variant<ScaleStep<T>, DiStep>;

template <typename T>
struct PipelineCopy {
  Tensor<T> value;
  std::vector<AdjointStep<T>> steps;
};

inline std::size_t enlarged_size(std::size_t n, double s) {
  return static_cast<std::size_t>(std::ceil(double(n) * s - 1e-9));
}

template <typename T>
void apply_di(const DiTransform& tr, PipelineCopy<T>& copy, std::uint64_t tag,
              const TransformContext& ctx) {
  const auto& shape = copy.value.shape();
  const std::size_t n = shape[0], c = shape[1], h = shape[2], w = shape[3];
  if (h < 2 || w < 2) throw InvalidInput("di needs images at least 2x2");

  DiStep step;
  step.h = h;
  step.w = w;
  Rng call_rng(derive_seed(tag, {0xD1CA11u}));
  step.applied = call_rng.bernoulli(tr.prob);
  if (!step.applied) {
    copy.steps.emplace_back(std::move(step));
    return;
  }
  step.pad_h = enlarged_size(h, 1.1);
  step.pad_w = enlarged_size(w, 1.1);
  step.draws.resize(n);

  Tensor<T> out(copy.value.shape());
  std::vector<T> scaled, padded;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(tag, {0xD1u, static_cast<std::uint64_t>(ctx.image_ids[i])}));
    const double s = rng.uniform(1.0, 1.1);
    DiDraw d;
    d.scaled_h = enlarged_size(h, s);
    d.scaled_w = enlarged_size(w, s);
    d.top = rng.uniform_int(step.pad_h - d.scaled_h + 1);
    d.left = rng.uniform_int(step.pad_w - d.scaled_w + 1);
    step.draws[i] = d;

    scaled.assign(c * d.scaled_h * d.scaled_w, T(0));
    bilinear_resize_one(copy.value.image(i).data(), c, h, w, d.scaled_h, d.scaled_w,
                        scaled.data());
    padded.assign(c * step.pad_h * step.pad_w, T(0));
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < d.scaled_h; ++y)
        std::copy_n(scaled.data() + (ci * d.scaled_h + y) * d.scaled_w, d.scaled_w,
                    padded.data() + (ci * step.pad_h + y + d.top) * step.pad_w + d.left);
    bilinear_resize_one(padded.data(), c, step.pad_h, step.pad_w, h, w,
                        out.image(i).data());
  }
  copy.value = std::move(out);
  copy.steps.emplace_back(std::move(step));
}

template <typename T>
void di_adjoint(const DiStep& step, Tensor<T>& g) {
  if (!step.applied) return;
  const auto& shape = g.shape();
  const std::size_t n = shape[0], c = shape[1];
  Tensor<T> gin(shape);
  std::vector<T> gpad, gscaled;
  for (std::size_t i = 0; i < n; ++i) {
    const DiDraw& d = step.draws[i];
    gpad.assign(c * step.pad_h * step.pad_w, T(0));
    bilinear_resize_adjoint_one(g.image(i).data(), c, step.pad_h, step.pad_w, step.h,
                                step.w, gpad.data());
    gscaled.assign(c * d.scaled_h * d.scaled_w, T(0));
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < d.scaled_h; ++y)
        std::copy_n(gpad.data() + (ci * step.pad_h + y + d.top) * step.pad_w + d.left,
                    d.scaled_w, gscaled.data() + (ci * d.scaled_h + y) * d.scaled_w);
    auto gi = g.image(i);
    std::fill(gi.begin(), gi.end(), T(0));
    bilinear_resize_adjoint_one(gscaled.data(), c, step.h, step.w, d.scaled_h, d.scaled_w,
                                gi.data());
  }
}

template <typename T>
void apply_transform_rec(const InputTransform& tr, std::vector<PipelineCopy<T>>& copies,
                         std::uint64_t tag, const TransformContext& ctx);

template <typename T>
void expand_in_place(const std::vector<InputTransform>& stack,
                     std::vector<PipelineCopy<T>>& copies, std::uint64_t root,
                     const TransformContext& ctx) {
  for (std::size_t s = 0; s < stack.size(); ++s) {
    std::vector<PipelineCopy<T>> next;
    for (std::size_t jc = 0; jc < copies.size(); ++jc) {
      std::vector<PipelineCopy<T>> one;
      one.push_back(std::move(copies[jc]));
      apply_transform_rec(stack[s], one, derive_seed(root, {s, jc}), ctx);
      for (auto& cp : one) next.push_back(std::move(cp));
    }
    copies = std::move(next);
  }
}

template <typename T>
void apply_transform_rec(const InputTransform& tr, std::vector<PipelineCopy<T>>& copies,
                         std::uint64_t tag, const TransformContext& ctx) {
  if (std::holds_alternative<IdentityTransform>(tr)) return;

  if (const auto* di = std::get_if<DiTransform>(&tr)) {
    for (std::size_t jc = 0; jc < copies.size(); ++jc)
      apply_di(*di, copies[jc], derive_seed(tag, {jc}), ctx);
    return;
  }

  if (const auto* si = std::get_if<SiTransform>(&tr)) {
    std::vector<PipelineCopy<T>> next;
    next.reserve(copies.size() * si->m);
    for (auto& cp : copies) {
      T factor(1);
      for (int i = 0; i < si->m; ++i, factor *= T(0.5)) {
        PipelineCopy<T> nc;
        nc.value = cp.value * factor;
        nc.steps = cp.steps;
        nc.steps.emplace_back(ScaleStep<T>{factor});
        next.push_back(std::move(nc));
      }
    }
    copies = std::move(next);
    return;
  }

  if (const auto* ad = std::get_if<AdmixTransform>(&tr)) {
    std::vector<PipelineCopy<T>> next;
    next.reserve(copies.size() * std::size_t(ad->m1) * std::size_t(ad->m2));
    for (std::size_t jc = 0; jc < copies.size(); ++jc) {
      const auto& cp = copies[jc];
      const std::size_t n = cp.value.dim(0);
      if (n == 0) throw InvalidInput("admix needs a nonempty mixing pool");
      for (int j = 0; j < ad->m2; ++j) {
        // mix partners drawn per image from the current batch, anchor excluded
        // when the pool has more than one image
        Tensor<T> mixed = cp.value;
        for (std::size_t i = 0; i < n; ++i) {
          Rng rng(derive_seed(tag, {std::uint64_t(jc), std::uint64_t(j),
                                    static_cast<std::uint64_t>(ctx.image_ids[i])}));
          std::size_t partner = i;
          if (n > 1) {
            partner = rng.uniform_int(n - 1);
            if (partner >= i) ++partner;
          }
          auto dst = mixed.image(i);
          auto src = cp.value.image(partner);
          const T eta = static_cast<T>(ad->eta);
          for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += eta * src[k];
        }
        T factor(1);
        for (int i = 0; i < ad->m1; ++i, factor *= T(0.5)) {
          PipelineCopy<T> nc;
          nc.value = mixed * factor;
          nc.steps = cp.steps;
          nc.steps.emplace_back(ScaleStep<T>{factor});
          next.push_back(std::move(nc));
        }
      }
    }
    copies = std::move(next);
    return;
  }

  if (const auto* eot = std::get_if<EotTransform>(&tr)) {
    std::vector<PipelineCopy<T>> next;
    for (std::size_t jc = 0; jc < copies.size(); ++jc) {
      for (int k = 0; k < eot->n_samples; ++k) {
        std::vector<PipelineCopy<T>> one;
        one.push_back(copies[jc]);  // copy; each sample draws independently
        if (eot->inner)
          apply_transform_rec(*eot->inner, one, derive_seed(tag, {std::uint64_t(jc), std::uint64_t(k)}),
                              ctx);
        for (auto& cp : one) next.push_back(std::move(cp));
      }
    }
    copies = std::move(next);
    return;
  }
}

}  // namespace detail

template <typename T>
using PipelineCopies = std::vector<detail::PipelineCopy<T>>;

// Expands x through the input-transform stack into multiplicity() transformed
// copies, each carrying the linear-adjoint record of its lineage.
template <typename T>
PipelineCopies<T> expand_input_transforms(const std::vector<InputTransform>& stack,
                                          const Tensor<T>& x, const TransformContext& ctx) {
  if (x.rank() != 4) throw InvalidInput("input transforms expect an NCHW batch");
  if (ctx.image_ids.size() != x.dim(0))
    throw InvalidInput("transform context image_ids must cover the batch");
  PipelineCopies<T> copies;
  copies.push_back({x, {}});
  const std::uint64_t root = derive_seed(ctx.run_seed, {0x9a11u, static_cast<std::uint64_t>(ctx.iteration)});
  detail::expand_in_place(stack, copies, root, ctx);
  return copies;
}

// Pulls a gradient at the transformed copy back to the untransformed input.
template <typename T>
Tensor<T> pullback_gradient(const detail::PipelineCopy<T>& copy, Tensor<T> grad) {
  for (auto it = copy.steps.rbegin(); it != copy.steps.rend(); ++it) {
    if (const auto* sc = std::get_if<detail::ScaleStep<T>>(&*it)) {
      grad *= sc->factor;
    } else {
      detail::di_adjoint(std::get<detail::DiStep>(*it), grad);
    }
  }
  return grad;
}

// ---- TI gradient smoothing ---------------------------------------------------

enum class PadMode { zero, wrap };

// normalized 2-D Gaussian, sigma = kernel_size / 3
inline std::vector<double> gaussian_kernel_2d(int kernel_size) {
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw InvalidConfig("ti kernel size must be odd and >= 1");
  const int r = kernel_size / 2;
  const double sigma = double(kernel_size) / 3.0;
  std::vector<double> k(std::size_t(kernel_size) * kernel_size);
  double sum = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const double v = std::exp(-(double(dy) * dy + double(dx) * dx) / (2.0 * sigma * sigma));
      k[std::size_t(dy + r) * kernel_size + std::size_t(dx + r)] = v;
      sum += v;
    }
  for (auto& v : k) v /= sum;
  return k;
}

template <typename T>
Tensor<T> ti_kernel_smooth(const Tensor<T>& grad, int kernel_size,
                           PadMode pad = PadMode::zero) {
  if (grad.rank() != 4) throw InvalidInput("ti smoothing expects an NCHW tensor");
  const auto k = gaussian_kernel_2d(kernel_size);
  const int r = kernel_size / 2;
  const std::size_t n = grad.dim(0), c = grad.dim(1), h = grad.dim(2), w = grad.dim(3);
  Tensor<T> out(grad.shape());
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t ci = 0; ci < c; ++ci)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0;
          for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
              long sy = long(y) + dy, sx = long(x) + dx;
              if (pad == PadMode::wrap) {
                sy = (sy % long(h) + long(h)) % long(h);
                sx = (sx % long(w) + long(w)) % long(w);
              } else if (sy < 0 || sy >= long(h) || sx < 0 || sx >= long(w)) {
                continue;
              }
              acc += k[std::size_t(dy + r) * kernel_size + std::size_t(dx + r)] *
                     double(grad.at(ni, ci, std::size_t(sy), std::size_t(sx)));
            }
          out.at(ni, ci, y, x) = static_cast<T>(acc);
        }
  return out;
}

// ---- MI momentum accumulation -------------------------------------------------

template <typename T>
struct MomentumState {
  Tensor<T> state;  // lazily shaped to the first gradient
  T mu = T(1);
  int zero_grad_events = 0;

  void reset() { state = Tensor<T>(); }
};

// state <- mu * state + g / ||g||_1 per image; returns the new state.
// A zero per-image gradient contributes only the decayed state and bumps
// zero_grad_events.
template <typename T>
const Tensor<T>& momentum_update(const Tensor<T>& g, MomentumState<T>& st) {
  if (st.state.empty()) st.state = Tensor<T>(g.shape());
  if (!st.state.same_shape(g)) throw InvalidInput("momentum state shape mismatch");
  const std::size_t n = g.dim(0);
  for (std::size_t i = 0; i < n; ++i) {
    auto gs = g.image(i);
    auto ss = st.state.image(i);
    T l1 = 0;
    for (const T v : gs) l1 += std::abs(v);
    if (l1 == T(0)) {
      for (auto& v : ss) v *= st.mu;
      ++st.zero_grad_events;
      continue;
    }
    const T inv = T(1) / l1;
    for (std::size_t kk = 0; kk < ss.size(); ++kk) ss[kk] = st.mu * ss[kk] + gs[kk] * inv;
  }
  return st.state;
}

// Mutable per-run state for the gradient-transform stack (one momentum slot
// per mi descriptor, keyed by stack position).
template <typename T>
struct GradTransformState {
  std::map<std::size_t, MomentumState<T>> momentum;
  int zero_grad_warnings = 0;
};

template <typename T>
Tensor<T> apply_grad_transforms(Tensor<T> g, const std::vector<GradTransform>& stack,
                                GradTransformState<T>& state) {
  for (std::size_t s = 0; s < stack.size(); ++s) {
    if (const auto* ti = std::get_if<TiSmoothTransform>(&stack[s])) {
      g = ti_kernel_smooth(g, ti->kernel_size);
    } else {
      const auto& mi = std::get<MiTransform>(stack[s]);
      auto [it, inserted] = state.momentum.try_emplace(s);
      if (inserted) it->second.mu = static_cast<T>(mi.mu);
      const int before = it->second.zero_grad_events;
      g = momentum_update(g, it->second);
      state.zero_grad_warnings += it->second.zero_grad_events - before;
    }
  }
  return g;
}

}  // namespace rapkit
