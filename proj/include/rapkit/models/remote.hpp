#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rapkit/model.hpp"
#include "rapkit/tensor.hpp"

namespace rapkit {

struct RetryPolicy {
  int max_retries = 2;   // additional attempts after the first
  int backoff_ms = 50;   // flat wait between attempts
};

// Generic JSON-over-HTTP classifier endpoint. Forward-only: the handle never
// exposes input gradients.
struct RemoteClassifierSpec {
  std::string endpoint;  // e.g. http://127.0.0.1:8784/classify
  int top_k = 10;
  int timeout_ms = 5000;
  RetryPolicy retry;
  std::string auth_token;      // optional bearer token...
  std::string auth_token_env;  // ...or the env var to read it from

  void validate() const;
};

struct RemotePrediction {
  std::string label;
  double score = 0.0;
};

struct RemoteCallStats {
  int retries = 0;
  int failed_images = 0;
};

// One POST per image with body {"image": "<base64 PNG>"}; the response is
// {"predictions": [{"label": ..., "score": ...}, ...]} sorted by descending
// score. Lists are truncated to spec.top_k client-side.
// `try_remote_predict` reports per-image failures as nullopt after retries;
// `remote_predict` surfaces the first failure as ProtocolError.
std::vector<std::optional<std::vector<RemotePrediction>>> try_remote_predict(
    const RemoteClassifierSpec& spec, const ImageBatch<float>& batch,
    RemoteCallStats* stats = nullptr);

std::vector<std::vector<RemotePrediction>> remote_predict(const RemoteClassifierSpec& spec,
                                                          const ImageBatch<float>& batch,
                                                          RemoteCallStats* stats = nullptr);

// Adapter so a remote endpoint can sit where a ModelHandle is expected.
// forward() maps returned labels onto dense logits (absent classes get a
// large negative score); gradient entry points raise CapabilityError, which
// is how the attack engine refuses remote surrogates.
class RemoteModel final : public Model<float> {
 public:
  RemoteModel(RemoteClassifierSpec spec, int num_classes,
              std::array<std::size_t, 3> input_shape, std::map<std::string, int> label_map);

  int num_classes() const override { return num_classes_; }
  std::array<std::size_t, 3> input_shape() const override { return input_shape_; }
  bool has_input_gradient() const override { return false; }

  Tensor<float> forward(const Tensor<float>& batch) const override;
  LossAndGrad<float> loss_and_input_gradient(const Tensor<float>&, std::span<const int>,
                                             LossSpec) const override {
    throw CapabilityError("remote classifier is forward-only: no input gradients");
  }
  Tensor<float> logits_vjp(const Tensor<float>&, const Tensor<float>&) const override {
    throw CapabilityError("remote classifier is forward-only: no input gradients");
  }

 private:
  RemoteClassifierSpec spec_;
  int num_classes_;
  std::array<std::size_t, 3> input_shape_;
  std::map<std::string, int> label_map_;
};

// In-process stub endpoint wrapping a local model; serves the documented
// protocol and can inject failures for retry tests.
class StubClassifierServer {
 public:
  explicit StubClassifierServer(std::shared_ptr<const Model<float>> model);
  ~StubClassifierServer();

  StubClassifierServer(const StubClassifierServer&) = delete;
  StubClassifierServer& operator=(const StubClassifierServer&) = delete;

  // binds 127.0.0.1 on an ephemeral port and serves on a background thread
  void start();
  void stop();
  int port() const { return port_; }
  std::string endpoint() const;

  void fail_next(int n) { fail_next_.store(n); }
  int request_count() const { return requests_.load(); }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<const Model<float>> model_;
  std::atomic<int> fail_next_{0};
  std::atomic<int> requests_{0};
  int port_ = 0;
};

}  // namespace rapkit
