#include "rapkit/models/remote.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <thread>

#include "rapkit/io/png.hpp"
#include "rapkit/util/base64.hpp"

namespace rapkit {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string base;  // scheme://host:port
  std::string path;  // /classify
};

Endpoint split_endpoint(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw InvalidConfig("endpoint needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

std::string resolve_token(const RemoteClassifierSpec& spec) {
  if (!spec.auth_token.empty()) return spec.auth_token;
  if (!spec.auth_token_env.empty()) {
    if (const char* v = std::getenv(spec.auth_token_env.c_str())) return v;
  }
  return {};
}

std::vector<RemotePrediction> parse_predictions(const std::string& body, int top_k) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed response JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("predictions") || !j["predictions"].is_array())
    throw ProtocolError("response is missing the predictions array");
  std::vector<RemotePrediction> preds;
  double prev = std::numeric_limits<double>::infinity();
  for (const auto& p : j["predictions"]) {
    if (!p.is_object() || !p.contains("label") || !p.contains("score"))
      throw ProtocolError("prediction entries need label and score");
    RemotePrediction rp;
    if (p["label"].is_string())
      rp.label = p["label"].get<std::string>();
    else if (p["label"].is_number_integer())
      rp.label = std::to_string(p["label"].get<long long>());
    else
      throw ProtocolError("prediction label must be a string or integer");
    if (!p["score"].is_number()) throw ProtocolError("prediction score must be a number");
    rp.score = p["score"].get<double>();
    if (!std::isfinite(rp.score)) throw ProtocolError("prediction score must be finite");
    if (rp.score > prev + 1e-12) throw ProtocolError("predictions must be sorted by score");
    prev = rp.score;
    preds.push_back(std::move(rp));
    if (int(preds.size()) == top_k) break;
  }
  return preds;
}

}  // namespace

void RemoteClassifierSpec::validate() const {
  if (endpoint.empty()) throw InvalidConfig("remote endpoint must be set");
  if (top_k < 1) throw InvalidConfig("remote top_k must be >= 1");
  if (timeout_ms < 1) throw InvalidConfig("remote timeout must be positive");
  if (retry.max_retries < 0) throw InvalidConfig("max_retries must be >= 0");
  split_endpoint(endpoint);
}

std::vector<std::optional<std::vector<RemotePrediction>>> try_remote_predict(
    const RemoteClassifierSpec& spec, const ImageBatch<float>& batch,
    RemoteCallStats* stats) {
  spec.validate();
  batch.validate();
  const auto ep = split_endpoint(spec.endpoint);
  httplib::Client client(ep.base);
  client.set_connection_timeout(0, spec.timeout_ms * 1000);
  client.set_read_timeout(0, spec.timeout_ms * 1000);
  const std::string token = resolve_token(spec);

  std::vector<std::optional<std::vector<RemotePrediction>>> out(batch.size());
  if (batch.size() == 0) return out;

  const auto shape = batch.pixels.shape();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto png = io::encode_png(batch.pixels.image(i).data(), shape[1], shape[2], shape[3]);
    const json body{{"image", base64_encode(png)}};
    const std::string payload = body.dump();

    std::optional<std::vector<RemotePrediction>> result;
    std::string last_error = "no attempt made";
    for (int attempt = 0; attempt <= spec.retry.max_retries; ++attempt) {
      if (attempt > 0) {
        if (stats) ++stats->retries;
        std::this_thread::sleep_for(std::chrono::milliseconds(spec.retry.backoff_ms));
      }
      httplib::Headers headers;
      if (!token.empty()) headers.emplace("Authorization", "Bearer " + token);
      auto res = client.Post(ep.path, headers, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
        continue;
      }
      if (res->status != 200) {
        last_error = "HTTP status " + std::to_string(res->status);
        continue;
      }
      result = parse_predictions(res->body, spec.top_k);  // malformed bodies throw
      break;
    }
    if (result) {
      out[i] = std::move(result);
    } else {
      if (stats) ++stats->failed_images;
      out[i] = std::nullopt;
      (void)last_error;
    }
  }
  return out;
}

std::vector<std::vector<RemotePrediction>> remote_predict(const RemoteClassifierSpec& spec,
                                                          const ImageBatch<float>& batch,
                                                          RemoteCallStats* stats) {
  auto maybe = try_remote_predict(spec, batch, stats);
  std::vector<std::vector<RemotePrediction>> out;
  out.reserve(maybe.size());
  for (std::size_t i = 0; i < maybe.size(); ++i) {
    if (!maybe[i])
      throw ProtocolError("remote prediction failed for image " + std::to_string(i) +
                          " after retries");
    out.push_back(std::move(*maybe[i]));
  }
  return out;
}

RemoteModel::RemoteModel(RemoteClassifierSpec spec, int num_classes,
                         std::array<std::size_t, 3> input_shape,
                         std::map<std::string, int> label_map)
    : spec_(std::move(spec)),
      num_classes_(num_classes),
      input_shape_(input_shape),
      label_map_(std::move(label_map)) {
  spec_.validate();
  if (num_classes_ < 2) throw InvalidConfig("num_classes must be >= 2");
}

struct StubClassifierServer::Impl {
  httplib::Server server;
  std::thread thread;
};

StubClassifierServer::StubClassifierServer(std::shared_ptr<const Model<float>> model)
    : impl_(std::make_unique<Impl>()), model_(std::move(model)) {
  if (!model_) throw InvalidConfig("stub server needs a model");
}

StubClassifierServer::~StubClassifierServer() { stop(); }

void StubClassifierServer::start() {
  impl_->server.Post("/classify", [this](const httplib::Request& req, httplib::Response& res) {
    requests_.fetch_add(1);
    int pending = fail_next_.load();
    while (pending > 0 && !fail_next_.compare_exchange_weak(pending, pending - 1)) {
    }
    if (pending > 0) {
      res.status = 500;
      res.set_content(R"({"error":"injected failure"})", "application/json");
      return;
    }
    try {
      const json body = json::parse(req.body);
      const auto png = base64_decode(body.at("image").get<std::string>());
      const auto img = io::decode_png(png);
      const auto shape = model_->input_shape();
      if (img.channels != shape[0] || img.height != shape[1] || img.width != shape[2]) {
        res.status = 400;
        res.set_content(R"({"error":"image shape mismatch"})", "application/json");
        return;
      }
      Tensor<float> batch({1, shape[0], shape[1], shape[2]});
      std::copy(img.chw.begin(), img.chw.end(), batch.data());
      const auto logits = model_->forward(batch);

      std::vector<int> idx(std::size_t(model_->num_classes()));
      for (std::size_t c = 0; c < idx.size(); ++c) idx[c] = int(c);
      std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        return logits.at(0, std::size_t(a)) > logits.at(0, std::size_t(b));
      });
      json preds = json::array();
      for (int c : idx)
        preds.push_back({{"label", c}, {"score", double(logits.at(0, std::size_t(c)))}});
      res.set_content(json{{"predictions", preds}}.dump(), "application/json");
    } catch (const std::exception& e) {
      res.status = 400;
      res.set_content(json{{"error", e.what()}}.dump(), "application/json");
    }
  });

  port_ = impl_->server.bind_to_any_port("127.0.0.1");
  if (port_ <= 0) throw std::runtime_error("stub server failed to bind");
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void StubClassifierServer::stop() {
  if (impl_ && impl_->thread.joinable()) {
    impl_->server.stop();
    impl_->thread.join();
  }
}

std::string StubClassifierServer::endpoint() const {
  return "http://127.0.0.1:" + std::to_string(port_) + "/classify";
}

Tensor<float> RemoteModel::forward(const Tensor<float>& batch) const {
  check_batch_shape(batch);
  ImageBatch<float> wrapped;
  wrapped.pixels = batch;
  wrapped.labels.assign(batch.dim(0), 0);
  wrapped.image_ids.resize(batch.dim(0));
  for (std::size_t i = 0; i < batch.dim(0); ++i) wrapped.image_ids[i] = std::int64_t(i);

  const auto preds = remote_predict(spec_, wrapped);
  constexpr float kAbsent = -1.0e9f;  // finite but below any returned score
  Tensor<float> logits({batch.dim(0), std::size_t(num_classes_)}, kAbsent);
  for (std::size_t i = 0; i < preds.size(); ++i)
    for (const auto& p : preds[i]) {
      const auto it = label_map_.find(p.label);
      if (it == label_map_.end()) continue;
      if (it->second < 0 || it->second >= num_classes_)
        throw InvalidConfig("label map points outside the class range");
      logits.at(i, std::size_t(it->second)) = float(p.score);
    }
  return logits;
}

}  // namespace rapkit
