#include "caad/remote_backends.hpp"

#include "caad/errors.hpp"

#include <httplib.h>

#include <cmath>

namespace caad {

namespace {

[[noreturn]] void schema_violation(const std::string& what) {
  throw BackendError("backend schema violation: " + what, false);
}

const nlohmann::json& require(const nlohmann::json& doc, const char* key) {
  if (!doc.is_object() || !doc.contains(key)) schema_violation(std::string("missing field \"") + key + "\"");
  return doc.at(key);
}

double finite_number(const nlohmann::json& value, const char* what) {
  if (!value.is_number()) schema_violation(std::string(what) + " must be numeric");
  const double x = value.get<double>();
  if (!std::isfinite(x)) schema_violation(std::string(what) + " must be finite");
  return x;
}

std::int64_t positive_int(const nlohmann::json& value, const char* what) {
  if (!value.is_number_integer() || value.get<std::int64_t>() < 1) {
    schema_violation(std::string(what) + " must be a positive integer");
  }
  return value.get<std::int64_t>();
}

nlohmann::json ids_to_json(std::span<const TokenId> ids) { return nlohmann::json(std::vector<TokenId>(ids.begin(), ids.end())); }

class SlotGuard {
 public:
  SlotGuard(std::counting_semaphore<>& sem, std::chrono::milliseconds timeout) : sem_(sem) {
    if (!sem_.try_acquire_for(timeout)) throw BackendError("timed out waiting for an in-flight request slot", true);
  }
  ~SlotGuard() { sem_.release(); }
  SlotGuard(const SlotGuard&) = delete;
  SlotGuard& operator=(const SlotGuard&) = delete;

 private:
  std::counting_semaphore<>& sem_;
};

}  // namespace

ServiceInfo parse_service_info(const nlohmann::json& doc) {
  if (!doc.is_object()) schema_violation("/v1/info must return an object");
  ServiceInfo info;
  auto opt_string = [&](const char* key) -> std::optional<std::string> {
    if (!doc.contains(key)) return std::nullopt;
    if (!doc.at(key).is_string() || doc.at(key).get<std::string>().empty()) {
      schema_violation(std::string(key) + " must be a non-empty string");
    }
    return doc.at(key).get<std::string>();
  };
  info.embedder_id = opt_string("embedder_id");
  info.model_id = opt_string("model_id");
  if (doc.contains("dim")) info.dim = positive_int(doc.at("dim"), "dim");
  if (doc.contains("vocab_size")) info.vocab_size = positive_int(doc.at("vocab_size"), "vocab_size");
  if (!info.embedder_id && !info.model_id) schema_violation("/v1/info declares neither embedder_id nor model_id");
  return info;
}

RemoteClient::RemoteClient(std::string endpoint, RemoteOptions options)
    : endpoint_(std::move(endpoint)), options_(options), in_flight_(std::max<std::ptrdiff_t>(options.max_in_flight, 1)) {
  while (!endpoint_.empty() && endpoint_.back() == '/') endpoint_.pop_back();
  if (endpoint_.empty()) throw BackendError("empty backend endpoint", false);
}

nlohmann::json RemoteClient::get(const std::string& path) const { return request("GET", path, nullptr); }

nlohmann::json RemoteClient::post(const std::string& path, const nlohmann::json& body) const {
  return request("POST", path, &body);
}

nlohmann::json RemoteClient::request(const std::string& method, const std::string& path,
                                     const nlohmann::json* body) const {
  SlotGuard slot(in_flight_, options_.timeout);

  httplib::Client client(endpoint_);
  if (!client.is_valid()) throw BackendError("invalid backend endpoint: " + endpoint_, false);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(options_.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(options_.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  httplib::Result res = method == "GET" ? client.Get(path) : client.Post(path, body->dump(), "application/json");
  if (!res) {
    throw BackendError(method + " " + endpoint_ + path + " failed: " + httplib::to_string(res.error()), true);
  }

  nlohmann::json doc = nlohmann::json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  if (res->status != 200) {
    std::string message = "HTTP " + std::to_string(res->status);
    if (!doc.is_discarded() && doc.is_object() && doc.contains("error") && doc["error"].is_string()) {
      message += ": " + doc["error"].get<std::string>();
    }
    throw BackendError(method + " " + path + " -> " + message, res->status >= 500);
  }
  if (doc.is_discarded()) schema_violation(path + " returned invalid JSON");
  return doc;
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, RemoteOptions options) : client_(std::move(endpoint), options) {
  const auto info = parse_service_info(client_.get("/v1/info"));
  if (!info.embedder_id || !info.dim) schema_violation("embedding service must declare embedder_id and dim");
  id_ = *info.embedder_id;
  dim_ = *info.dim;
}

std::vector<Eigen::VectorXf> RemoteEmbedder::embed(std::span<const std::string> texts) const {
  if (texts.empty()) return {};
  const auto doc = client_.post("/v1/embed", {{"texts", std::vector<std::string>(texts.begin(), texts.end())}});
  const auto& vectors = require(doc, "vectors");
  if (!vectors.is_array() || vectors.size() != texts.size()) {
    schema_violation("expected " + std::to_string(texts.size()) + " vectors");
  }
  std::vector<Eigen::VectorXf> out;
  out.reserve(texts.size());
  for (const auto& v : vectors) {
    if (!v.is_array()) schema_violation("vector must be an array");
    if (static_cast<std::int64_t>(v.size()) != dim_) {
      throw BackendError("embedding length " + std::to_string(v.size()) + " != handshake dim " + std::to_string(dim_),
                         false);
    }
    Eigen::VectorXf e(dim_);
    for (std::int64_t i = 0; i < dim_; ++i) e[i] = static_cast<float>(finite_number(v[static_cast<std::size_t>(i)], "vector component"));
    out.push_back(std::move(e));
  }
  return out;
}

RemoteLogitModel::RemoteLogitModel(std::string endpoint, RemoteOptions options)
    : client_(std::move(endpoint), options) {
  const auto info = parse_service_info(client_.get("/v1/info"));
  if (!info.model_id || !info.vocab_size) schema_violation("model service must declare model_id and vocab_size");
  id_ = *info.model_id;
  vocab_size_ = *info.vocab_size;
}

std::vector<TokenId> RemoteLogitModel::tokenize(std::string_view text) const {
  const auto doc = client_.post("/v1/tokenize", {{"text", std::string(text)}});
  const auto& ids = require(doc, "token_ids");
  if (!ids.is_array()) schema_violation("token_ids must be an array");
  std::vector<TokenId> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    if (!id.is_number_integer()) schema_violation("token id must be an integer");
    const auto v = id.get<std::int64_t>();
    if (v < 0 || v >= vocab_size_) schema_violation("token id " + std::to_string(v) + " outside vocabulary");
    out.push_back(static_cast<TokenId>(v));
  }
  return out;
}

std::string RemoteLogitModel::detokenize(std::span<const TokenId> ids) const {
  const auto doc = client_.post("/v1/detokenize", {{"token_ids", ids_to_json(ids)}});
  const auto& text = require(doc, "text");
  if (!text.is_string()) schema_violation("text must be a string");
  return text.get<std::string>();
}

Eigen::VectorXd RemoteLogitModel::next_logits(std::span<const TokenId> ids) const {
  if (ids.empty()) throw BackendError("logits request requires a non-empty token id list", false);
  const auto doc = client_.post("/v1/logits", {{"token_ids", ids_to_json(ids)}});
  const auto& logits = require(doc, "logits");
  if (!logits.is_array()) schema_violation("logits must be an array");
  if (static_cast<std::int64_t>(logits.size()) != vocab_size_) {
    throw BackendError("logits length " + std::to_string(logits.size()) + " != handshake vocab_size " +
                           std::to_string(vocab_size_),
                       false);
  }
  Eigen::VectorXd out(vocab_size_);
  for (std::int64_t i = 0; i < vocab_size_; ++i) out[i] = finite_number(logits[static_cast<std::size_t>(i)], "logit");
  return out;
}

}  // namespace caad
