#pragma once

// Client side of the JSON-over-HTTP backend protocol:
//
//   GET  /v1/info        -> {"embedder_id"|"model_id": str, "dim": d?, "vocab_size": V?}
//   POST /v1/embed       {"texts": [str]}       -> {"vectors": [[number; d]]}
//   POST /v1/tokenize    {"text": str}          -> {"token_ids": [int]}
//   POST /v1/detokenize  {"token_ids": [int]}   -> {"text": str}
//   POST /v1/logits      {"token_ids": [int]}   -> {"logits": [number; V]}
//
// Errors are HTTP 400/500 with {"error": str}.

#include "caad/backends.hpp"

#include <json.hpp>

#include <chrono>
#include <semaphore>

namespace caad {

struct RemoteOptions {
  std::chrono::milliseconds timeout{30'000};
  std::ptrdiff_t max_in_flight = 8;
};

struct ServiceInfo {
  std::optional<std::string> embedder_id;
  std::optional<std::string> model_id;
  std::optional<std::int64_t> dim;
  std::optional<std::int64_t> vocab_size;
};

/// Parses a /v1/info document; throws BackendError (fatal) on schema violation.
ServiceInfo parse_service_info(const nlohmann::json& doc);

/// Thin JSON/HTTP transport with a per-request deadline and a bound on in-flight requests.
/// Transport failures and HTTP 5xx raise retryable BackendErrors; everything else is fatal.
class RemoteClient {
 public:
  explicit RemoteClient(std::string endpoint, RemoteOptions options = {});

  nlohmann::json get(const std::string& path) const;
  nlohmann::json post(const std::string& path, const nlohmann::json& body) const;

  const std::string& endpoint() const noexcept { return endpoint_; }

 private:
  nlohmann::json request(const std::string& method, const std::string& path, const nlohmann::json* body) const;

  std::string endpoint_;
  RemoteOptions options_;
  mutable std::counting_semaphore<> in_flight_;
};

class RemoteEmbedder final : public Embedder {
 public:
  /// Performs the /v1/info handshake; requires embedder_id and dim.
  explicit RemoteEmbedder(std::string endpoint, RemoteOptions options = {});

  const std::string& id() const override { return id_; }
  std::int64_t dim() const override { return dim_; }
  std::vector<Eigen::VectorXf> embed(std::span<const std::string> texts) const override;

 private:
  RemoteClient client_;
  std::string id_;
  std::int64_t dim_ = 0;
};

class RemoteLogitModel final : public LogitModel {
 public:
  /// Performs the /v1/info handshake; requires model_id and vocab_size.
  explicit RemoteLogitModel(std::string endpoint, RemoteOptions options = {});

  const std::string& id() const override { return id_; }
  std::int64_t vocab_size() const override { return vocab_size_; }
  std::vector<TokenId> tokenize(std::string_view text) const override;
  std::string detokenize(std::span<const TokenId> ids) const override;
  Eigen::VectorXd next_logits(std::span<const TokenId> ids) const override;

 private:
  RemoteClient client_;
  std::string id_;
  std::int64_t vocab_size_ = 0;
};

}  // namespace caad
