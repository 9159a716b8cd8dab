#include "caad/backend_service.hpp"

#include "caad/errors.hpp"

#include <httplib.h>
#include <json.hpp>

namespace caad {

namespace {

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& message) {
  reply(res, status, nlohmann::json{{"error", message}});
}

template <typename Handler>
httplib::Server::Handler json_endpoint(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body, nullptr, /*allow_exceptions=*/false);
    if (body.is_discarded() || !body.is_object()) return reply_error(res, 400, "request body must be a JSON object");
    try {
      reply(res, 200, handler(body));
    } catch (const nlohmann::json::exception& e) {
      reply_error(res, 400, e.what());
    } catch (const BackendError& e) {
      reply_error(res, e.retryable() ? 500 : 400, e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, e.what());
    }
  };
}

std::vector<TokenId> parse_ids(const nlohmann::json& body, std::int64_t vocab) {
  std::vector<TokenId> ids;
  for (const auto& v : body.at("token_ids")) {
    if (!v.is_number_integer()) throw BackendError("token ids must be integers", false);
    const auto id = v.get<std::int64_t>();
    if (id < 0 || id >= vocab) throw BackendError("token id " + std::to_string(id) + " out of range", false);
    ids.push_back(static_cast<TokenId>(id));
  }
  return ids;
}

}  // namespace

void mount_backend_routes(httplib::Server& server, Backends backends) {
  auto embedder = backends.embedder;
  auto model = backends.model;

  server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, nlohmann::json{{"ok", true}});
  });

  server.Get("/v1/info", [embedder, model](const httplib::Request&, httplib::Response& res) {
    nlohmann::json info = nlohmann::json::object();
    if (embedder) {
      info["embedder_id"] = embedder->id();
      info["dim"] = embedder->dim();
    }
    if (model) {
      info["model_id"] = model->id();
      info["vocab_size"] = model->vocab_size();
    }
    reply(res, 200, info);
  });

  if (embedder) {
    server.Post("/v1/embed", json_endpoint([embedder](const nlohmann::json& body) {
                  const auto texts = body.at("texts").get<std::vector<std::string>>();
                  nlohmann::json vectors = nlohmann::json::array();
                  for (const auto& v : embedder->embed(texts)) {
                    vectors.push_back(std::vector<double>(v.data(), v.data() + v.size()));
                  }
                  return nlohmann::json{{"vectors", vectors}};
                }));
  }

  if (model) {
    server.Post("/v1/tokenize", json_endpoint([model](const nlohmann::json& body) {
                  return nlohmann::json{{"token_ids", model->tokenize(body.at("text").get<std::string>())}};
                }));
    server.Post("/v1/detokenize", json_endpoint([model](const nlohmann::json& body) {
                  return nlohmann::json{{"text", model->detokenize(parse_ids(body, model->vocab_size()))}};
                }));
    server.Post("/v1/logits", json_endpoint([model](const nlohmann::json& body) {
                  const auto ids = parse_ids(body, model->vocab_size());
                  if (ids.empty()) throw BackendError("token_ids must be non-empty", false);
                  const Eigen::VectorXd logits = model->next_logits(ids);
                  return nlohmann::json{{"logits", std::vector<double>(logits.data(), logits.data() + logits.size())}};
                }));
  }
}

}  // namespace caad
