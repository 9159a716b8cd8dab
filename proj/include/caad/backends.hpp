#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace caad {

using TokenId = std::int32_t;

/// Sentence embedder E. Implementations must be deterministic, emit vectors of a fixed
/// dimension and accept concurrent calls.
class Embedder {
 public:
  virtual ~Embedder() = default;

  virtual const std::string& id() const = 0;
  virtual std::int64_t dim() const = 0;
  virtual std::vector<Eigen::VectorXf> embed(std::span<const std::string> texts) const = 0;

  Eigen::VectorXf embed_one(const std::string& text) const;
};

/// Tokenizer plus next-token logit provider of the base model. Thread-safe, deterministic.
class LogitModel {
 public:
  virtual ~LogitModel() = default;

  virtual const std::string& id() const = 0;
  virtual std::int64_t vocab_size() const = 0;
  virtual std::vector<TokenId> tokenize(std::string_view text) const = 0;
  virtual std::string detokenize(std::span<const TokenId> ids) const = 0;
  /// Pre-softmax scores for the token following `ids`; length vocab_size().
  virtual Eigen::VectorXd next_logits(std::span<const TokenId> ids) const = 0;
  virtual std::optional<TokenId> eos_token() const { return std::nullopt; }
};

struct Backends {
  std::shared_ptr<const Embedder> embedder;
  std::shared_ptr<const LogitModel> model;
};

}  // namespace caad
