#pragma once

#include "caad/backends.hpp"

#include <unordered_map>

namespace caad {

struct ToyEmbedderOptions {
  std::int64_t dim = 64;
  int ngram_order = 3;
  std::uint64_t seed = 0;
};

/// Hashed character n-gram bag, L2-normalized. Integer hashing and double accumulation only,
/// so outputs are bit-identical across platforms.
class ToyEmbedder final : public Embedder {
 public:
  explicit ToyEmbedder(ToyEmbedderOptions options = {});

  const std::string& id() const override { return id_; }
  std::int64_t dim() const override { return options_.dim; }
  std::vector<Eigen::VectorXf> embed(std::span<const std::string> texts) const override;

  /// Throws BackendError (fatal) on empty text.
  Eigen::VectorXf embed_text(std::string_view text) const;

 private:
  ToyEmbedderOptions options_;
  std::string id_;
};

/// Smoothed bigram language model over a whitespace vocabulary.
///
/// Vocabulary: <bos>=0, <eos>=1, <unk>=2, then words in order of first appearance in the
/// training texts. Each training text contributes the sequence <bos> w1 .. wn <eos>.
/// next_logits(ids)[v] = log(count(last, v) + k) - log(sum_u count(last, u) + k * V).
class ToyLogitModel final : public LogitModel {
 public:
  static constexpr TokenId kBos = 0;
  static constexpr TokenId kEos = 1;
  static constexpr TokenId kUnk = 2;

  static ToyLogitModel train(std::span<const std::string> texts, double smoothing = 1.0);

  const std::string& id() const override { return id_; }
  std::int64_t vocab_size() const override { return static_cast<std::int64_t>(vocab_.size()); }
  /// Whitespace split; words outside the vocabulary map to <unk>.
  std::vector<TokenId> tokenize(std::string_view text) const override;
  /// Tokens joined by single spaces; special tokens render as their literal names.
  std::string detokenize(std::span<const TokenId> ids) const override;
  Eigen::VectorXd next_logits(std::span<const TokenId> ids) const override;
  std::optional<TokenId> eos_token() const override { return kEos; }

  const std::string& token_text(TokenId id) const;
  double smoothing() const noexcept { return smoothing_; }
  /// Raw bigram count of (prev, next).
  std::int64_t bigram_count(TokenId prev, TokenId next) const;

 private:
  ToyLogitModel() = default;

  struct Row {
    std::vector<std::pair<TokenId, std::int64_t>> counts;  // sorted by token id
    std::int64_t total = 0;
  };

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, TokenId> lookup_;
  std::vector<Row> rows_;
  double smoothing_ = 1.0;
  std::string id_;
};

/// Splits on ASCII whitespace.
std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace caad
