#pragma once

#include "caad/backends.hpp"
#include "caad/grounding_space.hpp"
#include "caad/retrieval.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <string>
#include <vector>

namespace caad {

struct DecodeConfig {
  std::int64_t chunk_size = 8;
  std::int64_t top_n = 10;
  double gamma = 0.01;
  double alpha = 0.5;
  std::int64_t max_new_tokens = 64;
  std::vector<TokenId> stop_token_ids;

  /// Throws DecodeError when a knob is out of range.
  void validate() const;
};

struct DecodeStep {
  std::size_t step = 0;
  std::string context;              // detokenized window the query embedding was computed from
  Eigen::VectorXf query_embedding;  // empty in greedy-only mode
  RetrievalResult retrieval;        // empty in greedy-only mode
  TokenId model_argmax = 0;
  TokenId final_argmax = 0;
  TokenId token = 0;
};

struct DecodeTrace {
  DecodeConfig config;
  bool greedy_only = false;
  std::vector<TokenId> prompt_tokens;
  std::vector<DecodeStep> steps;
};

struct DecodeOutput {
  std::vector<TokenId> tokens;  // generated tokens, including a terminating stop token if one was emitted
  std::string text;             // detokenized generation without the stop token
  bool stopped = false;         // true when a stop token ended the run
  DecodeTrace trace;
};

class DecodeError : public std::runtime_error {
 public:
  DecodeError(const std::string& what, DecodeTrace partial = {})
      : std::runtime_error(what), partial_(std::move(partial)) {}

  const DecodeTrace& partial_trace() const noexcept { return partial_; }

 private:
  DecodeTrace partial_;
};

/// Index range [begin, end) of the last min(chunk_size, size) tokens.
std::pair<std::size_t, std::size_t> context_window(std::size_t history_size, std::size_t chunk_size);

/// Embedding of the detokenized context window; also returns the window's text.
std::pair<Eigen::VectorXf, std::string> current_context_embedding(std::span<const TokenId> history,
                                                                  std::size_t chunk_size, const Backends& backends);

/// model + alpha * agg, elementwise.
template <typename DerivedModel, typename DerivedAgg>
Eigen::VectorXd integrate_logits(const Eigen::MatrixBase<DerivedModel>& model_logits,
                                 const Eigen::MatrixBase<DerivedAgg>& agg_logits, double alpha) {
  if (model_logits.size() != agg_logits.size()) throw DecodeError("integrate_logits: length mismatch");
  Eigen::VectorXd out = model_logits.template cast<double>() + alpha * agg_logits.template cast<double>();
  if (!out.allFinite()) throw DecodeError("integrate_logits: non-finite result");
  return out;
}

/// Smallest index attaining the maximum. Same token as argmax of softmax(logits).
template <typename Derived>
TokenId select_token(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() == 0) throw DecodeError("select_token over an empty vector");
  Eigen::Index best = 0;
  for (Eigen::Index i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(static_cast<double>(logits(i)))) throw DecodeError("select_token: non-finite logit");
    if (logits(i) > logits(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

/// Retrieval-grounded greedy decoding. Verifies that the backends match the space's ids and
/// dimensions, then per step: embed context window, retrieve and aggregate, blend with the
/// model's logits for the full prefix, and pick the argmax. Exactly one next_logits call per
/// emitted token. Throws DecodeError (carrying the partial trace) on any failure.
DecodeOutput decode(std::string_view prompt, const GroundingSpace& space, const DecodeConfig& config,
                    const Backends& backends);

/// Token ids variant of decode().
DecodeOutput decode_tokens(std::vector<TokenId> prompt_tokens, const GroundingSpace& space, const DecodeConfig& config,
                           const Backends& backends);

/// Plain greedy decoding of the bare model; never touches an embedder or a grounding space.
DecodeOutput decode_greedy(std::string_view prompt, const DecodeConfig& config, const LogitModel& model);
DecodeOutput decode_greedy_tokens(std::vector<TokenId> prompt_tokens, const DecodeConfig& config,
                                  const LogitModel& model);

/// Throws DecodeError if the backends cannot serve `space` (id, dim or vocabulary mismatch).
void check_compatible(const GroundingSpace& space, const Backends& backends);

}  // namespace caad
