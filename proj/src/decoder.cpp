#include "caad/decoder.hpp"

#include <algorithm>
#include <future>

namespace caad {

void DecodeConfig::validate() const {
  if (chunk_size < 1) throw DecodeError("chunk size M must be >= 1");
  if (top_n < 1) throw DecodeError("top N must be >= 1");
  if (!(gamma >= 0.0 && gamma < 1.0)) throw DecodeError("gamma must lie in [0, 1)");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw DecodeError("alpha must lie in [0, 1]");
  if (max_new_tokens < 1) throw DecodeError("max_new_tokens must be >= 1");
}

std::pair<std::size_t, std::size_t> context_window(std::size_t history_size, std::size_t chunk_size) {
  return {history_size > chunk_size ? history_size - chunk_size : 0, history_size};
}

std::pair<Eigen::VectorXf, std::string> current_context_embedding(std::span<const TokenId> history,
                                                                  std::size_t chunk_size, const Backends& backends) {
  if (history.empty()) throw DecodeError("context embedding needs a non-empty token history");
  const auto [begin, end] = context_window(history.size(), chunk_size);
  try {
    std::string text = backends.model->detokenize(history.subspan(begin, end - begin));
    Eigen::VectorXf embedding = backends.embedder->embed_one(text);
    return {std::move(embedding), std::move(text)};
  } catch (const DecodeError&) {
    throw;
  } catch (const std::exception& e) {
    throw DecodeError(std::string("context embedding failed: ") + e.what());
  }
}

void check_compatible(const GroundingSpace& space, const Backends& backends) {
  if (!backends.embedder || !backends.model) throw DecodeError("decode requires an embedder and a logit model");
  const auto& meta = space.metadata();
  if (backends.model->id() != meta.model_id) {
    throw DecodeError("model id mismatch: space built for '" + meta.model_id + "', backend is '" +
                      backends.model->id() + "'");
  }
  if (backends.embedder->id() != meta.embedder_id) {
    throw DecodeError("embedder id mismatch: space built with '" + meta.embedder_id + "', backend is '" +
                      backends.embedder->id() + "'");
  }
  if (backends.model->vocab_size() != meta.vocab_size) throw DecodeError("vocabulary size mismatch with space");
  if (backends.embedder->dim() != meta.dim) throw DecodeError("embedding dimension mismatch with space");
}

namespace {

bool is_stop(const DecodeConfig& config, TokenId token) {
  return std::find(config.stop_token_ids.begin(), config.stop_token_ids.end(), token) !=
         config.stop_token_ids.end();
}

void finish(DecodeOutput& out, const LogitModel& model) {
  std::span<const TokenId> body(out.tokens);
  if (out.stopped) body = body.first(body.size() - 1);
  out.text = model.detokenize(body);
}

}  // namespace

DecodeOutput decode_tokens(std::vector<TokenId> prompt_tokens, const GroundingSpace& space,
                           const DecodeConfig& config, const Backends& backends) {
  config.validate();
  check_compatible(space, backends);
  if (prompt_tokens.empty()) throw DecodeError("prompt tokenizes to nothing; the context window would be empty");

  DecodeOutput out;
  out.trace.config = config;
  out.trace.prompt_tokens = prompt_tokens;
  std::vector<TokenId> history = std::move(prompt_tokens);
  const auto chunk = static_cast<std::size_t>(config.chunk_size);
  const auto n = static_cast<std::size_t>(config.top_n);

  try {
    for (std::int64_t t = 0; t < config.max_new_tokens; ++t) {
      DecodeStep step;
      step.step = static_cast<std::size_t>(t);

      auto retrieval = std::async(std::launch::async, [&] {
        auto [embedding, text] = current_context_embedding(history, chunk, backends);
        auto result = retrieve_and_aggregate(space, embedding, n, config.gamma);
        return std::make_tuple(std::move(embedding), std::move(text), std::move(result));
      });
      Eigen::VectorXd model_logits;
      try {
        model_logits = backends.model->next_logits(history);
      } catch (...) {
        retrieval.wait();
        throw;
      }
      auto [embedding, text, result] = retrieval.get();
      if (model_logits.size() != space.vocab_size()) throw DecodeError("model returned logits of the wrong length");

      const Eigen::VectorXd final_logits = integrate_logits(model_logits, result.aggregated_logits, config.alpha);
      step.context = std::move(text);
      step.query_embedding = std::move(embedding);
      step.retrieval = std::move(result);
      step.model_argmax = select_token(model_logits);
      step.final_argmax = select_token(final_logits);
      step.token = step.final_argmax;

      history.push_back(step.token);
      out.tokens.push_back(step.token);
      out.trace.steps.push_back(std::move(step));
      if (is_stop(config, out.tokens.back())) {
        out.stopped = true;
        break;
      }
    }
    finish(out, *backends.model);
  } catch (const DecodeError& e) {
    throw DecodeError(e.what(), std::move(out.trace));
  } catch (const std::exception& e) {
    throw DecodeError(std::string("decode failed at step ") + std::to_string(out.trace.steps.size()) + ": " +
                          e.what(),
                      std::move(out.trace));
  }
  return out;
}

DecodeOutput decode(std::string_view prompt, const GroundingSpace& space, const DecodeConfig& config,
                    const Backends& backends) {
  config.validate();
  check_compatible(space, backends);
  std::vector<TokenId> ids;
  try {
    ids = backends.model->tokenize(prompt);
  } catch (const std::exception& e) {
    throw DecodeError(std::string("prompt tokenization failed: ") + e.what());
  }
  return decode_tokens(std::move(ids), space, config, backends);
}

DecodeOutput decode_greedy_tokens(std::vector<TokenId> prompt_tokens, const DecodeConfig& config,
                                  const LogitModel& model) {
  config.validate();
  if (prompt_tokens.empty()) throw DecodeError("prompt tokenizes to nothing");

  DecodeOutput out;
  out.trace.config = config;
  out.trace.greedy_only = true;
  out.trace.prompt_tokens = prompt_tokens;
  std::vector<TokenId> history = std::move(prompt_tokens);
  try {
    for (std::int64_t t = 0; t < config.max_new_tokens; ++t) {
      const Eigen::VectorXd logits = model.next_logits(history);
      DecodeStep step;
      step.step = static_cast<std::size_t>(t);
      step.model_argmax = select_token(logits);
      step.final_argmax = step.model_argmax;
      step.token = step.model_argmax;
      history.push_back(step.token);
      out.tokens.push_back(step.token);
      out.trace.steps.push_back(std::move(step));
      if (is_stop(config, out.tokens.back())) {
        out.stopped = true;
        break;
      }
    }
    finish(out, model);
  } catch (const DecodeError& e) {
    throw DecodeError(e.what(), std::move(out.trace));
  } catch (const std::exception& e) {
    throw DecodeError(std::string("greedy decode failed: ") + e.what(), std::move(out.trace));
  }
  return out;
}

DecodeOutput decode_greedy(std::string_view prompt, const DecodeConfig& config, const LogitModel& model) {
  std::vector<TokenId> ids;
  try {
    ids = model.tokenize(prompt);
  } catch (const std::exception& e) {
    throw DecodeError(std::string("prompt tokenization failed: ") + e.what());
  }
  return decode_greedy_tokens(std::move(ids), config, model);
}

}  // namespace caad
