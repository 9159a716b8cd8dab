#include "caad/trace_io.hpp"

#include <ostream>

namespace caad {

namespace {

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

nlohmann::json to_json(const DecodeConfig& config) {
  return nlohmann::json{
      {"chunk_size", config.chunk_size}, {"top_n", config.top_n},
      {"gamma", config.gamma},           {"alpha", config.alpha},
      {"max_new_tokens", config.max_new_tokens}, {"stop_token_ids", config.stop_token_ids},
  };
}

nlohmann::json trace_header_json(const DecodeTrace& trace) {
  return nlohmann::json{
      {"type", "header"},
      {"config", to_json(trace.config)},
      {"greedy_only", trace.greedy_only},
      {"prompt_tokens", trace.prompt_tokens},
  };
}

nlohmann::json trace_step_json(const DecodeStep& step, const LogitModel* model) {
  nlohmann::json j{
      {"type", "step"},
      {"step", step.step},
      {"model_argmax", step.model_argmax},
      {"final_argmax", step.final_argmax},
      {"token", step.token},
  };
  if (model) j["token_text"] = model->detokenize(std::span<const TokenId>(&step.token, 1));
  if (!step.retrieval.indices.empty()) {
    j["context"] = step.context;
    j["retrieval"] = {
        {"indices", step.retrieval.indices},
        {"similarities", to_std(step.retrieval.similarities)},
        {"weights", to_std(step.retrieval.weights)},
        {"selected", step.retrieval.selected},
        {"aggregated_argmax", select_token(step.retrieval.aggregated_logits)},
    };
  }
  return j;
}

void write_trace_jsonl(std::ostream& out, const DecodeTrace& trace, const LogitModel* model) {
  out << trace_header_json(trace).dump() << '\n';
  for (const auto& step : trace.steps) out << trace_step_json(step, model).dump() << '\n';
}

}  // namespace caad
