#pragma once

#include "caad/decoder.hpp"

#include <json.hpp>

#include <iosfwd>

namespace caad {

nlohmann::json to_json(const DecodeConfig& config);
/// Header record: {"type": "header", "config": {...}, "greedy_only": bool, "prompt_tokens": [...]}.
nlohmann::json trace_header_json(const DecodeTrace& trace);
/// Step record; `model` (optional) adds the chosen token's text.
nlohmann::json trace_step_json(const DecodeStep& step, const LogitModel* model = nullptr);

/// JSON-lines: header line, then one line per step.
void write_trace_jsonl(std::ostream& out, const DecodeTrace& trace, const LogitModel* model = nullptr);

}  // namespace caad
