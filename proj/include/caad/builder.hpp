#pragma once

#include "caad/backends.hpp"
#include "caad/grounding_space.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace caad {

struct CorpusSample {
  std::string question;
  std::string answer;
};

/// Context window [begin, end) over answer tokens (zero-based) preceding the token at `target`.
/// Always end == target.
struct ChunkSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t target = 0;

  std::size_t length() const noexcept { return end - begin; }
  friend bool operator==(const ChunkSpan&, const ChunkSpan&) = default;
};

using ChunkPlan = std::vector<ChunkSpan>;

/// One chunk per target position 1..token_count-1, each covering the last
/// min(chunk_size, target) tokens. Throws BuildError if token_count < 2 or chunk_size < 1.
ChunkPlan plan_chunks(std::size_t token_count, std::size_t chunk_size);

inline constexpr std::string_view kQaPromptTemplate =
    "Answer the following question with one or two sentences. Question: {question} Answer:";

/// Substitutes every "{question}" in `tmpl`.
std::string format_prompt(std::string_view tmpl, std::string_view question);

struct BuildOptions {
  std::int64_t chunk_size = 8;
  std::string prompt_template = std::string(kQaPromptTemplate);
  LogitDtype logit_dtype = LogitDtype::kFloat32;
  /// Samples processed concurrently; 1 runs everything on the calling thread.
  std::size_t max_concurrency = 8;
};

/// Builds the grounding space: for each sample and each planned chunk, embeds the detokenized
/// context and stores the model's next-token logits conditioned on prompt + answer prefix.
/// Entries are ordered by sample, then step. Throws BuildError (with sample index when known).
GroundingSpace build_grounding_space(std::span<const CorpusSample> corpus, const Backends& backends,
                                     const BuildOptions& options = {});

/// JSON-lines corpus: one {"question": str, "answer": str} object per non-blank line.
/// Throws BuildError naming the 1-based line number on malformed input.
std::vector<CorpusSample> read_corpus_jsonl(std::istream& in);
std::vector<CorpusSample> read_corpus_jsonl(const std::filesystem::path& path);

}  // namespace caad
