#include "caad/builder.hpp"

#include "caad/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <thread>

namespace caad {

ChunkPlan plan_chunks(std::size_t token_count, std::size_t chunk_size) {
  if (chunk_size < 1) throw BuildError("chunk size must be at least 1");
  if (token_count < 2) throw BuildError("answer needs at least 2 tokens to form a non-empty context");
  ChunkPlan plan;
  plan.reserve(token_count - 1);
  for (std::size_t target = 1; target < token_count; ++target) {
    const std::size_t begin = target > chunk_size ? target - chunk_size : 0;
    plan.push_back({begin, target, target});
  }
  return plan;
}

std::string format_prompt(std::string_view tmpl, std::string_view question) {
  static constexpr std::string_view kSlot = "{question}";
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const auto hit = tmpl.find(kSlot, pos);
    if (hit == std::string_view::npos) break;
    out.append(tmpl.substr(pos, hit - pos));
    out.append(question);
    pos = hit + kSlot.size();
  }
  out.append(tmpl.substr(pos));
  return out;
}

namespace {

std::vector<GroundingEntry> build_sample(const CorpusSample& sample, std::size_t sample_index,
                                         const Backends& backends, const BuildOptions& options,
                                         std::int64_t dim, std::int64_t vocab) {
  const auto& model = *backends.model;
  const auto& embedder = *backends.embedder;

  const auto prompt_ids = model.tokenize(format_prompt(options.prompt_template, sample.question));
  const auto answer_ids = model.tokenize(sample.answer);
  if (answer_ids.empty()) throw BuildError("answer is empty after tokenization", sample_index);
  const auto plan = plan_chunks(answer_ids.size(), static_cast<std::size_t>(options.chunk_size));

  std::vector<std::string> texts;
  texts.reserve(plan.size());
  for (const auto& chunk : plan) {
    texts.push_back(model.detokenize(std::span(answer_ids).subspan(chunk.begin, chunk.length())));
  }
  auto embeddings = embedder.embed(texts);
  if (embeddings.size() != plan.size()) throw BuildError("embedder returned the wrong number of vectors", sample_index);

  std::vector<TokenId> prefix(prompt_ids);
  prefix.reserve(prompt_ids.size() + answer_ids.size());
  std::vector<GroundingEntry> entries;
  entries.reserve(plan.size());
  for (std::size_t k = 0; k < plan.size(); ++k) {
    const auto& chunk = plan[k];
    while (prefix.size() < prompt_ids.size() + chunk.target) prefix.push_back(answer_ids[prefix.size() - prompt_ids.size()]);
    const Eigen::VectorXd logits = model.next_logits(prefix);
    if (logits.size() != vocab) {
      throw BuildError("logit vector length " + std::to_string(logits.size()) + " != vocabulary size " +
                           std::to_string(vocab) + " (tokenizer/vocabulary mismatch)",
                       sample_index);
    }
    if (embeddings[k].size() != dim) {
      throw BuildError("embedding length " + std::to_string(embeddings[k].size()) + " != dim " + std::to_string(dim),
                       sample_index);
    }
    entries.push_back(GroundingEntry{std::move(embeddings[k]), logits.cast<float>(),
                                     static_cast<std::int64_t>(sample_index), static_cast<std::int64_t>(chunk.target)});
  }
  return entries;
}

}  // namespace

GroundingSpace build_grounding_space(std::span<const CorpusSample> corpus, const Backends& backends,
                                     const BuildOptions& options) {
  if (corpus.empty()) throw BuildError("empty corpus");
  if (!backends.embedder || !backends.model) throw BuildError("both an embedder and a logit model are required");

  SpaceMetadata meta;
  meta.dim = backends.embedder->dim();
  meta.vocab_size = backends.model->vocab_size();
  meta.chunk_size = options.chunk_size;
  meta.embedder_id = backends.embedder->id();
  meta.model_id = backends.model->id();
  meta.logit_dtype = options.logit_dtype;
  GroundingSpaceBuilder builder(meta);

  std::vector<std::vector<GroundingEntry>> per_sample(corpus.size());
  std::vector<std::exception_ptr> failures(corpus.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < corpus.size(); i = next.fetch_add(1)) {
      try {
        per_sample[i] = build_sample(corpus[i], i, backends, options, meta.dim, meta.vocab_size);
      } catch (...) {
        failures[i] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.max_concurrency, 1, corpus.size());
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (!failures[i]) continue;
    try {
      std::rethrow_exception(failures[i]);
    } catch (const BuildError& e) {
      if (e.sample_index()) throw;
      throw BuildError("sample " + std::to_string(i) + ": " + e.what(), i);
    } catch (const std::exception& e) {
      throw BuildError("sample " + std::to_string(i) + ": " + e.what(), i);
    }
  }

  if (backends.model->vocab_size() != meta.vocab_size || backends.embedder->dim() != meta.dim) {
    throw BuildError("backend dimensions changed during the build");
  }

  std::size_t total = 0;
  for (const auto& entries : per_sample) total += entries.size();
  builder.reserve(total);
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    for (const auto& entry : per_sample[i]) {
      try {
        builder.append(entry);
      } catch (const BuildError& e) {
        throw BuildError("sample " + std::to_string(i) + ": " + e.what(), i);
      }
    }
    per_sample[i] = {};
  }
  return std::move(builder).seal();
}

std::vector<CorpusSample> read_corpus_jsonl(std::istream& in) {
  std::vector<CorpusSample> corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
    const auto doc = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded() || !doc.is_object()) throw BuildError("corpus line " + std::to_string(line_no) + ": invalid JSON");
    const auto q = doc.find("question");
    const auto a = doc.find("answer");
    if (q == doc.end() || a == doc.end() || !q->is_string() || !a->is_string()) {
      throw BuildError("corpus line " + std::to_string(line_no) + ": expected string fields \"question\" and \"answer\"");
    }
    corpus.push_back({q->get<std::string>(), a->get<std::string>()});
  }
  return corpus;
}

std::vector<CorpusSample> read_corpus_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw BuildError("cannot open corpus " + path.string());
  return read_corpus_jsonl(in);
}

}  // namespace caad
