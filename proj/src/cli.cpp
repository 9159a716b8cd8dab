#include "caad/cli.hpp"

#include "caad/backend_service.hpp"
#include "caad/bench.hpp"
#include "caad/builder.hpp"
#include "caad/decoder.hpp"
#include "caad/errors.hpp"
#include "caad/remote_backends.hpp"
#include "caad/space_io.hpp"
#include "caad/toy_backends.hpp"
#include "caad/trace_io.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>

namespace caad {

namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackendFlags {
  bool toy = false;
  std::string embed_endpoint;
  std::string model_endpoint;
  std::string corpus;
  std::string prompt_template = std::string(kQaPromptTemplate);
  std::int64_t toy_dim = 64;
  int toy_ngram = 3;
  std::uint64_t toy_seed = 0;
  double toy_smoothing = 1.0;
  double timeout_s = 30.0;
};

void add_backend_flags(CLI::App* cmd, BackendFlags& flags, bool corpus_flag) {
  cmd->add_flag("--toy-backends", flags.toy, "Use the built-in n-gram embedder and bigram model (needs --corpus)");
  cmd->add_option("--embed-endpoint", flags.embed_endpoint, "Embedding service base URL")->envname("CAAD_EMBED_ENDPOINT");
  cmd->add_option("--model-endpoint", flags.model_endpoint, "Model service base URL")->envname("CAAD_MODEL_ENDPOINT");
  if (corpus_flag) cmd->add_option("--corpus", flags.corpus, "JSON-lines corpus the toy model is trained on");
  cmd->add_option("--prompt-template", flags.prompt_template, "Question prompt template with a {question} slot")
      ->capture_default_str();
  cmd->add_option("--toy-dim", flags.toy_dim, "Toy embedder dimension")->capture_default_str();
  cmd->add_option("--toy-ngram", flags.toy_ngram, "Toy embedder character n-gram order")->capture_default_str();
  cmd->add_option("--toy-seed", flags.toy_seed, "Toy embedder hash seed")->capture_default_str();
  cmd->add_option("--toy-smoothing", flags.toy_smoothing, "Toy bigram Laplace constant")->capture_default_str();
  cmd->add_option("--timeout", flags.timeout_s, "Remote request deadline in seconds")->capture_default_str();
}

void validate_backend_flags(const BackendFlags& flags) {
  if (flags.toy) {
    if (flags.corpus.empty()) throw UsageError("--toy-backends requires --corpus");
    return;
  }
  if (flags.embed_endpoint.empty() || flags.model_endpoint.empty()) {
    throw UsageError("either --toy-backends or both --embed-endpoint and --model-endpoint are required");
  }
}

std::vector<std::string> toy_training_texts(std::span<const CorpusSample> corpus, const std::string& tmpl) {
  std::vector<std::string> texts;
  texts.reserve(corpus.size());
  for (const auto& s : corpus) texts.push_back(format_prompt(tmpl, s.question) + " " + s.answer);
  return texts;
}

Backends make_backends(const BackendFlags& flags, const std::vector<CorpusSample>* corpus) {
  if (flags.toy) {
    std::vector<CorpusSample> loaded;
    if (!corpus) {
      loaded = read_corpus_jsonl(flags.corpus);
      corpus = &loaded;
    }
    auto texts = toy_training_texts(*corpus, flags.prompt_template);
    return {std::make_shared<ToyEmbedder>(ToyEmbedderOptions{flags.toy_dim, flags.toy_ngram, flags.toy_seed}),
            std::make_shared<ToyLogitModel>(ToyLogitModel::train(texts, flags.toy_smoothing))};
  }
  RemoteOptions options;
  options.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(flags.timeout_s * 1000.0));
  return {std::make_shared<RemoteEmbedder>(flags.embed_endpoint, options),
          std::make_shared<RemoteLogitModel>(flags.model_endpoint, options)};
}

struct DecodeFlags {
  std::optional<std::int64_t> chunk_size;
  std::int64_t top_n = 10;
  double alpha = 0.5;
  double gamma = 0.01;
  std::int64_t max_tokens = 64;
  std::vector<TokenId> stop_tokens;
  bool no_default_stop = false;
};

void add_decode_flags(CLI::App* cmd, DecodeFlags& flags) {
  cmd->add_option("--chunk-size", flags.chunk_size, "Context window M in tokens (default: the space's M)");
  cmd->add_option("--top-n", flags.top_n, "Retrieved contexts N")->capture_default_str();
  cmd->add_option("--alpha", flags.alpha, "Blend weight of aggregated logits")->capture_default_str();
  cmd->add_option("--gamma", flags.gamma, "Softmax weight threshold")->capture_default_str();
  cmd->add_option("--max-tokens", flags.max_tokens, "Maximum new tokens")->capture_default_str();
  cmd->add_option("--stop-token", flags.stop_tokens, "Stop token id (repeatable; default: the model's EOS)");
  cmd->add_flag("--no-default-stop", flags.no_default_stop, "Do not stop on the model's EOS token");
}

DecodeConfig make_config(const DecodeFlags& flags, const GroundingSpace& space, const LogitModel& model) {
  DecodeConfig config;
  config.chunk_size = flags.chunk_size.value_or(space.metadata().chunk_size);
  config.top_n = flags.top_n;
  config.alpha = flags.alpha;
  config.gamma = flags.gamma;
  config.max_new_tokens = flags.max_tokens;
  config.stop_token_ids = flags.stop_tokens;
  if (config.stop_token_ids.empty() && !flags.no_default_stop && model.eos_token()) {
    config.stop_token_ids.push_back(*model.eos_token());
  }
  config.validate();
  return config;
}

void validate_decode_flags(const DecodeFlags& flags) {
  DecodeConfig probe;
  probe.chunk_size = flags.chunk_size.value_or(1);
  probe.top_n = flags.top_n;
  probe.alpha = flags.alpha;
  probe.gamma = flags.gamma;
  probe.max_new_tokens = flags.max_tokens;
  try {
    probe.validate();
  } catch (const DecodeError& e) {
    throw UsageError(e.what());
  }
}

bool want_json(const std::string& format) { return format == "json"; }

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::exists(path)) throw UsageError(std::string(flag) + " " + path + " does not exist");
}

std::uint32_t file_crc32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return crc32(std::as_bytes(std::span(raw)));
}

std::string hex32(std::uint32_t v) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", v);
  return buf;
}

/// Index of the first position where the two sequences differ, or -1.
std::int64_t divergence_step(const std::vector<TokenId>& a, const std::vector<TokenId>& b) {
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (a[i] != b[i]) return static_cast<std::int64_t>(i);
  }
  return a.size() == b.size() ? -1 : static_cast<std::int64_t>(n);
}

// --- subcommands --------------------------------------------------------------

struct BuildArgs {
  BackendFlags backends;
  std::string out;
  std::int64_t chunk_size = 8;
  std::string logit_dtype = "float32";
  std::size_t jobs = 8;
  std::string format = "text";
};

int cmd_build(const BuildArgs& a, std::ostream& out) {
  require_file(a.backends.corpus, "--corpus");
  if (a.out.empty()) throw UsageError("--out is required");
  if (fs::exists(a.out)) throw UsageError("refusing to overwrite existing " + a.out);
  validate_backend_flags(a.backends);
  BuildOptions options;
  options.chunk_size = a.chunk_size;
  options.prompt_template = a.backends.prompt_template;
  options.max_concurrency = a.jobs;
  try {
    options.logit_dtype = parse_logit_dtype(a.logit_dtype);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  const auto corpus = read_corpus_jsonl(a.backends.corpus);
  if (corpus.empty()) throw BuildError("empty corpus");
  const auto backends = make_backends(a.backends, &corpus);

  const auto start = std::chrono::steady_clock::now();
  const auto space = build_grounding_space(corpus, backends, options);
  save(space, a.out);
  const double elapsed_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();

  const nlohmann::json summary{
      {"path", a.out},           {"samples", corpus.size()},     {"count", space.size()},
      {"dim", space.dim()},      {"vocab_size", space.vocab_size()}, {"chunk_size", a.chunk_size},
      {"logit_dtype", std::string(to_string(options.logit_dtype))},
      {"embedder_id", space.metadata().embedder_id}, {"model_id", space.metadata().model_id},
      {"elapsed_ms", elapsed_ms}, {"file_crc32", hex32(file_crc32(a.out))},
  };
  if (want_json(a.format)) {
    out << summary.dump() << '\n';
  } else {
    out << "built " << space.size() << " entries (d=" << space.dim() << ", V=" << space.vocab_size() << ") from "
        << corpus.size() << " samples in " << elapsed_ms << " ms -> " << a.out << '\n';
  }
  return 0;
}

struct DecodeArgs {
  BackendFlags backends;
  DecodeFlags decode;
  std::string space;
  std::string prompt;
  std::string question;
  bool greedy = false;
  std::string trace_out;
  std::string format = "text";
};

int cmd_decode(const DecodeArgs& a, std::ostream& out) {
  require_file(a.space, "--space");
  if (a.prompt.empty() == a.question.empty()) throw UsageError("exactly one of --prompt or --question is required");
  validate_backend_flags(a.backends);
  validate_decode_flags(a.decode);

  const auto space = load(a.space);
  const auto backends = make_backends(a.backends, nullptr);
  const auto config = make_config(a.decode, space, *backends.model);
  const std::string prompt = a.question.empty() ? a.prompt : format_prompt(a.backends.prompt_template, a.question);

  DecodeOutput result;
  if (a.greedy) {
    check_compatible(space, backends);
    result = decode_greedy(prompt, config, *backends.model);
  } else {
    result = decode(prompt, space, config, backends);
  }

  if (!a.trace_out.empty()) {
    std::ofstream trace(a.trace_out);
    if (!trace) throw std::runtime_error("cannot write trace to " + a.trace_out);
    write_trace_jsonl(trace, result.trace, backends.model.get());
  }
  if (want_json(a.format)) {
    out << nlohmann::json{{"text", result.text},
                          {"tokens", result.tokens},
                          {"stopped", result.stopped},
                          {"greedy_only", a.greedy},
                          {"config", to_json(config)}}
               .dump()
        << '\n';
  } else {
    out << result.text << '\n';
  }
  return 0;
}

struct CompareArgs {
  BackendFlags backends;
  DecodeFlags decode;
  std::string space;
  std::string prompts_file;
  bool questions = false;
  std::string format = "text";
};

int cmd_compare(const CompareArgs& a, std::ostream& out) {
  require_file(a.space, "--space");
  require_file(a.prompts_file, "--prompts-file");
  validate_backend_flags(a.backends);
  validate_decode_flags(a.decode);

  std::vector<std::string> prompts;
  {
    std::ifstream in(a.prompts_file);
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      prompts.push_back(a.questions ? format_prompt(a.backends.prompt_template, line) : line);
    }
  }
  if (prompts.empty()) throw UsageError("prompts file " + a.prompts_file + " is empty");

  const auto space = load(a.space);
  const auto backends = make_backends(a.backends, nullptr);
  check_compatible(space, backends);
  const auto config = make_config(a.decode, space, *backends.model);

  auto rows = nlohmann::json::array();
  for (const auto& prompt : prompts) {
    auto greedy = std::async(std::launch::async, [&] { return decode_greedy(prompt, config, *backends.model); });
    const auto caad = decode(prompt, space, config, backends);
    const auto base = greedy.get();
    const auto div = divergence_step(base.tokens, caad.tokens);
    if (want_json(a.format)) {
      rows.push_back({{"prompt", prompt}, {"greedy", base.text}, {"caad", caad.text}, {"divergence", div}});
    } else {
      out << "prompt:     " << prompt << '\n'
          << "greedy:     " << base.text << '\n'
          << "caad:       " << caad.text << '\n'
          << "divergence: " << div << "\n\n";
    }
  }
  if (want_json(a.format)) out << nlohmann::json{{"config", to_json(config)}, {"results", rows}}.dump() << '\n';
  return 0;
}

struct BenchArgs {
  std::string space;
  std::size_t entries = 50'000;
  std::int64_t dim = 384;
  std::int64_t vocab = 32;
  std::int64_t trials = 100;
  std::size_t top_n = 10;
  double gamma = 0.01;
  double budget_ms = 100.0;
  std::uint64_t seed = 7;
  std::string format = "json";
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  if (a.trials <= 0) throw UsageError("--trials must be positive");
  if (!a.space.empty()) require_file(a.space, "--space");
  if (a.space.empty() && (a.entries == 0 || a.dim < 1 || a.vocab < 1)) {
    throw UsageError("synthetic bench needs positive --entries, --dim and --vocab");
  }
  const auto space = a.space.empty() ? make_synthetic_space(a.entries, a.dim, a.vocab, a.seed) : load(a.space);

  BenchOptions options;
  options.trials = static_cast<std::size_t>(a.trials);
  options.top_n = a.top_n;
  options.gamma = a.gamma;
  options.budget_ms = a.budget_ms;
  options.seed = a.seed;
  auto report = to_json(run_retrieval_bench(space, options));
  report["source"] = a.space.empty() ? "synthetic" : a.space;
  if (want_json(a.format)) {
    out << report.dump() << '\n';
  } else {
    out << "entries=" << report["entries"] << " dim=" << report["dim"] << " p50=" << report["p50_ms"]
        << "ms p95=" << report["p95_ms"] << "ms budget=" << report["budget_ms"] << "ms "
        << (report["pass"].get<bool>() ? "PASS" : "FAIL") << '\n';
  }
  return 0;
}

int cmd_inspect(const std::string& path, std::ostream& out) {
  require_file(path, "--space");
  auto doc = inspect(load(path));
  doc["path"] = path;
  doc["header_count"] = read_space_header(path).at("count");
  out << doc.dump() << '\n';
  return 0;
}

struct ServeArgs {
  BackendFlags backends;
  std::string host = "127.0.0.1";
  int port = 8090;
};

int cmd_serve(const ServeArgs& a, std::ostream& out) {
  if (!a.backends.toy) throw UsageError("serve currently exposes only --toy-backends");
  validate_backend_flags(a.backends);
  const auto backends = make_backends(a.backends, nullptr);
  httplib::Server server;
  mount_backend_routes(server, backends);
  out << nlohmann::json{{"listening", a.host + ":" + std::to_string(a.port)},
                        {"embedder_id", backends.embedder->id()},
                        {"model_id", backends.model->id()}}
             .dump()
      << std::endl;
  if (!server.listen(a.host, a.port)) throw std::runtime_error("cannot listen on " + a.host + ":" + std::to_string(a.port));
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-grounded greedy decoding over a precomputed grounding space", "caad"};
  app.require_subcommand(1);
  const std::vector<std::string> formats{"text", "json"};

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build", "Build a grounding space from a question/answer corpus");
  add_backend_flags(build_cmd, build.backends, true);
  build_cmd->add_option("--out", build.out, "Output .caad path");
  build_cmd->add_option("--chunk-size", build.chunk_size, "Context window M in tokens")->capture_default_str();
  build_cmd->add_option("--logit-dtype", build.logit_dtype, "float32 or float16")->capture_default_str();
  build_cmd->add_option("--jobs", build.jobs, "Samples processed concurrently")->capture_default_str();
  build_cmd->add_option("--format", build.format)->check(CLI::IsMember(formats))->capture_default_str();

  DecodeArgs dec;
  auto* decode_cmd = app.add_subcommand("decode", "Generate a continuation with retrieval-grounded decoding");
  add_backend_flags(decode_cmd, dec.backends, true);
  add_decode_flags(decode_cmd, dec.decode);
  decode_cmd->add_option("--space", dec.space, "Grounding space .caad file");
  decode_cmd->add_option("--prompt", dec.prompt, "Raw prompt text");
  decode_cmd->add_option("--question", dec.question, "Question wrapped in the prompt template");
  decode_cmd->add_flag("--greedy", dec.greedy, "Plain greedy decoding; skips retrieval entirely");
  decode_cmd->add_option("--trace-out", dec.trace_out, "Write a JSON-lines decode trace here");
  decode_cmd->add_option("--format", dec.format)->check(CLI::IsMember(formats))->capture_default_str();

  CompareArgs cmp;
  auto* compare_cmd = app.add_subcommand("compare", "Greedy vs grounded decoding side by side");
  add_backend_flags(compare_cmd, cmp.backends, true);
  add_decode_flags(compare_cmd, cmp.decode);
  compare_cmd->add_option("--space", cmp.space, "Grounding space .caad file");
  compare_cmd->add_option("--prompts-file", cmp.prompts_file, "One prompt per line");
  compare_cmd->add_flag("--questions", cmp.questions, "Treat each line as a question for the prompt template");
  compare_cmd->add_option("--format", cmp.format)->check(CLI::IsMember(formats))->capture_default_str();

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Retrieval + aggregation latency (p50/p95)");
  bench_cmd->add_option("--space", bench.space, "Benchmark this space instead of a synthetic one");
  bench_cmd->add_option("--entries", bench.entries, "Synthetic space size")->capture_default_str();
  bench_cmd->add_option("--dim", bench.dim, "Synthetic embedding dimension")->capture_default_str();
  bench_cmd->add_option("--vocab", bench.vocab, "Synthetic vocabulary size")->capture_default_str();
  bench_cmd->add_option("--trials", bench.trials, "Timed queries")->capture_default_str();
  bench_cmd->add_option("--top-n", bench.top_n)->capture_default_str();
  bench_cmd->add_option("--gamma", bench.gamma)->capture_default_str();
  bench_cmd->add_option("--budget-ms", bench.budget_ms, "p50 budget flagged as pass/fail")->capture_default_str();
  bench_cmd->add_option("--seed", bench.seed)->capture_default_str();
  bench_cmd->add_option("--format", bench.format)->check(CLI::IsMember(formats))->capture_default_str();

  std::string inspect_path;
  auto* inspect_cmd = app.add_subcommand("inspect", "Print a JSON summary of a .caad file");
  inspect_cmd->add_option("--space", inspect_path, "Grounding space .caad file");

  ServeArgs serve;
  auto* serve_cmd = app.add_subcommand("serve", "Serve the toy backends over the HTTP wire protocol");
  add_backend_flags(serve_cmd, serve.backends, true);
  serve_cmd->add_option("--host", serve.host)->capture_default_str();
  serve_cmd->add_option("--port", serve.port)->capture_default_str();

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  if (args.empty()) argv.push_back("caad");
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*build_cmd) return cmd_build(build, out);
    if (*decode_cmd) return cmd_decode(dec, out);
    if (*compare_cmd) return cmd_compare(cmp, out);
    if (*bench_cmd) return cmd_bench(bench, out);
    if (*inspect_cmd) return cmd_inspect(inspect_path, out);
    if (*serve_cmd) return cmd_serve(serve, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const BuildError& e) {
    err << "build failed: " << e.what() << '\n';
    return 1;
  } catch (const FormatError& e) {
    err << "bad space file: " << e.what() << '\n';
    return 1;
  } catch (const DecodeError& e) {
    err << "decode failed: " << e.what() << '\n';
    return 1;
  } catch (const BackendError& e) {
    err << "backend error" << (e.retryable() ? " (retryable): " : ": ") << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace caad
