#pragma once

#include "caad/grounding_space.hpp"

#include <json.hpp>

#include <cstdint>
#include <vector>

namespace caad {

struct LatencySummary {
  std::size_t trials = 0;
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double mean_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

/// Nearest-rank percentiles. Throws std::invalid_argument on an empty sample.
LatencySummary summarize_latencies(std::vector<double> samples_ms);

/// Random space: Gaussian embeddings, uniform logits in [-5, 5]. Deterministic per seed.
GroundingSpace make_synthetic_space(std::size_t entries, std::int64_t dim, std::int64_t vocab, std::uint64_t seed);

struct BenchOptions {
  std::size_t trials = 100;
  std::size_t warmup = 3;
  std::size_t top_n = 10;
  double gamma = 0.01;
  double budget_ms = 100.0;
  std::uint64_t seed = 7;
};

struct BenchReport {
  LatencySummary latency;
  std::size_t entries = 0;
  std::int64_t dim = 0;
  std::int64_t vocab_size = 0;
  std::size_t memory_bytes = 0;
  double budget_ms = 0.0;
  bool within_budget = false;
};

/// Times retrieve_and_aggregate over random Gaussian queries. Throws std::invalid_argument if
/// trials == 0.
BenchReport run_retrieval_bench(const GroundingSpace& space, const BenchOptions& options);

nlohmann::json to_json(const BenchReport& report);

}  // namespace caad
