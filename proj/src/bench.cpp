#include "caad/bench.hpp"

#include "caad/retrieval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace caad {

LatencySummary summarize_latencies(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw std::invalid_argument("no latency samples");
  std::sort(samples_ms.begin(), samples_ms.end());
  const auto rank = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(samples_ms.size())));
    return samples_ms[std::clamp<std::size_t>(k, 1, samples_ms.size()) - 1];
  };
  LatencySummary s;
  s.trials = samples_ms.size();
  s.p50_ms = rank(50.0);
  s.p95_ms = rank(95.0);
  s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / static_cast<double>(samples_ms.size());
  s.min_ms = samples_ms.front();
  s.max_ms = samples_ms.back();
  return s;
}

GroundingSpace make_synthetic_space(std::size_t entries, std::int64_t dim, std::int64_t vocab, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0F, 1.0F);
  std::uniform_real_distribution<float> uniform(-5.0F, 5.0F);

  const auto rows = static_cast<Eigen::Index>(entries);
  RowMatrixXf embeddings(rows, dim);
  RowMatrixXf logits(rows, vocab);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < dim; ++c) embeddings(r, c) = gauss(rng);
    for (Eigen::Index c = 0; c < vocab; ++c) logits(r, c) = uniform(rng);
  }
  std::vector<std::int64_t> sources(entries);
  std::vector<std::int64_t> steps(entries);
  for (std::size_t i = 0; i < entries; ++i) {
    sources[i] = static_cast<std::int64_t>(i / 400);
    steps[i] = static_cast<std::int64_t>(i % 400 + 1);
  }
  SpaceMetadata meta{dim, vocab, 8, "synthetic-gaussian", "synthetic-uniform", LogitDtype::kFloat32};
  return GroundingSpace::from_parts(std::move(meta), std::move(embeddings), std::move(logits), std::move(sources),
                                    std::move(steps));
}

BenchReport run_retrieval_bench(const GroundingSpace& space, const BenchOptions& options) {
  if (options.trials == 0) throw std::invalid_argument("trials must be positive");
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<float> gauss(0.0F, 1.0F);
  const auto make_query = [&] {
    Eigen::VectorXf q(space.dim());
    for (Eigen::Index i = 0; i < q.size(); ++i) q[i] = gauss(rng);
    return q;
  };

  volatile double sink = 0.0;
  for (std::size_t i = 0; i < options.warmup; ++i) {
    sink = sink + retrieve_and_aggregate(space, make_query(), options.top_n, options.gamma).aggregated_logits[0];
  }

  std::vector<double> samples;
  samples.reserve(options.trials);
  for (std::size_t i = 0; i < options.trials; ++i) {
    const Eigen::VectorXf query = make_query();
    const auto start = std::chrono::steady_clock::now();
    const auto result = retrieve_and_aggregate(space, query, options.top_n, options.gamma);
    const auto stop = std::chrono::steady_clock::now();
    sink = sink + result.aggregated_logits[0];
    samples.push_back(std::chrono::duration<double, std::milli>(stop - start).count());
  }

  BenchReport report;
  report.latency = summarize_latencies(std::move(samples));
  report.entries = space.size();
  report.dim = space.dim();
  report.vocab_size = space.vocab_size();
  report.memory_bytes = sizeof(float) * static_cast<std::size_t>(space.embeddings().size() + space.logits().size()) +
                        sizeof(double) * static_cast<std::size_t>(space.embedding_norms().size()) +
                        2 * sizeof(std::int64_t) * space.size();
  report.budget_ms = options.budget_ms;
  report.within_budget = report.latency.p50_ms <= options.budget_ms;
  return report;
}

nlohmann::json to_json(const BenchReport& report) {
  return nlohmann::json{
      {"entries", report.entries},
      {"dim", report.dim},
      {"vocab_size", report.vocab_size},
      {"trials", report.latency.trials},
      {"p50_ms", report.latency.p50_ms},
      {"p95_ms", report.latency.p95_ms},
      {"mean_ms", report.latency.mean_ms},
      {"min_ms", report.latency.min_ms},
      {"max_ms", report.latency.max_ms},
      {"memory_bytes", report.memory_bytes},
      {"budget_ms", report.budget_ms},
      {"pass", report.within_budget},
  };
}

}  // namespace caad
