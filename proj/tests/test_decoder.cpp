#include "caad/builder.hpp"
#include "caad/decoder.hpp"
#include "caad/errors.hpp"
#include "caad/toy_backends.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <atomic>

namespace caad {
namespace {

struct Fixture {
  std::vector<CorpusSample> corpus;
  Backends backends;
  GroundingSpace space;
};

Fixture make_fixture(std::uint64_t seed, std::size_t samples = 12) {
  std::mt19937_64 rng(seed);
  std::vector<CorpusSample> corpus;
  std::vector<std::string> texts;
  for (std::size_t i = 0; i < samples; ++i) {
    corpus.push_back({testing::random_text(rng, 4), testing::random_text(rng, 6 + i % 9)});
    texts.push_back(format_prompt(kQaPromptTemplate, corpus.back().question) + " " + corpus.back().answer);
  }
  Backends backends{std::make_shared<ToyEmbedder>(), std::make_shared<ToyLogitModel>(ToyLogitModel::train(texts))};
  auto space = build_grounding_space(corpus, backends, {});
  return {std::move(corpus), std::move(backends), std::move(space)};
}

DecodeConfig with_stop(const Backends& b, DecodeConfig c = {}) {
  c.stop_token_ids = {*b.model->eos_token()};
  return c;
}

/// Wraps a model and counts next_logits calls; optionally fails on a given call.
class CountingModel : public LogitModel {
 public:
  CountingModel(std::shared_ptr<const LogitModel> inner, int fail_on_call = -1)
      : inner_(std::move(inner)), fail_on_call_(fail_on_call) {}
  const std::string& id() const override { return inner_->id(); }
  std::int64_t vocab_size() const override { return inner_->vocab_size(); }
  std::vector<TokenId> tokenize(std::string_view t) const override { return inner_->tokenize(t); }
  std::string detokenize(std::span<const TokenId> ids) const override { return inner_->detokenize(ids); }
  Eigen::VectorXd next_logits(std::span<const TokenId> prefix) const override {
    const int call = calls++;
    if (call == fail_on_call_) throw BackendError("injected failure", true);
    return inner_->next_logits(prefix);
  }
  std::optional<TokenId> eos_token() const override { return inner_->eos_token(); }

  mutable std::atomic<int> calls{0};

 private:
  std::shared_ptr<const LogitModel> inner_;
  int fail_on_call_;
};

class CountingEmbedder : public Embedder {
 public:
  explicit CountingEmbedder(std::shared_ptr<const Embedder> inner) : inner_(std::move(inner)) {}
  const std::string& id() const override { return inner_->id(); }
  std::int64_t dim() const override { return inner_->dim(); }
  std::vector<Eigen::VectorXf> embed(std::span<const std::string> texts) const override {
    calls += static_cast<int>(texts.size());
    return inner_->embed(texts);
  }
  mutable std::atomic<int> calls{0};

 private:
  std::shared_ptr<const Embedder> inner_;
};

// --- pure helpers ------------------------------------------------------------------

TEST(ContextWindow, Examples) {
  EXPECT_EQ(context_window(20, 8), std::make_pair(std::size_t{12}, std::size_t{20}));
  EXPECT_EQ(context_window(3, 8), std::make_pair(std::size_t{0}, std::size_t{3}));
  EXPECT_EQ(context_window(8, 8), std::make_pair(std::size_t{0}, std::size_t{8}));
  EXPECT_EQ(context_window(1, 1), std::make_pair(std::size_t{0}, std::size_t{1}));
}

TEST(ContextWindow, LengthIsMinOfHistoryAndChunk) {
  for (std::size_t h = 1; h < 40; ++h) {
    for (std::size_t m = 1; m < 12; ++m) {
      const auto [b, e] = context_window(h, m);
      ASSERT_EQ(e, h);
      ASSERT_EQ(e - b, std::min(h, m));
    }
  }
}

TEST(Integrate, Examples) {
  Eigen::VectorXd model(3), agg(3);
  model << 1.0, 2.0, 0.5;
  agg << 0.0, 0.0, 4.0;
  const auto out = integrate_logits(model, agg, 0.5);
  EXPECT_EQ(out, (Eigen::VectorXd(3) << 1.0, 2.0, 2.5).finished());
  EXPECT_EQ(select_token(out), 2);
  EXPECT_EQ(select_token(integrate_logits(model, agg, 0.0)), 1);
  EXPECT_THROW(integrate_logits(model, Eigen::VectorXd(2), 0.5), DecodeError);
}

TEST(SelectToken, TiesGoToLowestIndexAndEmptyThrows) {
  EXPECT_EQ(select_token((Eigen::VectorXd(4) << 1.0, 3.0, 3.0, -1.0).finished()), 1);
  EXPECT_EQ(select_token((Eigen::VectorXd(3) << 2.0, 2.0, 2.0).finished()), 0);
  EXPECT_THROW(select_token(Eigen::VectorXd(0)), DecodeError);
  EXPECT_THROW(select_token((Eigen::VectorXd(2) << 0.0, std::nan("")).finished()), DecodeError);
}

TEST(SelectToken, MatchesArgmaxOfSoftmaxAndIsShiftInvariant) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Eigen::VectorXd l(1 + trial % 50);
    for (auto& x : l) x = u(rng);
    if (trial % 5 == 0) l[l.size() / 2] = l.maxCoeff();  // force a tie
    const Eigen::VectorXd p = (l.array() - l.maxCoeff()).exp() / (l.array() - l.maxCoeff()).exp().sum();
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < p.size(); ++i) {
      if (p[i] > p[best]) best = i;
    }
    ASSERT_EQ(select_token(l), best);
    const double c = u(rng);
    ASSERT_EQ(select_token(Eigen::VectorXd(l.array() + c)), select_token(l));
  }
}

TEST(DecodeConfig, Validation) {
  DecodeConfig c;
  EXPECT_NO_THROW(c.validate());
  for (auto mutate : std::vector<void (*)(DecodeConfig&)>{
           [](DecodeConfig& x) { x.chunk_size = 0; }, [](DecodeConfig& x) { x.top_n = 0; },
           [](DecodeConfig& x) { x.gamma = 1.0; }, [](DecodeConfig& x) { x.gamma = -0.1; },
           [](DecodeConfig& x) { x.alpha = 1.5; }, [](DecodeConfig& x) { x.alpha = -0.1; },
           [](DecodeConfig& x) { x.max_new_tokens = 0; }}) {
    DecodeConfig bad;
    mutate(bad);
    EXPECT_THROW(bad.validate(), DecodeError);
  }
  c.gamma = 0.1;
  EXPECT_NO_THROW(c.validate());
}

// --- decoding --------------------------------------------------------------------

TEST(Decode, AlphaZeroReproducesGreedy) {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    const auto f = make_fixture(seed);
    auto config = with_stop(f.backends);
    config.alpha = 0.0;
    config.max_new_tokens = 24;
    for (const auto& s : f.corpus) {
      const auto prompt = format_prompt(kQaPromptTemplate, s.question);
      const auto blended = decode(prompt, f.space, config, f.backends);
      const auto greedy = decode_greedy(prompt, config, *f.backends.model);
      ASSERT_EQ(blended.tokens, greedy.tokens);
      ASSERT_EQ(blended.text, greedy.text);
      ASSERT_EQ(blended.stopped, greedy.stopped);
    }
  }
}

TEST(Decode, EngineeredInstanceDivergesAtSecondStep) {
  const auto s = testing::make_flip_scenario();
  Backends backends{s.embedder, s.model};
  DecodeConfig config;
  config.stop_token_ids = {ToyLogitModel::kEos};
  config.max_new_tokens = 4;

  const auto greedy = decode_greedy(s.prompt, config, *s.model);
  EXPECT_EQ(greedy.tokens, (std::vector<TokenId>{s.q, s.a, ToyLogitModel::kEos}));
  EXPECT_TRUE(greedy.stopped);
  EXPECT_EQ(greedy.text, "q A");

  const auto blended = decode(s.prompt, s.space, config, backends);
  EXPECT_EQ(blended.tokens, (std::vector<TokenId>{s.q, s.b, s.b, s.b}));
  EXPECT_FALSE(blended.stopped);
  ASSERT_EQ(blended.trace.steps.size(), 4u);
  EXPECT_EQ(blended.trace.steps[1].model_argmax, s.a);
  EXPECT_EQ(blended.trace.steps[1].final_argmax, s.b);
  EXPECT_EQ(blended.trace.steps[0].context, "p");
  EXPECT_EQ(blended.trace.steps[1].context, "p q");
}

TEST(Decode, DeterministicAcrossRuns) {
  const auto f = make_fixture(9);
  const auto config = with_stop(f.backends);
  for (const auto& s : f.corpus) {
    const auto prompt = format_prompt(kQaPromptTemplate, s.question);
    const auto a = decode(prompt, f.space, config, f.backends);
    const auto b = decode(prompt, f.space, config, f.backends);
    ASSERT_EQ(a.tokens, b.tokens);
    ASSERT_EQ(a.trace.steps.size(), b.trace.steps.size());
    for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
      ASSERT_EQ(a.trace.steps[i].retrieval.indices, b.trace.steps[i].retrieval.indices);
      ASSERT_EQ(a.trace.steps[i].retrieval.weights, b.trace.steps[i].retrieval.weights);
    }
  }
}

TEST(Decode, EachStepMatchesStraightLineRecomputation) {
  const auto f = make_fixture(11);
  auto config = with_stop(f.backends);
  config.max_new_tokens = 20;
  std::vector<std::vector<float>> keys, logits;
  for (std::size_t i = 0; i < f.space.size(); ++i) {
    const auto e = f.space.entry(i);
    keys.emplace_back(e.embedding.data(), e.embedding.data() + e.embedding.size());
    logits.emplace_back(e.logits.data(), e.logits.data() + e.logits.size());
  }
  const auto prompt = format_prompt(kQaPromptTemplate, f.corpus[0].question);
  const auto out = decode(prompt, f.space, config, f.backends);
  std::vector<TokenId> history = f.backends.model->tokenize(prompt);
  for (const auto& step : out.trace.steps) {
    const std::size_t begin = history.size() > 8 ? history.size() - 8 : 0;
    std::string text;
    for (std::size_t i = begin; i < history.size(); ++i) {
      if (i > begin) text.push_back(' ');
      text += f.backends.model->detokenize(std::span<const TokenId>(&history[i], 1));
    }
    ASSERT_EQ(step.context, text);
    const auto query = f.backends.embedder->embed_one(text);
    const std::vector<float> q(query.data(), query.data() + query.size());
    const auto r = testing::oracle_retrieve(keys, logits, q, 10, 0.01);
    ASSERT_EQ(step.retrieval.indices, r.indices);
    ASSERT_EQ(step.retrieval.selected, r.selected);

    const auto model_logits = f.backends.model->next_logits(history);
    std::size_t best = 0;
    double best_value = -1e300;
    for (Eigen::Index v = 0; v < model_logits.size(); ++v) {
      const double blended = model_logits[v] + 0.5 * r.aggregated[static_cast<std::size_t>(v)];
      if (blended > best_value) {
        best_value = blended;
        best = static_cast<std::size_t>(v);
      }
    }
    ASSERT_EQ(static_cast<std::size_t>(step.token), best);
    history.push_back(step.token);
  }
}

TEST(Decode, OneForwardPassAndOneEmbeddingPerToken) {
  const auto f = make_fixture(5);
  auto model = std::make_shared<CountingModel>(f.backends.model);
  auto embedder = std::make_shared<CountingEmbedder>(f.backends.embedder);
  Backends counted{embedder, model};
  DecodeConfig config;
  config.max_new_tokens = 17;  // no stop tokens: runs to the limit
  const auto out = decode(format_prompt(kQaPromptTemplate, f.corpus[0].question), f.space, config, counted);
  EXPECT_EQ(out.tokens.size(), 17u);
  EXPECT_EQ(model->calls.load(), 17);
  EXPECT_EQ(embedder->calls.load(), 17);

  model->calls = 0;
  const auto greedy = decode_greedy(format_prompt(kQaPromptTemplate, f.corpus[0].question), config, *model);
  EXPECT_EQ(model->calls.load(), 17);
}

TEST(Decode, StopTokenEndsRunAndIsExcludedFromText) {
  const auto s = testing::make_flip_scenario();
  DecodeConfig config;
  config.stop_token_ids = {ToyLogitModel::kEos};
  const auto greedy = decode_greedy(s.prompt, config, *s.model);
  EXPECT_TRUE(greedy.stopped);
  EXPECT_EQ(greedy.tokens.back(), ToyLogitModel::kEos);
  EXPECT_EQ(greedy.text.find("<eos>"), std::string::npos);

  config.stop_token_ids = {s.a};
  const auto early = decode_greedy(s.prompt, config, *s.model);
  EXPECT_EQ(early.tokens, (std::vector<TokenId>{s.q, s.a}));
  EXPECT_EQ(early.text, "q");
}

TEST(Decode, MismatchedBackendsAreRejectedBeforeDecoding) {
  const auto f = make_fixture(6);
  const auto other = make_fixture(7);
  auto model = std::make_shared<CountingModel>(other.backends.model);
  Backends wrong_model{f.backends.embedder, model};
  EXPECT_THROW(decode("q", f.space, {}, wrong_model), DecodeError);
  EXPECT_EQ(model->calls.load(), 0);

  Backends wrong_embedder{std::make_shared<ToyEmbedder>(ToyEmbedderOptions{64, 3, 1}), f.backends.model};
  EXPECT_THROW(decode("q", f.space, {}, wrong_embedder), DecodeError);
  Backends missing{nullptr, f.backends.model};
  EXPECT_THROW(decode("q", f.space, {}, missing), DecodeError);
}

TEST(Decode, MidStreamFailureCarriesPartialTrace) {
  const auto f = make_fixture(8);
  auto model = std::make_shared<CountingModel>(f.backends.model, 3);
  Backends faulty{f.backends.embedder, model};
  DecodeConfig config;
  config.max_new_tokens = 10;
  try {
    decode(format_prompt(kQaPromptTemplate, f.corpus[0].question), f.space, config, faulty);
    FAIL() << "expected DecodeError";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.partial_trace().steps.size(), 3u);
    EXPECT_FALSE(e.partial_trace().prompt_tokens.empty());
    EXPECT_NE(std::string(e.what()).find("injected failure"), std::string::npos);
  }
}

TEST(Decode, EmptyPromptIsRejected) {
  const auto f = make_fixture(10);
  EXPECT_THROW(decode("   ", f.space, {}, f.backends), DecodeError);
  EXPECT_THROW(decode_greedy("", {}, *f.backends.model), DecodeError);
}

TEST(Decode, DegenerateSpaceStillDecodes) {
  // a single entry always wins retrieval with weight 1
  const auto s = testing::make_flip_scenario();
  Backends backends{s.embedder, s.model};
  DecodeConfig config;
  config.max_new_tokens = 3;
  config.top_n = 50;
  const auto out = decode(s.prompt, s.space, config, backends);
  for (const auto& step : out.trace.steps) {
    ASSERT_EQ(step.retrieval.indices, std::vector<std::size_t>{0});
    ASSERT_EQ(step.retrieval.weights[0], 1.0);
  }
}

TEST(Decode, ChunkSizeShapesTheContext) {
  const auto f = make_fixture(12);
  DecodeConfig config;
  config.max_new_tokens = 3;
  config.chunk_size = 2;
  const auto out = decode("Answer the following  question zzz with", f.space, config, f.backends);
  EXPECT_EQ(out.trace.steps[0].context, "<unk> with");
  config.chunk_size = 100;
  const auto wide = decode("Answer the following  question zzz with", f.space, config, f.backends);
  EXPECT_EQ(wide.trace.steps[0].context, "Answer the following question <unk> with");
}

}  // namespace
}  // namespace caad
