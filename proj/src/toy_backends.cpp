#include "caad/toy_backends.hpp"

#include "caad/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

namespace caad {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t state = kFnvOffset) {
  for (unsigned char c : bytes) {
    state ^= c;
    state *= kFnvPrime;
  }
  return state;
}

std::uint64_t fnv1a_u64(std::uint64_t value, std::uint64_t state) {
  for (int i = 0; i < 8; ++i) {
    state ^= (value >> (8 * i)) & 0xFF;
    state *= kFnvPrime;
  }
  return state;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

}  // namespace

Eigen::VectorXf Embedder::embed_one(const std::string& text) const {
  auto out = embed(std::span<const std::string>(&text, 1));
  if (out.size() != 1) throw BackendError("embedder returned wrong number of vectors", false);
  return std::move(out.front());
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

// --- ToyEmbedder ------------------------------------------------------------

ToyEmbedder::ToyEmbedder(ToyEmbedderOptions options) : options_(options) {
  if (options_.dim < 1) throw BackendError("toy embedder dim must be positive", false);
  if (options_.ngram_order < 1) throw BackendError("toy embedder n-gram order must be positive", false);
  id_ = "toy-ngram-d" + std::to_string(options_.dim) + "-n" + std::to_string(options_.ngram_order) + "-s" +
        std::to_string(options_.seed);
}

Eigen::VectorXf ToyEmbedder::embed_text(std::string_view text) const {
  if (text.empty()) throw BackendError("toy embedder: empty text", false);
  const std::uint64_t basis = fnv1a_u64(options_.seed, kFnvOffset);
  const auto n = static_cast<std::size_t>(options_.ngram_order);
  const auto dim = static_cast<std::uint64_t>(options_.dim);

  std::vector<double> bag(static_cast<std::size_t>(dim), 0.0);
  if (text.size() <= n) {
    bag[fnv1a(text, basis) % dim] += 1.0;
  } else {
    for (std::size_t i = 0; i + n <= text.size(); ++i) bag[fnv1a(text.substr(i, n), basis) % dim] += 1.0;
  }
  double sq = 0.0;
  for (double v : bag) sq += v * v;
  const double norm = std::sqrt(sq);

  Eigen::VectorXf out(options_.dim);
  for (std::size_t i = 0; i < bag.size(); ++i) out[static_cast<Eigen::Index>(i)] = static_cast<float>(bag[i] / norm);
  return out;
}

std::vector<Eigen::VectorXf> ToyEmbedder::embed(std::span<const std::string> texts) const {
  std::vector<Eigen::VectorXf> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed_text(t));
  return out;
}

// --- ToyLogitModel ----------------------------------------------------------

ToyLogitModel ToyLogitModel::train(std::span<const std::string> texts, double smoothing) {
  if (!(smoothing > 0.0) || !std::isfinite(smoothing)) {
    throw BackendError("toy model smoothing must be positive and finite", false);
  }
  ToyLogitModel model;
  model.smoothing_ = smoothing;
  for (const char* special : {"<bos>", "<eos>", "<unk>"}) {
    model.lookup_.emplace(special, static_cast<TokenId>(model.vocab_.size()));
    model.vocab_.emplace_back(special);
  }

  std::vector<std::map<TokenId, std::int64_t>> counts(model.vocab_.size());
  for (const auto& text : texts) {
    TokenId prev = kBos;
    auto words = split_whitespace(text);
    for (std::size_t i = 0; i <= words.size(); ++i) {
      TokenId next = kEos;
      if (i < words.size()) {
        auto [it, inserted] = model.lookup_.emplace(words[i], static_cast<TokenId>(model.vocab_.size()));
        if (inserted) {
          model.vocab_.push_back(words[i]);
          counts.emplace_back();
        }
        next = it->second;
      }
      ++counts[static_cast<std::size_t>(prev)][next];
      prev = next;
    }
  }

  std::uint64_t h = fnv1a_u64(std::bit_cast<std::uint64_t>(smoothing), kFnvOffset);
  model.rows_.resize(model.vocab_.size());
  for (std::size_t prev = 0; prev < counts.size(); ++prev) {
    h = fnv1a(model.vocab_[prev], h);
    h = fnv1a_u64(0xFFFFFFFFFFFFFFFFULL, h);
    auto& row = model.rows_[prev];
    for (const auto& [next, c] : counts[prev]) {
      row.counts.emplace_back(next, c);
      row.total += c;
      h = fnv1a_u64(static_cast<std::uint64_t>(next), h);
      h = fnv1a_u64(static_cast<std::uint64_t>(c), h);
    }
  }
  model.id_ = "toy-bigram-v" + std::to_string(model.vocab_.size()) + "-" + hex64(h);
  return model;
}

std::vector<TokenId> ToyLogitModel::tokenize(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_whitespace(text)) {
    auto it = lookup_.find(w);
    ids.push_back(it == lookup_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string ToyLogitModel::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += token_text(ids[i]);
  }
  return out;
}

const std::string& ToyLogitModel::token_text(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
    throw BackendError("token id " + std::to_string(id) + " out of range", false);
  }
  return vocab_[static_cast<std::size_t>(id)];
}

std::int64_t ToyLogitModel::bigram_count(TokenId prev, TokenId next) const {
  token_text(prev);
  const auto& counts = rows_[static_cast<std::size_t>(prev)].counts;
  auto it = std::lower_bound(counts.begin(), counts.end(), next,
                             [](const auto& entry, TokenId key) { return entry.first < key; });
  return it != counts.end() && it->first == next ? it->second : 0;
}

Eigen::VectorXd ToyLogitModel::next_logits(std::span<const TokenId> ids) const {
  if (ids.empty()) throw BackendError("next_logits requires a non-empty prefix", false);
  for (TokenId id : ids) token_text(id);

  const auto& row = rows_[static_cast<std::size_t>(ids.back())];
  const double vocab = static_cast<double>(vocab_.size());
  const double log_total = std::log(static_cast<double>(row.total) + smoothing_ * vocab);
  Eigen::VectorXd logits = Eigen::VectorXd::Constant(vocab_size(), std::log(smoothing_) - log_total);
  for (const auto& [next, c] : row.counts) logits[next] = std::log(static_cast<double>(c) + smoothing_) - log_total;
  return logits;
}

}  // namespace caad
