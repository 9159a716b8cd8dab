#pragma once

#include "caad/errors.hpp"
#include "caad/grounding_space.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace caad {

/// Intermediates of one retrieval + aggregation pass.
struct RetrievalResult {
  std::vector<std::size_t> indices;  // grounding entry index per rank, best first
  Eigen::VectorXd similarities;      // non-increasing
  Eigen::VectorXd weights;           // softmax over `similarities`
  std::vector<std::size_t> selected; // ranks (positions into `indices`) surviving the threshold, ascending
  Eigen::VectorXd aggregated_logits;
};

namespace detail {

inline double clamp_unit(double x) { return std::clamp(x, -1.0, 1.0); }

template <typename Derived>
double checked_norm(const Eigen::MatrixBase<Derived>& v) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double x = static_cast<double>(v(i));
    if (!std::isfinite(x)) throw RetrievalError("non-finite vector component");
    sq += x * x;
  }
  if (sq == 0.0) throw RetrievalError("cosine similarity undefined for a zero vector");
  return std::sqrt(sq);
}

/// Sequential double-precision dot product over the first `n` scalars.
template <typename ScalarA, typename ScalarB>
double dot(const ScalarA* a, const ScalarB* b, Eigen::Index n) {
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return sum;
}

}  // namespace detail

/// (a . b) / (|a| |b|), accumulated in double in index order and clamped to [-1, 1].
/// Throws RetrievalError for mismatched lengths or a zero-norm input.
template <typename DerivedA, typename DerivedB>
double cosine(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  if (a.size() != b.size()) throw RetrievalError("cosine: length mismatch");
  const double norm_a = detail::checked_norm(a);
  const double norm_b = detail::checked_norm(b);
  double dot = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) dot += static_cast<double>(a(i)) * static_cast<double>(b(i));
  return detail::clamp_unit(dot / (norm_a * norm_b));
}

struct TopN {
  std::vector<std::size_t> indices;
  Eigen::VectorXd similarities;
};

/// Exact top-`n` rows of `keys` by cosine similarity to `query`, similarity descending with ties
/// broken by lower row index. `key_norms` holds the double-precision L2 norm of each row.
template <typename Scalar, typename Derived>
TopN top_n(const RowMatrix<Scalar>& keys, const Eigen::VectorXd& key_norms, const Eigen::MatrixBase<Derived>& query,
           std::size_t n) {
  if (keys.rows() == 0) throw RetrievalError("retrieval over an empty grounding space");
  if (n < 1) throw RetrievalError("top_n requires N >= 1");
  if (query.size() != keys.cols()) throw RetrievalError("query length does not match embedding dimension");

  const Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1> q = query;
  const double query_norm = detail::checked_norm(q);
  const Eigen::Index dim = keys.cols();

  struct Hit {
    double sim;
    std::size_t index;
  };
  std::vector<Hit> hits(static_cast<std::size_t>(keys.rows()));
  for (Eigen::Index row = 0; row < keys.rows(); ++row) {
    const double d = detail::dot(q.data(), keys.data() + row * dim, dim);
    hits[static_cast<std::size_t>(row)] = {detail::clamp_unit(d / (query_norm * key_norms[row])),
                                           static_cast<std::size_t>(row)};
  }

  const auto better = [](const Hit& x, const Hit& y) { return x.sim > y.sim || (x.sim == y.sim && x.index < y.index); };
  const std::size_t k = std::min(n, hits.size());
  std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(k), hits.end(), better);

  TopN out;
  out.indices.resize(k);
  out.similarities.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    out.indices[i] = hits[i].index;
    out.similarities[static_cast<Eigen::Index>(i)] = hits[i].sim;
  }
  return out;
}

template <typename Derived>
TopN top_n(const GroundingSpace& space, const Eigen::MatrixBase<Derived>& query, std::size_t n) {
  return top_n(space.embeddings(), space.embedding_norms(), query, n);
}

/// w_n = exp(s_n) / sum_j exp(s_j), evaluated with a max shift.
template <typename Derived>
Eigen::VectorXd softmax_weights(const Eigen::MatrixBase<Derived>& similarities) {
  if (similarities.size() == 0) throw RetrievalError("softmax over an empty list");
  Eigen::VectorXd s = similarities.template cast<double>();
  if (!s.allFinite()) throw RetrievalError("softmax over non-finite similarities");
  const double shift = s.maxCoeff();
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    s[i] = std::exp(s[i] - shift);
    total += s[i];
  }
  return s / total;
}

/// Ranks n with w_n >= gamma (inclusive). When none survive, the single best-weighted rank
/// (lowest on ties) is kept so the result is never empty.
template <typename Derived>
std::vector<std::size_t> threshold_filter(const Eigen::MatrixBase<Derived>& weights, double gamma) {
  if (weights.size() == 0) throw RetrievalError("threshold over an empty weight list");
  std::vector<std::size_t> selected;
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (weights(i) >= gamma) selected.push_back(static_cast<std::size_t>(i));
  }
  if (selected.empty()) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < weights.size(); ++i) {
      if (weights(i) > weights(best)) best = i;
    }
    selected.push_back(static_cast<std::size_t>(best));
  }
  return selected;
}

/// sum over selected ranks of (w_n / sum_{m in S} w_m) * logits.row(indices[n]), in double.
template <typename Scalar, typename Derived>
Eigen::VectorXd aggregate_logits(const RowMatrix<Scalar>& logits, const std::vector<std::size_t>& indices,
                                 const Eigen::MatrixBase<Derived>& weights, const std::vector<std::size_t>& selected) {
  if (selected.empty()) throw RetrievalError("aggregation over an empty selection");
  double mass = 0.0;
  for (std::size_t n : selected) {
    if (n >= indices.size() || static_cast<Eigen::Index>(n) >= weights.size()) {
      throw RetrievalError("selected rank outside the retrieved list");
    }
    mass += static_cast<double>(weights(static_cast<Eigen::Index>(n)));
  }
  if (!(mass > 0.0)) throw RetrievalError("selected weights sum to zero");

  Eigen::VectorXd agg = Eigen::VectorXd::Zero(logits.cols());
  for (std::size_t n : selected) {
    const double w = static_cast<double>(weights(static_cast<Eigen::Index>(n))) / mass;
    agg += w * logits.row(static_cast<Eigen::Index>(indices[n])).transpose().template cast<double>();
  }
  return agg;
}

template <typename Derived>
Eigen::VectorXd aggregate_logits(const GroundingSpace& space, const std::vector<std::size_t>& indices,
                                 const Eigen::MatrixBase<Derived>& weights, const std::vector<std::size_t>& selected) {
  return aggregate_logits(space.logits(), indices, weights, selected);
}

/// top_n -> softmax_weights -> threshold_filter -> aggregate_logits, keeping every intermediate.
template <typename Derived>
RetrievalResult retrieve_and_aggregate(const GroundingSpace& space, const Eigen::MatrixBase<Derived>& query,
                                       std::size_t n, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw RetrievalError("gamma must lie in [0, 1)");
  RetrievalResult result;
  auto hits = top_n(space, query, n);
  result.indices = std::move(hits.indices);
  result.similarities = std::move(hits.similarities);
  result.weights = softmax_weights(result.similarities);
  result.selected = threshold_filter(result.weights, gamma);
  result.aggregated_logits = aggregate_logits(space, result.indices, result.weights, result.selected);
  return result;
}

}  // namespace caad
