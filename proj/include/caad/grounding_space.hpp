#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace caad {

/// Row-major dense matrix; one row per grounding entry.
template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using RowMatrixXf = RowMatrix<float>;

enum class LogitDtype : std::uint8_t { kFloat32, kFloat16 };

std::string_view to_string(LogitDtype dtype);
/// Accepts "float32"/"f32" and "float16"/"f16"; throws std::invalid_argument otherwise.
LogitDtype parse_logit_dtype(std::string_view text);

/// One (context embedding, next-token logits) pair.
struct GroundingEntry {
  Eigen::VectorXf embedding;
  Eigen::VectorXf logits;
  std::int64_t source_id = 0;
  std::int64_t step_index = 0;
};

struct SpaceMetadata {
  std::int64_t dim = 0;
  std::int64_t vocab_size = 0;
  std::int64_t chunk_size = 0;
  std::string embedder_id;
  std::string model_id;
  LogitDtype logit_dtype = LogitDtype::kFloat32;

  friend bool operator==(const SpaceMetadata&, const SpaceMetadata&) = default;
};

/// Throws BuildError unless dims are positive and both ids are non-empty.
void validate_metadata(const SpaceMetadata& meta);

/// Sealed, immutable grounding space. Copies share storage; safe for concurrent readers.
class GroundingSpace {
 public:
  /// Validates every entry against `meta` and seals. Throws BuildError on violation.
  /// `embeddings` is size x dim, `logits` is size x vocab_size. float16 spaces must hold
  /// logits that are already exactly representable in binary16.
  static GroundingSpace from_parts(SpaceMetadata meta, RowMatrixXf embeddings, RowMatrixXf logits,
                                   std::vector<std::int64_t> source_ids,
                                   std::vector<std::int64_t> step_indices);

  const SpaceMetadata& metadata() const noexcept { return data_->meta; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(data_->embeddings.rows()); }
  bool empty() const noexcept { return size() == 0; }
  std::int64_t dim() const noexcept { return data_->meta.dim; }
  std::int64_t vocab_size() const noexcept { return data_->meta.vocab_size; }

  const RowMatrixXf& embeddings() const noexcept { return data_->embeddings; }
  const RowMatrixXf& logits() const noexcept { return data_->logits; }
  /// L2 norms of the embedding rows, accumulated in double.
  const Eigen::VectorXd& embedding_norms() const noexcept { return data_->norms; }
  std::span<const std::int64_t> source_ids() const noexcept { return data_->source_ids; }
  std::span<const std::int64_t> step_indices() const noexcept { return data_->step_indices; }

  GroundingEntry entry(std::size_t index) const;

  /// Field-wise and bit-wise equality of every entry.
  friend bool operator==(const GroundingSpace& a, const GroundingSpace& b);

 private:
  struct Storage {
    SpaceMetadata meta;
    RowMatrixXf embeddings;
    RowMatrixXf logits;
    Eigen::VectorXd norms;
    std::vector<std::int64_t> source_ids;
    std::vector<std::int64_t> step_indices;
  };

  explicit GroundingSpace(std::shared_ptr<const Storage> data) : data_(std::move(data)) {}

  std::shared_ptr<const Storage> data_;
};

/// Single-owner accumulator for a grounding space.
class GroundingSpaceBuilder {
 public:
  explicit GroundingSpaceBuilder(SpaceMetadata meta);

  /// Appends in insertion order. For float16 spaces the logits are rounded through binary16.
  /// Throws BuildError on dimension mismatch, non-finite components or a zero embedding.
  GroundingSpaceBuilder& append(const GroundingEntry& entry);
  void reserve(std::size_t entries);

  std::size_t size() const noexcept { return source_ids_.size(); }
  const SpaceMetadata& metadata() const noexcept { return meta_; }

  GroundingSpace seal() &&;

 private:
  SpaceMetadata meta_;
  std::vector<float> embeddings_;
  std::vector<float> logits_;
  std::vector<std::int64_t> source_ids_;
  std::vector<std::int64_t> step_indices_;
};

}  // namespace caad
