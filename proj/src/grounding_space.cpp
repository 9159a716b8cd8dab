#include "caad/grounding_space.hpp"

#include "caad/errors.hpp"
#include "caad/half.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace caad {

namespace {

bool all_finite(std::span<const float> values) {
  for (float v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

double l2_norm(std::span<const float> values) {
  double sum = 0.0;
  for (float v : values) {
    const double x = v;
    sum += x * x;
  }
  return std::sqrt(sum);
}

bool same_bytes(const RowMatrixXf& a, const RowMatrixXf& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return a.size() == 0 || std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

std::string_view to_string(LogitDtype dtype) {
  switch (dtype) {
    case LogitDtype::kFloat32:
      return "float32";
    case LogitDtype::kFloat16:
      return "float16";
  }
  return "unknown";
}

LogitDtype parse_logit_dtype(std::string_view text) {
  if (text == "float32" || text == "f32") return LogitDtype::kFloat32;
  if (text == "float16" || text == "f16") return LogitDtype::kFloat16;
  throw std::invalid_argument("unknown logit dtype: " + std::string(text));
}

void validate_metadata(const SpaceMetadata& meta) {
  if (meta.dim < 1) throw BuildError("embedding dimension must be positive");
  if (meta.vocab_size < 1) throw BuildError("vocabulary size must be positive");
  if (meta.chunk_size < 1) throw BuildError("chunk size must be positive");
  if (meta.embedder_id.empty()) throw BuildError("embedder_id must be non-empty");
  if (meta.model_id.empty()) throw BuildError("model_id must be non-empty");
}

GroundingSpace GroundingSpace::from_parts(SpaceMetadata meta, RowMatrixXf embeddings, RowMatrixXf logits,
                                          std::vector<std::int64_t> source_ids,
                                          std::vector<std::int64_t> step_indices) {
  validate_metadata(meta);
  const auto count = embeddings.rows();
  if (embeddings.cols() != meta.dim && count > 0) throw BuildError("embedding matrix width != dim");
  if (logits.cols() != meta.vocab_size && count > 0) throw BuildError("logit matrix width != vocab_size");
  if (logits.rows() != count) throw BuildError("embedding and logit row counts differ");
  if (static_cast<Eigen::Index>(source_ids.size()) != count ||
      static_cast<Eigen::Index>(step_indices.size()) != count) {
    throw BuildError("provenance length differs from entry count");
  }
  if (count == 0) {
    embeddings.resize(0, meta.dim);
    logits.resize(0, meta.vocab_size);
  }

  auto storage = std::make_shared<Storage>();
  storage->norms.resize(count);
  for (Eigen::Index row = 0; row < count; ++row) {
    std::span<const float> emb(embeddings.row(row).data(), static_cast<std::size_t>(meta.dim));
    std::span<const float> lg(logits.row(row).data(), static_cast<std::size_t>(meta.vocab_size));
    if (!all_finite(emb) || !all_finite(lg)) {
      throw BuildError("entry " + std::to_string(row) + " has a non-finite component");
    }
    if (meta.logit_dtype == LogitDtype::kFloat16) {
      for (float v : lg) {
        if (round_through_half(v) != v) {
          throw BuildError("entry " + std::to_string(row) + " logits not representable as float16");
        }
      }
    }
    storage->norms[row] = l2_norm(emb);
    if (storage->norms[row] == 0.0) {
      throw BuildError("entry " + std::to_string(row) + " has a zero embedding");
    }
  }
  storage->meta = std::move(meta);
  storage->embeddings = std::move(embeddings);
  storage->logits = std::move(logits);
  storage->source_ids = std::move(source_ids);
  storage->step_indices = std::move(step_indices);
  return GroundingSpace(std::move(storage));
}

GroundingEntry GroundingSpace::entry(std::size_t index) const {
  if (index >= size()) throw std::out_of_range("grounding entry index out of range");
  const auto row = static_cast<Eigen::Index>(index);
  return GroundingEntry{data_->embeddings.row(row).transpose(), data_->logits.row(row).transpose(),
                        data_->source_ids[index], data_->step_indices[index]};
}

bool operator==(const GroundingSpace& a, const GroundingSpace& b) {
  if (a.data_ == b.data_) return true;
  return a.metadata() == b.metadata() && same_bytes(a.embeddings(), b.embeddings()) &&
         same_bytes(a.logits(), b.logits()) && a.data_->source_ids == b.data_->source_ids &&
         a.data_->step_indices == b.data_->step_indices;
}

GroundingSpaceBuilder::GroundingSpaceBuilder(SpaceMetadata meta) : meta_(std::move(meta)) {
  validate_metadata(meta_);
}

GroundingSpaceBuilder& GroundingSpaceBuilder::append(const GroundingEntry& entry) {
  if (entry.embedding.size() != meta_.dim) {
    throw BuildError("embedding length " + std::to_string(entry.embedding.size()) + " != dim " +
                     std::to_string(meta_.dim));
  }
  if (entry.logits.size() != meta_.vocab_size) {
    throw BuildError("logits length " + std::to_string(entry.logits.size()) + " != vocab size " +
                     std::to_string(meta_.vocab_size));
  }
  std::span<const float> emb(entry.embedding.data(), static_cast<std::size_t>(entry.embedding.size()));
  std::span<const float> lg(entry.logits.data(), static_cast<std::size_t>(entry.logits.size()));
  if (!all_finite(emb) || !all_finite(lg)) throw BuildError("entry has a non-finite component");
  if (l2_norm(emb) == 0.0) throw BuildError("entry has a zero embedding");

  std::vector<float> stored(lg.begin(), lg.end());
  if (meta_.logit_dtype == LogitDtype::kFloat16) {
    for (float& v : stored) {
      v = round_through_half(v);
      if (!std::isfinite(v)) throw BuildError("logit overflows float16");
    }
  }

  embeddings_.insert(embeddings_.end(), emb.begin(), emb.end());
  logits_.insert(logits_.end(), stored.begin(), stored.end());
  source_ids_.push_back(entry.source_id);
  step_indices_.push_back(entry.step_index);
  return *this;
}

void GroundingSpaceBuilder::reserve(std::size_t entries) {
  embeddings_.reserve(entries * static_cast<std::size_t>(meta_.dim));
  logits_.reserve(entries * static_cast<std::size_t>(meta_.vocab_size));
  source_ids_.reserve(entries);
  step_indices_.reserve(entries);
}

GroundingSpace GroundingSpaceBuilder::seal() && {
  const auto rows = static_cast<Eigen::Index>(source_ids_.size());
  RowMatrixXf embeddings = Eigen::Map<const RowMatrixXf>(embeddings_.data(), rows, meta_.dim);
  RowMatrixXf logits = Eigen::Map<const RowMatrixXf>(logits_.data(), rows, meta_.vocab_size);
  embeddings_ = {};
  logits_ = {};
  return GroundingSpace::from_parts(std::move(meta_), std::move(embeddings), std::move(logits),
                                    std::move(source_ids_), std::move(step_indices_));
}

}  // namespace caad
