#pragma once

#include <optional>
#include <stdexcept>
#include <string>

namespace caad {

class BuildError : public std::runtime_error {
 public:
  explicit BuildError(const std::string& what, std::optional<std::size_t> sample = std::nullopt)
      : std::runtime_error(what), sample_index_(sample) {}

  /// Index of the corpus sample being processed when the failure happened, if any.
  std::optional<std::size_t> sample_index() const noexcept { return sample_index_; }

 private:
  std::optional<std::size_t> sample_index_;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RetrievalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class BackendError : public std::runtime_error {
 public:
  BackendError(const std::string& what, bool retryable) : std::runtime_error(what), retryable_(retryable) {}

  bool retryable() const noexcept { return retryable_; }

 private:
  bool retryable_;
};

}  // namespace caad
