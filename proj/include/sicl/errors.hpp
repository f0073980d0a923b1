#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sicl {

/// Bad caller input: shapes, ranges, empty collections.
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Non-finite values, singular matrices, failed numerical checks.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed weight files, dataset caches, CSV/JSON schema mismatches.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An online adaptation step produced a non-finite loss or gradient.
/// The model has been restored to its pre-step state when this is thrown.
class AdaptationError : public std::runtime_error {
 public:
  AdaptationError(std::size_t batch_index, const std::string& what)
      : std::runtime_error("batch " + std::to_string(batch_index) + ": " + what),
        batch_index_(batch_index) {}
  std::size_t batch_index() const noexcept { return batch_index_; }

 private:
  std::size_t batch_index_;
};

/// Source training diverged.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace sicl
