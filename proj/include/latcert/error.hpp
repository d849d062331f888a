#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace latcert {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Shape or architecture mismatch.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// Malformed or incompatible file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// API misuse such as replaying a consumed tape.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Unknown word or token id.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Invalid dataset contents (label out of range, empty example).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Infeasible or inconsistent configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A bound that must contain a point does not.
class SoundnessError : public Error {
 public:
  using Error::Error;
};

/// Failure while processing one example of a dataset-wide run.
class ExampleError : public Error {
 public:
  ExampleError(std::uint64_t example_id, const std::string& what)
      : Error("example " + std::to_string(example_id) + ": " + what), example_id_(example_id) {}

  [[nodiscard]] std::uint64_t example_id() const noexcept { return example_id_; }

 private:
  std::uint64_t example_id_;
};

}  // namespace latcert
