#pragma once

#include <stdexcept>
#include <string>

namespace headscope {

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitIo = 3;
inline constexpr int kExitConsistency = 4;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return kExitValidation; }
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// A loss was requested over a region with no prediction targets.
class EmptyRegionError : public Error {
 public:
  using Error::Error;
};

// Malformed input file (wrong shape, truncated data, bad JSON).
class FormatError : public Error {
 public:
  using Error::Error;
};

class InvalidDistributionError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return kExitIo; }
};

class ConsistencyError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return kExitConsistency; }
};

class CompletenessError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

// A persisted artifact was produced from inputs that no longer match.
class StaleArtifactError : public ConsistencyError {
 public:
  using ConsistencyError::ConsistencyError;
};

}  // namespace headscope
