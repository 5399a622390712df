#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace qnet {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument: bad index, non-unitary matrix, mismatched spaces, ...
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Hilbert-space dimension cap exceeded.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Every POVM outcome has (numerically) zero probability.
class DegenerateMeasurementError : public Error {
 public:
  using Error::Error;
};

/// A protocol step was invoked on a node in the wrong state.
class ProtocolStateError : public Error {
 public:
  using Error::Error;
};

/// Integration step too coarse for the fastest rate in the problem.
class StabilityError : public Error {
 public:
  using Error::Error;
};

/// A density matrix failed positivity beyond the configured tolerance.
class StateValidityError : public Error {
 public:
  using Error::Error;
};

/// Heralding gave up after `trials()` attempts.
class TimeoutError : public Error {
 public:
  TimeoutError(const std::string& what, std::uint64_t trials)
      : Error(what), trials_(trials) {}
  std::uint64_t trials() const noexcept { return trials_; }

 private:
  std::uint64_t trials_;
};

/// A stored pair outlived the memory budget.
class MemoryExpiredError : public Error {
 public:
  MemoryExpiredError(const std::string& what, double stored_for)
      : Error(what), stored_for_(stored_for) {}
  double stored_for() const noexcept { return stored_for_; }

 private:
  double stored_for_;
};

/// Configuration problem. `path()` points at the offending field, e.g.
/// "links[1].attenuation".
class ConfigError : public Error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : Error(path.empty() ? what : path + ": " + what), path_(path) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace qnet
