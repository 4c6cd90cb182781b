#pragma once

#include <stdexcept>
#include <string>

namespace pfvg {

/// Operand shapes are incompatible with an operation.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A scalar argument lies outside its admissible range.
class RangeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Violated calling contract (e.g. backward from a non-scalar root).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Bad or inconsistent configuration. `key()` names the offending key when
/// the error comes from a config file.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what, std::string key = {})
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Non-finite values appeared where finite ones are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Persisted artifact has an unknown format version or bad magic.
class VersionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed persisted data or I/O failure.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

} // namespace pfvg
