// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace arlab {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller broke a precondition: bad shape, out-of-range index, invalid enum.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

class CalibrationError : public Error {
 public:
  using Error::Error;
};

/// Training diverged. `diagnostics` carries the last step / loss context.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::string diagnostics)
      : Error(what), diagnostics_(std::move(diagnostics)) {}
  explicit TrainingError(const std::string& what) : Error(what) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

/// Checkpoint has the wrong magic bytes or is otherwise not one of ours.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedVersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Checkpoint ended early or carries inconsistent lengths.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Config text failed to parse. `field_path` points at the offending key.
class ParseError : public Error {
 public:
  ParseError(const std::string& field_path, const std::string& what)
      : Error(field_path.empty() ? what : field_path + ": " + what), field_path_(field_path) {}
  const std::string& field_path() const noexcept { return field_path_; }

 private:
  std::string field_path_;
};

/// Input data (CSV etc.) is empty or malformed.
class InputError : public Error {
 public:
  using Error::Error;
};

#define ARLAB_REQUIRE(cond, msg)                                       \
  do {                                                                 \
    if (!(cond)) throw ::arlab::ContractError(std::string(msg));       \
  } while (0)

}  // namespace arlab
